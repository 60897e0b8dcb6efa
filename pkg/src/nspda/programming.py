"""Compile PDA knowledge into network weights.

The read vector cannot show ⊥ (an empty stack reads all-low), and ternary
action weights multiplied by near-zero reads cannot drive a push.  The
compiler therefore keeps one *marker* symbol m permanently on the network
stack:

* the start state's moves push m on the first token (helped by a bias
  ``b_a[m] = MARKER_BIAS`` that makes "push m" the default action);
* every other move adds ``W_a[m] = -1`` to cancel that default, except moves
  that push m themselves;
* a PDA pop of m cancels the default and nets to a no-op, so m stays below
  everything and the network stack equals ``[⊥, m, ...]`` + the PDA stack
  above the point where m was popped.

A ⊥-conditioned move is programmed at m's read index.  Its target neurons
("entry" neurons) get a tiny negative bias, so they fire even on the
all-low read of the true ⊥ at step one.  Targets of ordinary moves get bias
-0.5 so that only a high read (the true top) fires them.  The PDA must be in
a normal form that makes this sound; :func:`check_normal_form` enforces it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import CapacityError, ProgrammingError
from .grammars import BOTTOM, Alphabet, PdaSpec, Transition, accepting_derivation, as_tokens
from .model import ModelParams

H_DEFAULT = 6.0
THETA_DEFAULT = 6.0
MARKER_BIAS = 1.0
ENTRY_BIAS = -5e-5
CONDITIONED_BIAS = -0.5
SECOND_ORDER_BIAS = -1.5

HINT_LEVELS = ("none", "hint1", "hint2", "full")


@dataclass(frozen=True)
class StateAssignment:
    """PDA state -> neuron index (several neurons per state when states are split)."""

    neurons: dict[str, tuple[int, ...]]
    J: int
    alphabet: Alphabet
    start: str

    def __getitem__(self, state: str) -> int:
        try:
            return self.neurons[state][0]
        except KeyError:
            raise ProgrammingError(f"state {state!r} is not assigned") from None

    def all_neurons(self, state: str) -> tuple[int, ...]:
        if state not in self.neurons:
            raise ProgrammingError(f"state {state!r} is not assigned")
        return self.neurons[state]

    @property
    def start_neuron(self) -> int:
        return self[self.start]

    def assigned(self) -> set[int]:
        return {n for ns in self.neurons.values() for n in ns}


def assign_states(pda: PdaSpec, J: int) -> StateAssignment:
    """State with ordinal m (in Q's declared order) -> neuron m; surplus neurons stay free."""
    if J <= pda.M:
        raise CapacityError(f"need J > M = {pda.M}, got J = {J}")
    return StateAssignment({q: (i,) for i, q in enumerate(pda.states)}, J, pda.alphabet, pda.start_state)


def find_marker(pda: PdaSpec) -> str:
    syms = set()
    for t in pda.transitions_from(pda.start_state):
        op, c = t.operation
        if t.top != pda.bottom or op != "push":
            raise ProgrammingError("start-state moves must read ⊥ and push the marker")
        syms.add(c)
    if len(syms) != 1:
        raise ProgrammingError(f"start state must push exactly one marker symbol, found {sorted(syms)}")
    return syms.pop()


def check_normal_form(pda: PdaSpec) -> str:
    """Validate the compiler's normal form and return the marker symbol."""
    if not pda.is_deterministic:
        raise ProgrammingError(f"{pda.name}: only deterministic PDAs without epsilon moves compile")
    for t in pda.transitions:
        if t.operation[0] == "other":
            raise ProgrammingError(f"{t}: moves must push one symbol, pop, or do nothing")
    marker = find_marker(pda)
    if any(t.target == pda.start_state for t in pda.transitions):
        raise ProgrammingError("the start state must not be re-entered")
    for q in pda.states:
        kinds = {t.top == pda.bottom for t in pda.transitions_from(q)}
        if len(kinds) > 1:
            raise ProgrammingError(f"state {q!r} mixes ⊥ and non-⊥ moves")
    for t in pda.transitions:
        if t.top != pda.bottom and t.operation == ("push", marker):
            raise ProgrammingError(f"{t}: the marker may only be pushed on ⊥")
    entry = {t.target for t in pda.transitions if t.top == pda.bottom}
    cond = {t.target for t in pda.transitions if t.top != pda.bottom}
    if entry & cond:
        raise ProgrammingError(f"states {sorted(entry & cond)} are entered both on ⊥ and on a symbol")
    return marker


def _read_index(pda: PdaSpec, t: Transition, marker: str | None) -> int:
    top = t.top
    if top == pda.bottom:
        if marker is None:
            raise ProgrammingError("⊥-conditioned moves need a marker symbol")
        top = marker
    return pda.alphabet.index(top)


def program_transition(params: ModelParams, assignment: StateAssignment, transition: Transition,
                       strength: float = H_DEFAULT, *, marker: str | None = None,
                       targets: Sequence[int] | None = None, sources: Sequence[int] | None = None,
                       pda: PdaSpec | None = None) -> ModelParams:
    """Write one move into the tensors (in place; the params are also returned).

    W_s gets +H from source to target and -H on the source's self entry; W_a
    gets +1 on the pushed symbol or -1 on the popped one.  With a marker, the
    marker's default push is cancelled as described in the module docstring.
    """
    op, sym = transition.operation
    if op == "other":
        raise ProgrammingError(f"{transition}: unsupported stack operation")
    alphabet = assignment.alphabet
    bottom = pda.bottom if pda is not None else BOTTOM
    top = transition.top
    if top == bottom:
        if marker is None:
            raise ProgrammingError("⊥-conditioned moves need a marker symbol")
        top = marker
    k = alphabet.index(top)
    l = alphabet.index(transition.symbol)
    srcs = tuple(sources) if sources is not None else (assignment[transition.source],)
    dsts = tuple(targets) if targets is not None else (assignment[transition.target],)
    L = params.L
    m = alphabet.index(marker) if marker is not None else None
    for j in srcs:
        if params.order == "third":
            for i in dsts:
                params.W_s[i, j, k, l] = strength
            if j not in dsts:
                params.W_s[j, j, k, l] = -strength
            wa = params.W_a[:, j, k, l]
        else:
            for i in dsts:
                if transition.top != bottom:
                    params.W_s[i, j, k] = strength
                params.W_s[i, j, L + l] = strength
            wa = params.W_a[:, j, L + l]
        wa[:] = 0.0
        if op == "push":
            c = alphabet.index(sym)
            wa[c] = 1.0
            if m is not None and c != m:
                wa[m] = -1.0
        elif op == "pop":
            c = alphabet.index(sym)
            wa[c] = -1.0
            if m is not None:
                wa[m] = -1.0
        elif m is not None:
            wa[m] = -1.0
    return params


def program_acceptance(params: ModelParams, assignment: StateAssignment, accepting: Iterable[str],
                       strength: float = THETA_DEFAULT) -> ModelParams:
    accepting = set(accepting)
    params.W_o[:] = 0.0
    for q, ns in assignment.neurons.items():
        for n in ns:
            params.W_o[n] = strength if q in accepting else -strength
    params.b_o = -strength / 2.0
    return params


def _split_assignment(pda: PdaSpec, J: int) -> tuple[StateAssignment, dict]:
    """Second order: one neuron per (accepting state, read index) entering it."""
    neurons = {q: [i] for i, q in enumerate(pda.states)}
    nxt = pda.M
    split: dict[tuple[str, str], int] = {}
    for t in pda.transitions:
        if t.target in pda.accepting and (t.target, t.top) not in split:
            split[(t.target, t.top)] = nxt
            nxt += 1
    for (q, _), n in split.items():
        neurons[q].append(n)
    if J <= nxt - 1 or J < nxt:
        raise CapacityError(f"second-order split construction needs J >= {nxt}, got {J}")
    return StateAssignment({q: tuple(v) for q, v in neurons.items()}, J, pda.alphabet, pda.start_state), split


def _program_transitions(params: ModelParams, pda: PdaSpec, transitions: Iterable[Transition],
                         assignment: StateAssignment, marker: str, strength: float,
                         split: dict | None = None) -> None:
    m = pda.alphabet.index(marker)
    params.b_a[m] = MARKER_BIAS
    for t in transitions:
        sources = assignment.all_neurons(t.source)
        if split is not None and (t.target, t.top) in split:
            targets = (split[(t.target, t.top)],)
        else:
            targets = (assignment[t.target],)
        program_transition(params, assignment, t, strength, marker=marker, targets=targets,
                           sources=sources, pda=pda)
        for i in targets:
            if params.order == "third":
                params.b_s[i] = ENTRY_BIAS if t.top == pda.bottom else CONDITIONED_BIAS
            else:
                params.b_s[i] = CONDITIONED_BIAS if t.top == pda.bottom else SECOND_ORDER_BIAS


def _zero_params(order: str, J: int, L: int) -> ModelParams:
    tail = (L, L) if order == "third" else (2 * L,)
    return ModelParams(order, J, L, np.zeros((J, J, *tail)), np.zeros((L, J, *tail)), np.zeros(J),
                       np.zeros(L), np.zeros(J), 0.0)


def program_full(pda: PdaSpec, order: str, J: int, H: float = H_DEFAULT,
                 theta: float = THETA_DEFAULT) -> ModelParams:
    """Zero tensors with every move and the acceptance readout programmed.

    Third order reproduces the PDA exactly.  Second order uses the
    split-accepting-state construction and is a best-effort approximation:
    an additive (r ‖ x) contraction cannot express every (top, input) pair.
    """
    marker = check_normal_form(pda)
    if order == "third":
        assignment, split = assign_states(pda, J), None
    else:
        if J <= pda.M:
            raise CapacityError(f"need J > M = {pda.M}, got J = {J}")
        assignment, split = _split_assignment(pda, J)
    params = _zero_params(order, J, pda.L)
    _program_transitions(params, pda, pda.transitions, assignment, marker, H, split)
    program_acceptance(params, assignment, pda.accepting, theta)
    params.start = assignment.start_neuron
    params.metadata.update({"hint_level": "full", "grammar": pda.name, "kind": "nspda",
                            "alphabet": list(pda.alphabet.symbols), "marker": marker,
                            "split_accepting": split is not None})
    return params


def hinted_transitions(pda: PdaSpec, level: str) -> frozenset[Transition]:
    if level not in HINT_LEVELS:
        raise ProgrammingError(f"hint level must be one of {HINT_LEVELS}")
    if level in ("none", "hint1"):
        return frozenset()
    if level == "hint2":
        return frozenset(pda.transitions_from(pda.start_state))
    return frozenset(pda.transitions)


def insert_hints(params: ModelParams, pda: PdaSpec, level: str, H: float = H_DEFAULT,
                 theta: float = THETA_DEFAULT) -> ModelParams:
    """Overwrite the hinted entries of a (typically random) model; returns a copy.

    hint1 programs the acceptance readout; hint2 adds the start state's moves
    (with the marker bias and the target biases they rely on); full adds every
    move.  Nothing is frozen: the programmed values are ordinary parameters.
    """
    if level not in HINT_LEVELS:
        raise ProgrammingError(f"hint level must be one of {HINT_LEVELS}")
    out = params.copy()
    out.metadata["hint_level"] = level
    if level == "none":
        return out
    assignment = assign_states(pda, params.J)
    program_acceptance(out, assignment, pda.accepting, theta)
    out.start = assignment.start_neuron
    moves = hinted_transitions(pda, level)
    if moves:
        marker = check_normal_form(pda)
        ordered = [t for t in pda.transitions if t in moves]
        _program_transitions(out, pda, ordered, assignment, marker, H)
    return out


def hint_mask(pda: PdaSpec, hinted: Iterable[Transition], tokens: Sequence[str],
              derivation: Sequence[Transition] | None = None) -> np.ndarray:
    """h_t = 1 iff the move used on token t is hinted.

    Deterministic PDAs are simulated directly.  For nondeterministic ones the
    given derivation (or, failing that, an accepting derivation found by
    search) supplies the moves.  Once no move applies, the rest is 0.
    """
    tokens = as_tokens(tokens)
    hinted = frozenset(hinted)
    H = np.zeros(len(tokens), dtype=np.int64)
    if not hinted:
        return H
    if not pda.is_deterministic:
        if derivation is None:
            derivation = accepting_derivation(pda, tokens)
        if derivation is not None:
            reading = [t for t in derivation if t.symbol is not None]
            for i, t in enumerate(reading[: len(tokens)]):
                H[i] = int(t in hinted)
            return H
    state, stack = pda.start_state, [pda.bottom]
    for i, tok in enumerate(tokens):
        moves = [t for t in pda.moves(state, tok, stack[-1])]
        if not moves:
            break
        t = moves[0]
        H[i] = int(t in hinted)
        stack.pop()
        stack.extend(t.replace)
        state = t.target
    return H


def tensor_census(params: ModelParams) -> dict[str, dict[int, int]]:
    """Counts of each discrete value in the quantized W_s and W_a."""
    from .model import quantize_weights

    q = quantize_weights(params)
    out = {}
    for name in ("W_s", "W_a"):
        vals, counts = np.unique(getattr(q, name), return_counts=True)
        out[name] = {int(v): int(c) for v, c in zip(vals, counts)}
    return out
