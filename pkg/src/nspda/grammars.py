"""Pushdown automata, the benchmark grammars, membership oracles and datasets.

Two independent oracles decide membership: :func:`pda_accepts` runs the
automaton, :func:`closed_form_member` uses plain string predicates.  Datasets
are sampled by random derivations of the automaton, guided by a feasibility
table so that a walk only takes moves from which the target length can still
be completed.
"""

from __future__ import annotations

import functools
import itertools
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .exceptions import GenerationExhaustedError, GrammarNotFoundError, InputError

logger = logging.getLogger(__name__)

BOTTOM = "⊥"

Tokens = tuple[str, ...]


def as_tokens(seq: str | Iterable[str]) -> Tokens:
    """Turn a string (one character per token) or an iterable of tokens into a tuple."""
    if isinstance(seq, str):
        return tuple(seq)
    return tuple(seq)


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if len(self.symbols) < 2:
            raise InputError("an alphabet needs at least two symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise InputError(f"duplicate symbols in alphabet {self.symbols}")
        if BOTTOM in self.symbols:
            raise InputError("the bottom marker cannot be an input symbol")
        for s in self.symbols:
            if not s or any(c.isspace() for c in s):
                raise InputError(f"symbol {s!r} is empty or contains whitespace")

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: object) -> bool:
        return symbol in self.symbols

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise InputError(f"token {symbol!r} is not in alphabet {self.symbols}") from None

    def encode(self, tokens: str | Iterable[str]) -> np.ndarray:
        """Token indices as an int64 array."""
        lookup = {s: i for i, s in enumerate(self.symbols)}
        out = []
        for t in as_tokens(tokens):
            if t not in lookup:
                raise InputError(f"token {t!r} is not in alphabet {self.symbols}")
            out.append(lookup[t])
        return np.asarray(out, dtype=np.int64)

    def one_hot(self, symbol: str) -> np.ndarray:
        x = np.zeros(len(self.symbols))
        x[self.index(symbol)] = 1.0
        return x


@dataclass(frozen=True)
class Transition:
    """One move of a PDA.

    ``symbol`` is None for an epsilon move.  ``replace`` is the string (bottom
    to top) that replaces the popped top symbol; a move reading ⊥ must keep ⊥
    as the first element of ``replace``.
    """

    source: str
    symbol: str | None
    top: str
    target: str
    replace: tuple[str, ...]

    @property
    def operation(self) -> tuple[str, str | None]:
        """Classify the move as ('push', c), ('pop', top), ('noop', None) or ('other', None)."""
        if self.top == BOTTOM:
            above = self.replace[1:]
            if len(above) == 0:
                return ("noop", None)
            if len(above) == 1:
                return ("push", above[0])
            return ("other", None)
        if len(self.replace) == 0:
            return ("pop", self.top)
        if self.replace == (self.top,):
            return ("noop", None)
        if len(self.replace) == 2 and self.replace[0] == self.top:
            return ("push", self.replace[1])
        return ("other", None)


def push(source: str, symbol: str | None, top: str, target: str, c: str) -> Transition:
    return Transition(source, symbol, top, target, (top, c))


def pop(source: str, symbol: str | None, top: str, target: str) -> Transition:
    if top == BOTTOM:
        raise InputError("⊥ cannot be popped")
    return Transition(source, symbol, top, target, ())


def noop(source: str, symbol: str | None, top: str, target: str) -> Transition:
    return Transition(source, symbol, top, target, (top,))


@dataclass(frozen=True)
class PdaSpec:
    name: str
    states: tuple[str, ...]
    alphabet: Alphabet
    stack_alphabet: tuple[str, ...]
    transitions: tuple[Transition, ...]
    start_state: str
    accepting: frozenset[str]
    bottom: str = BOTTOM
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "stack_alphabet", tuple(self.stack_alphabet))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "accepting", frozenset(self.accepting))
        if len(set(self.states)) != len(self.states):
            raise InputError("duplicate PDA states")
        if self.start_state not in self.states:
            raise InputError(f"start state {self.start_state!r} not in Q")
        if not self.accepting <= set(self.states):
            raise InputError("accepting states must be a subset of Q")
        if self.bottom not in self.stack_alphabet:
            raise InputError("⊥ must belong to the stack alphabet")
        gamma = set(self.stack_alphabet)
        index: dict[tuple[str, str | None, str], list[Transition]] = {}
        for t in self.transitions:
            if t.source not in self.states or t.target not in self.states:
                raise InputError(f"transition {t} leaves Q")
            if t.symbol is not None and t.symbol not in self.alphabet:
                raise InputError(f"transition {t} reads a symbol outside Σ")
            if t.top not in gamma or not set(t.replace) <= gamma:
                raise InputError(f"transition {t} uses symbols outside Γ")
            if t.top == self.bottom:
                if not t.replace or t.replace[0] != self.bottom or self.bottom in t.replace[1:]:
                    raise InputError(f"transition {t} must keep ⊥ at the bottom")
            elif self.bottom in t.replace:
                raise InputError(f"transition {t} pushes ⊥")
            index.setdefault((t.source, t.symbol, t.top), []).append(t)
        object.__setattr__(self, "_index", {k: tuple(v) for k, v in index.items()})

    @property
    def M(self) -> int:
        return len(self.states)

    @property
    def L(self) -> int:
        return len(self.alphabet)

    def moves(self, state: str, symbol: str | None, top: str) -> tuple[Transition, ...]:
        return self._index.get((state, symbol, top), ())

    @property
    def is_deterministic(self) -> bool:
        if any(t.symbol is None for t in self.transitions):
            return False
        return all(len(v) == 1 for v in self._index.values())

    def transitions_from(self, state: str) -> tuple[Transition, ...]:
        return tuple(t for t in self.transitions if t.source == state)


# ---------------------------------------------------------------------------
# builtin grammars
#
# Every builtin except ``palindrome_even`` is written in the normal form the
# weight compiler needs: deterministic, one push/pop/no-op per move, and the
# start state pushes a single "marker" symbol on the first token.  Acceptance
# is "accepting state and stack = [⊥]".


def _anbn() -> PdaSpec:
    # marker b: it sits below the a-block and is popped by the last b
    T = [
        push("q0", "a", BOTTOM, "first", "b"),
        push("first", "a", "b", "count", "a"),
        pop("first", "b", "b", "accept"),
        push("count", "a", "a", "count", "a"),
        pop("count", "b", "a", "match"),
        pop("match", "b", "a", "match"),
        pop("match", "b", "b", "accept"),
    ]
    return PdaSpec("anbn", ("q0", "first", "count", "match", "accept"), Alphabet(("a", "b")),
                   (BOTTOM, "a", "b"), T, "q0", {"accept"})


def _anbncbmam() -> PdaSpec:
    # marker c; the second half reuses 'a' as its own bottom marker
    T = [
        push("q0", "a", BOTTOM, "first", "c"),
        push("first", "a", "c", "count", "a"),
        pop("first", "b", "c", "middle"),
        push("count", "a", "a", "count", "a"),
        pop("count", "b", "a", "match"),
        pop("match", "b", "a", "match"),
        pop("match", "b", "c", "middle"),
        noop("middle", "c", BOTTOM, "separator"),
        push("separator", "b", BOTTOM, "second", "a"),
        push("second", "b", "a", "count2", "b"),
        pop("second", "a", "a", "accept"),
        push("count2", "b", "b", "count2", "b"),
        pop("count2", "a", "b", "match2"),
        pop("match2", "a", "b", "match2"),
        pop("match2", "a", "a", "accept"),
    ]
    states = ("q0", "first", "count", "match", "middle", "separator", "second", "count2",
              "match2", "accept")
    return PdaSpec("anbncbmam", states, Alphabet(("a", "b", "c")), (BOTTOM, "a", "b", "c"),
                   T, "q0", {"accept"})


def _anmbncm() -> PdaSpec:
    # marker c below the a-block; b's and then c's pop one a each, the last c pops the marker
    T = [
        push("q0", "a", BOTTOM, "first", "c"),
        push("first", "a", "c", "count", "a"),
        push("count", "a", "a", "count", "a"),
        pop("count", "b", "a", "bees"),
        pop("bees", "b", "a", "bees"),
        pop("bees", "c", "a", "cees"),
        pop("bees", "c", "c", "accept"),
        pop("cees", "c", "a", "cees"),
        pop("cees", "c", "c", "accept"),
    ]
    return PdaSpec("anmbncm", ("q0", "first", "count", "bees", "cees", "accept"),
                   Alphabet(("a", "b", "c")), (BOTTOM, "a", "b", "c"), T, "q0", {"accept"})


def _palindrome() -> PdaSpec:
    # w c w^R with w over {a,b}; the first letter of w is remembered in the state
    # (families x = a, b) because the marker c replaces it on the stack
    T: list[Transition] = []
    for x in ("a", "b"):
        T.append(push("q0", x, BOTTOM, f"first_{x}", "c"))
        T.append(push(f"first_{x}", "a", "c", f"read_{x}", "a"))
        T.append(push(f"first_{x}", "b", "c", f"read_{x}", "b"))
        T.append(noop(f"first_{x}", "c", "c", f"mirror_{x}"))
        for top in ("a", "b"):
            T.append(push(f"read_{x}", "a", top, f"read_{x}", "a"))
            T.append(push(f"read_{x}", "b", top, f"read_{x}", "b"))
            T.append(noop(f"read_{x}", "c", top, f"mirror_{x}"))
        T.append(pop(f"mirror_{x}", "a", "a", f"mirror_{x}"))
        T.append(pop(f"mirror_{x}", "b", "b", f"mirror_{x}"))
        T.append(pop(f"mirror_{x}", x, "c", "accept"))
    states = ("q0", "first_a", "read_a", "mirror_a", "first_b", "read_b", "mirror_b", "accept")
    return PdaSpec("palindrome", states, Alphabet(("a", "b", "c")), (BOTTOM, "a", "b", "c"),
                   T, "q0", {"accept"})


def _palindrome_even() -> PdaSpec:
    # w w^R with w over {a,b}: guess the middle with an epsilon move
    T: list[Transition] = []
    for x in ("a", "b"):
        T.append(push("push", x, BOTTOM, "push", x))
        for top in ("a", "b"):
            T.append(push("push", x, top, "push", x))
    for top in ("a", "b"):
        T.append(noop("push", None, top, "pop"))
        T.append(pop("pop", top, top, "pop"))
    T.append(noop("pop", None, BOTTOM, "accept"))
    return PdaSpec("palindrome_even", ("push", "pop", "accept"), Alphabet(("a", "b")),
                   (BOTTOM, "a", "b"), T, "push", {"accept"})


def _dyck2() -> PdaSpec:
    # marker ')' under each top-level group; the family (round/square) of the
    # group's first bracket is kept in the state
    opens = ("(", "[")
    T: list[Transition] = []
    for src in ("q0", "empty"):
        T.append(push(src, "(", BOTTOM, "first_round", ")"))
        T.append(push(src, "[", BOTTOM, "first_square", ")"))
    for fam, closer in (("round", ")"), ("square", "]")):
        first, inner = f"first_{fam}", f"inner_{fam}"
        for o in opens:
            T.append(push(first, o, ")", inner, o))
            for top in ("(", "[", ")"):
                T.append(push(inner, o, top, inner, o))
        T.append(pop(first, closer, ")", "empty"))
        T.append(pop(inner, ")", "(", inner))
        T.append(pop(inner, "]", "[", inner))
        T.append(pop(inner, closer, ")", "empty"))
    states = ("q0", "first_round", "inner_round", "first_square", "inner_square", "empty")
    return PdaSpec("dyck2", states, Alphabet(("(", ")", "[", "]")),
                   (BOTTOM, "(", ")", "[", "]"), T, "q0", {"empty"})


_BUILDERS = {
    "palindrome": _palindrome,
    "anbn": _anbn,
    "anbncbmam": _anbncbmam,
    "anmbncm": _anmbncm,
    "dyck2": _dyck2,
    "palindrome_even": _palindrome_even,
}

BENCHMARK_GRAMMARS = ("palindrome", "anbn", "anbncbmam", "anmbncm", "dyck2")
BUILTIN_GRAMMARS = tuple(_BUILDERS)


@functools.lru_cache(maxsize=None)
def builtin_grammar(name: str) -> PdaSpec:
    """Return the PDA of a builtin grammar.

    The automata are minimal for their construction; ``M`` per grammar is
    palindrome 8, anbn 5, anbncbmam 10, anmbncm 6, dyck2 6, palindrome_even 3.
    """
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise GrammarNotFoundError(f"unknown grammar {name!r}; choose from {BUILTIN_GRAMMARS}") from None


# ---------------------------------------------------------------------------
# oracles


def _check_tokens(spec: PdaSpec, tokens: Tokens) -> None:
    for t in tokens:
        if t not in spec.alphabet:
            raise InputError(f"token {t!r} is not in alphabet {spec.alphabet.symbols}")


def _run_deterministic(spec: PdaSpec, tokens: Tokens) -> bool:
    state, stack = spec.start_state, [spec.bottom]
    index = spec._index
    for tok in tokens:
        moves = index.get((state, tok, stack[-1]))
        if not moves:
            return False
        t = moves[0]
        stack.pop()
        stack.extend(t.replace)
        state = t.target
    return state in spec.accepting and len(stack) == 1


def _epsilon_closure(spec: PdaSpec, configs: Iterable[tuple[str, Tokens]], depth: int) -> set:
    seen = set(configs)
    queue = deque(seen)
    while queue:
        state, stack = queue.popleft()
        for t in spec.moves(state, None, stack[-1]):
            nxt = (t.target, stack[:-1] + t.replace)
            if len(nxt[1]) <= depth and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def pda_step(spec: PdaSpec, configs: set, symbol: str, depth: int) -> set:
    """All configurations reachable from ``configs`` by reading ``symbol`` (closure included)."""
    out = set()
    for state, stack in configs:
        for t in spec.moves(state, symbol, stack[-1]):
            nxt = (t.target, stack[:-1] + t.replace)
            if len(nxt[1]) <= depth:
                out.add(nxt)
    return _epsilon_closure(spec, out, depth)


def pda_initial(spec: PdaSpec, depth: int) -> set:
    return _epsilon_closure(spec, [(spec.start_state, (spec.bottom,))], depth)


def pda_is_accepting(spec: PdaSpec, configs: Iterable) -> bool:
    return any(q in spec.accepting and len(st) == 1 for q, st in configs)


def pda_accepts(spec: PdaSpec, tokens: str | Iterable[str]) -> bool:
    """Breadth-first search over configurations; accepts on F with stack [⊥]."""
    tokens = as_tokens(tokens)
    _check_tokens(spec, tokens)
    if spec.is_deterministic:
        return _run_deterministic(spec, tokens)
    depth = len(tokens) + 1
    configs = pda_initial(spec, depth)
    for tok in tokens:
        configs = pda_step(spec, configs, tok, depth)
        if not configs:
            return False
    return pda_is_accepting(spec, configs)


def accepting_derivation(spec: PdaSpec, tokens: str | Iterable[str]) -> list[Transition] | None:
    """One accepting path (list of transitions, epsilon moves included), or None."""
    tokens = as_tokens(tokens)
    _check_tokens(spec, tokens)
    depth = len(tokens) + 1
    start = (spec.start_state, (spec.bottom,), 0)
    parent: dict = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        state, stack, pos = node
        if pos == len(tokens) and state in spec.accepting and len(stack) == 1:
            path = []
            while parent[node] is not None:
                node, t = parent[node]
                path.append(t)
            return path[::-1]
        cands = list(spec.moves(state, None, stack[-1]))
        if pos < len(tokens):
            cands += spec.moves(state, tokens[pos], stack[-1])
        for t in cands:
            nxt = (t.target, stack[:-1] + t.replace, pos + (t.symbol is not None))
            if len(nxt[1]) <= depth and nxt not in parent:
                parent[nxt] = (node, t)
                queue.append(nxt)
    return None


_BRACKETS = {")": "(", "]": "["}


def closed_form_member(name: str, tokens: str | Iterable[str]) -> bool:
    """Membership by direct string predicates, with no automaton involved."""
    tokens = as_tokens(tokens)
    alphabet = builtin_grammar(name).alphabet
    for t in tokens:
        if t not in alphabet:
            raise InputError(f"token {t!r} is not in alphabet {alphabet.symbols}")
    s = "".join(tokens)
    if name == "anbn":
        m = re.fullmatch(r"(a+)(b+)", s)
        return bool(m) and len(m.group(1)) == len(m.group(2))
    if name == "anbncbmam":
        m = re.fullmatch(r"(a+)(b+)c(b+)(a+)", s)
        return bool(m) and len(m.group(1)) == len(m.group(2)) and len(m.group(3)) == len(m.group(4))
    if name == "anmbncm":
        m = re.fullmatch(r"(a+)(b+)(c+)", s)
        return bool(m) and len(m.group(1)) == len(m.group(2)) + len(m.group(3))
    if name == "palindrome":
        m = re.fullmatch(r"([ab]+)c([ab]+)", s)
        return bool(m) and m.group(1) == m.group(2)[::-1]
    if name == "palindrome_even":
        half = len(s) // 2
        return len(s) >= 2 and len(s) % 2 == 0 and s[:half] == s[half:][::-1]
    if name == "dyck2":
        stack: list[str] = []
        for ch in s:
            if ch in _BRACKETS:
                if not stack or stack.pop() != _BRACKETS[ch]:
                    return False
            else:
                stack.append(ch)
        return len(s) > 0 and not stack
    raise GrammarNotFoundError(name)


def enumerate_strings(alphabet: Alphabet, max_len: int, min_len: int = 1) -> Iterator[Tokens]:
    """Every string over the alphabet with length in [min_len, max_len], shortest first."""
    for n in range(min_len, max_len + 1):
        yield from itertools.product(alphabet.symbols, repeat=n)


def exhaustive_labels(spec: PdaSpec, max_len: int) -> dict[int, np.ndarray]:
    """Automaton labels for all strings of each length, in ``itertools.product`` order.

    Walks the prefix tree so shared prefixes are simulated once.
    """
    L = spec.L
    depth = max_len + 1
    out: dict[int, np.ndarray] = {}
    memo: dict = {}
    accept: dict = {}
    level = [frozenset(pda_initial(spec, depth))]
    for n in range(1, max_len + 1):
        nxt = []
        for configs in level:
            for sym in spec.alphabet.symbols:
                key = (configs, sym)
                if key not in memo:
                    c = frozenset(pda_step(spec, configs, sym, depth))
                    memo[key] = c
                    accept[c] = pda_is_accepting(spec, c)
                nxt.append(memo[key])
        level = nxt
        out[n] = np.fromiter((accept[c] for c in level), dtype=bool, count=len(level))
    return out


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class LabeledString:
    tokens: Tokens
    label: int
    derivation: tuple[Transition, ...] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", as_tokens(self.tokens))
        if self.label not in (0, 1):
            raise InputError(f"label must be 0 or 1, got {self.label!r}")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Dataset:
    samples: tuple[LabeledString, ...]
    grammar_id: str
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[LabeledString]:
        return iter(self.samples)

    def __getitem__(self, i: int) -> LabeledString:
        return self.samples[i]

    @property
    def max_len(self) -> int:
        return max((len(s) for s in self.samples), default=0)

    @property
    def tokens(self) -> list[Tokens]:
        return [s.tokens for s in self.samples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def n_characters(self) -> int:
        return sum(len(s) for s in self.samples)

    def to_text(self) -> str:
        lines = [f"#grammar={self.grammar_id} seed={self.seed} n={len(self.samples)}"]
        lines += [f"{s.label}\t{' '.join(s.tokens)}" for s in self.samples]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Dataset":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise InputError("dataset text is missing its header line")
        header = dict(part.split("=", 1) for part in lines[0][1:].split())
        try:
            grammar, seed, n = header["grammar"], int(header["seed"]), int(header["n"])
        except (KeyError, ValueError) as exc:
            raise InputError(f"malformed dataset header {lines[0]!r}") from exc
        samples = []
        for ln in lines[1:]:
            if not ln.strip():
                continue
            label, _, toks = ln.partition("\t")
            samples.append(LabeledString(tuple(toks.split()), int(label)))
        if len(samples) != n:
            raise InputError(f"header announces {n} samples, found {len(samples)}")
        return cls(tuple(samples), grammar, seed)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def curriculum_slice(data: Dataset, max_len: int) -> Dataset:
    """Samples of length <= max_len, order preserved."""
    if max_len < 1:
        raise InputError("max_len must be at least 1")
    return Dataset(tuple(s for s in data.samples if len(s) <= max_len), data.grammar_id, data.seed)


@functools.lru_cache(maxsize=64)
def _feasibility(spec: PdaSpec, max_len: int) -> np.ndarray:
    """F[r, q, h]: from state q with stack height h, some path may read exactly r more
    tokens and accept.  The stack contents are abstracted to their height (the top is
    ⊥ iff h == 0), so the table over-approximates; walks still re-check real moves."""
    H = max_len + 2
    qi = {q: i for i, q in enumerate(spec.states)}
    F = np.zeros((max_len + 1, spec.M, H + 1), dtype=bool)
    moves = []
    for t in spec.transitions:
        grow = len(t.replace) - 1
        moves.append((qi[t.source], qi[t.target], t.symbol is not None, t.top == spec.bottom, grow))
    for r in range(max_len + 1):
        if r == 0:
            for q in spec.accepting:
                F[0, qi[q], 0] = True
        changed = True
        while changed:
            changed = False
            for src, dst, reads, from_bottom, grow in moves:
                if reads and r == 0:
                    continue
                prev = F[r - 1] if reads else F[r]
                hs = np.array([0]) if from_bottom else np.arange(1, H + 1)
                h2 = hs + grow
                ok = (h2 >= 0) & (h2 <= H)
                val = np.zeros(len(hs), dtype=bool)
                val[ok] = prev[dst, h2[ok]]
                new = F[r, src, hs] | val
                if (new != F[r, src, hs]).any():
                    F[r, src, hs] = new
                    changed = True
    return F


def feasible_lengths(spec: PdaSpec, low: int, high: int) -> list[int]:
    F = _feasibility(spec, high)
    q0 = spec.states.index(spec.start_state)
    return [n for n in range(low, high + 1) if F[n, q0, 0]]


@functools.lru_cache(maxsize=64)
def _moves_by_state_top(spec: PdaSpec) -> dict:
    qi = {q: i for i, q in enumerate(spec.states)}
    table: dict = {}
    for t in spec.transitions:
        table.setdefault((t.source, t.top), []).append(
            (t, qi[t.target], int(t.symbol is not None), len(t.replace) - 1))
    return table


def _derive(spec: PdaSpec, n: int, rng: np.random.Generator, F: np.ndarray) -> tuple[Tokens, tuple] | None:
    """Random derivation of exactly n tokens, or None if the walk gets stuck."""
    table = _moves_by_state_top(spec)
    H = F.shape[2] - 1
    state, stack, left = spec.start_state, [spec.bottom], n
    out: list[str] = []
    path: list[Transition] = []
    for _ in range(4 * n + 8):
        if left == 0 and state in spec.accepting and len(stack) == 1:
            return tuple(out), tuple(path)
        height = len(stack) - 1
        cands = []
        for t, q, reads, grow in table.get((state, stack[-1]), ()):
            r = left - reads
            h = height + grow
            if r >= 0 and h <= H and F[r, q, h]:
                cands.append(t)
        if not cands:
            return None
        t = cands[int(rng.integers(len(cands)))] if len(cands) > 1 else cands[0]
        stack.pop()
        stack.extend(t.replace)
        state = t.target
        path.append(t)
        if t.symbol is not None:
            out.append(t.symbol)
            left -= 1
    return None


_SATURATION_STREAK = 1000


def _perturb(tokens: Tokens, symbols: tuple[str, ...], rng: np.random.Generator) -> Tokens:
    kind = int(rng.integers(3)) if len(tokens) > 1 else int(rng.integers(2))
    t = list(tokens)
    if kind == 0:
        i = int(rng.integers(len(t)))
        others = [s for s in symbols if s != t[i]]
        t[i] = others[int(rng.integers(len(others)))]
    elif kind == 1:
        i = int(rng.integers(len(t) + 1))
        t.insert(i, symbols[int(rng.integers(len(symbols)))])
    else:
        del t[int(rng.integers(len(t)))]
    return tuple(t)


def sample_dataset(spec: PdaSpec, n_pos: int, n_neg: int, len_low: int, len_high: int,
                   seed: int, *, unique: str = "saturate", shuffle: bool = True) -> Dataset:
    """Sample a labeled dataset.

    Positives are random derivations whose target length is uniform over the
    derivable lengths in [len_low, len_high].  Half of the negatives are
    uniform random strings, half single-edit perturbations of positives; all
    labels are re-checked with :func:`pda_accepts`.

    ``unique`` controls duplicate handling: "strict" rejects duplicates,
    "saturate" rejects them until a label's distinct supply looks exhausted
    (1000 duplicate draws in a row) and then admits repeats, "allow" never
    rejects.
    """
    if n_pos <= 0 or n_neg <= 0:
        raise InputError("n_pos and n_neg must be positive")
    if not 1 <= len_low <= len_high:
        raise InputError("need 1 <= len_low <= len_high")
    if unique not in ("strict", "saturate", "allow"):
        raise InputError(f"unknown duplicate policy {unique!r}")
    rng = np.random.default_rng(seed)
    lengths = feasible_lengths(spec, len_low, len_high)
    if not lengths:
        raise GenerationExhaustedError(f"{spec.name} has no strings with length in [{len_low}, {len_high}]")
    F = _feasibility(spec, len_high)
    symbols = spec.alphabet.symbols

    def collect(n: int, draw, label: int, seen: set) -> list[LabeledString]:
        out: list[LabeledString] = []
        streak, saturated = 0, unique == "allow"
        for _ in range(100 * n + (_SATURATION_STREAK if unique == "saturate" else 0)):
            if len(out) == n:
                break
            item = draw()
            if item is None:
                continue
            toks, deriv = item
            if pda_accepts(spec, toks) != bool(label):
                continue
            if toks in seen and not saturated:
                streak += 1
                if unique == "saturate" and streak >= _SATURATION_STREAK:
                    saturated = True
                    logger.info("%s: distinct %s supply exhausted after %d; admitting repeats",
                                spec.name, "positive" if label else "negative", len(out))
                continue
            streak = 0
            seen.add(toks)
            out.append(LabeledString(toks, label, deriv))
        if len(out) < n:
            raise GenerationExhaustedError(
                f"{spec.name}: got {len(out)} of {n} {'positive' if label else 'negative'} samples "
                f"within the draw budget")
        return out

    def draw_positive():
        n = lengths[int(rng.integers(len(lengths)))]
        return _derive(spec, n, rng, F)

    positives = collect(n_pos, draw_positive, 1, set())

    n_uniform = n_neg // 2
    lo = max(1, len_low)
    neg_seen: set = set()

    def draw_uniform():
        n = int(rng.integers(lo, len_high + 1))
        return tuple(symbols[i] for i in rng.integers(len(symbols), size=n)), None

    def draw_edit():
        base = positives[int(rng.integers(len(positives)))].tokens
        return _perturb(base, symbols, rng), None

    negatives = collect(n_uniform, draw_uniform, 0, neg_seen) if n_uniform else []
    negatives += collect(n_neg - n_uniform, draw_edit, 0, neg_seen)
    samples = positives + negatives
    if shuffle:
        order = rng.permutation(len(samples))
        samples = [samples[i] for i in order]
    return Dataset(tuple(samples), spec.name, seed)


def sample_length_bucket(spec: PdaSpec, length: int, n: int, seed: int) -> Dataset:
    """Balanced evaluation set of n strings with lengths in [length - 1, length].

    The window covers one even and one odd length so every grammar has members.
    Repeats are allowed; the point is a fixed-size sample, not a set.
    """
    return sample_dataset(spec, n - n // 2, n // 2, max(1, length - 1), length, seed, unique="allow")


def split_dataset(data: Dataset, fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> tuple[Dataset, ...]:
    """Contiguous split (the samples are already shuffled by the sampler)."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise InputError("split fractions must be non-negative and sum to 1")
    n = len(data)
    bounds = np.round(np.cumsum([0.0, *fractions]) * n).astype(int)
    return tuple(Dataset(data.samples[a:b], data.grammar_id, data.seed)
                 for a, b in zip(bounds[:-1], bounds[1:]))
