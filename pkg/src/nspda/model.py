"""The state network: tensor updates, quantized activations, forward passes.

Both orders share one internal form.  The weight tensors are viewed as
``(rows, J, V)`` arrays contracted against the state z and a feature vector
v, with ``v = r ⊗ x`` (V = L², index ``k*L + l``) for third order and
``v = r ‖ x`` (V = 2L) for second order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .exceptions import InputError
from .stack import (
    BOTTOM,
    Stack,
    apply_action,
    arbitrate_action,
    noise_uniforms,
    read_from_uniforms,
)

ORDERS = ("second", "third")
MODES = ("smooth", "quantized")

F_PUSH = 0.13
F_POP = -0.09


def g_hat(v):
    """Logistic sigmoid."""
    return 1.0 / (1.0 + np.exp(-np.asarray(v, dtype=float)))


def g(v):
    """Binary state activation: 1 where the sigmoid exceeds 0.5."""
    return (g_hat(v) > 0.5).astype(float)


def f_hat(v):
    """Centered sigmoid in (-1, 1)."""
    return 2.0 * g_hat(v) - 1.0


def f(v):
    """Ternary action activation with the asymmetric dead zone [-0.09, 0.13]."""
    fh = f_hat(v)
    return np.where(fh > F_PUSH, 1, np.where(fh < F_POP, -1, 0)).astype(np.int64)


@dataclass
class ModelParams:
    order: str
    J: int
    L: int
    W_s: np.ndarray
    W_a: np.ndarray
    b_s: np.ndarray
    b_a: np.ndarray
    W_o: np.ndarray
    b_o: float
    start: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    TENSORS = ("W_s", "W_a", "b_s", "b_a", "W_o", "b_o")

    def __post_init__(self) -> None:
        if self.order not in ORDERS:
            raise InputError(f"order must be one of {ORDERS}, got {self.order!r}")
        if self.J < 1 or self.L < 2:
            raise InputError("need J >= 1 and L >= 2")
        self.W_s = np.asarray(self.W_s, dtype=float)
        self.W_a = np.asarray(self.W_a, dtype=float)
        self.b_s = np.asarray(self.b_s, dtype=float)
        self.b_a = np.asarray(self.b_a, dtype=float)
        self.W_o = np.asarray(self.W_o, dtype=float)
        self.b_o = float(self.b_o)
        J, L = self.J, self.L
        tail = (L, L) if self.order == "third" else (2 * L,)
        expect = {"W_s": (J, J, *tail), "W_a": (L, J, *tail), "b_s": (J,), "b_a": (L,), "W_o": (J,)}
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise InputError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not 0 <= self.start < J:
            raise InputError("start neuron outside [0, J)")

    @property
    def V(self) -> int:
        return self.L * self.L if self.order == "third" else 2 * self.L

    @property
    def n_params(self) -> int:
        return self.W_s.size + self.W_a.size + self.J + self.L + self.J + 1

    def flat_views(self) -> tuple[np.ndarray, np.ndarray]:
        """W_s and W_a reshaped to (rows, J, V); views, not copies."""
        return self.W_s.reshape(self.J, self.J, self.V), self.W_a.reshape(self.L, self.J, self.V)

    def copy(self) -> "ModelParams":
        return replace(self, W_s=self.W_s.copy(), W_a=self.W_a.copy(), b_s=self.b_s.copy(),
                       b_a=self.b_a.copy(), W_o=self.W_o.copy(), metadata=dict(self.metadata))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.W_s.ravel(), self.W_a.ravel(), self.b_s, self.b_a, self.W_o, [self.b_o]])

    def with_vector(self, theta: np.ndarray) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise InputError(f"parameter vector has length {theta.size}, expected {self.n_params}")
        out, pos = {}, 0
        for name in ("W_s", "W_a", "b_s", "b_a", "W_o"):
            a = getattr(self, name)
            out[name] = theta[pos : pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return replace(self, **out, b_o=float(theta[pos]), metadata=dict(self.metadata))

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W_s": self.W_s, "W_a": self.W_a, "b_s": self.b_s, "b_a": self.b_a,
                "W_o": self.W_o, "b_o": np.array(self.b_o)}

    def equals(self, other: "ModelParams") -> bool:
        """Bit-exact comparison of configuration and tensors."""
        return (self.order == other.order and self.J == other.J and self.L == other.L
                and self.start == other.start
                and all(np.array_equal(a, b) for a, b in zip(self.tensors().values(), other.tensors().values())))


@dataclass(frozen=True)
class ModelState:
    z: np.ndarray
    stack: Stack
    r: np.ndarray
    a: np.ndarray
    t: int = 0
    popped: int | None = None


def init_params(order: str, J: int, L: int, seed: int) -> ModelParams:
    """Tensors i.i.d. U(-0.1, 0.1), biases zero."""
    if J < 1 or L < 2:
        raise InputError("need J >= 1 and L >= 2")
    if order not in ORDERS:
        raise InputError(f"order must be one of {ORDERS}")
    rng = np.random.default_rng(seed)
    tail = (L, L) if order == "third" else (2 * L,)
    W_s = rng.uniform(-0.1, 0.1, size=(J, J, *tail))
    W_a = rng.uniform(-0.1, 0.1, size=(L, J, *tail))
    W_o = rng.uniform(-0.1, 0.1, size=J)
    return ModelParams(order, J, L, W_s, W_a, np.zeros(J), np.zeros(L), W_o, 0.0,
                       metadata={"seed": int(seed)})


def size_state_count(order: str, M: int, rng: np.random.Generator) -> int:
    """J = M + U{12..29} for second order, M + U{2..6} for third order."""
    if M < 1:
        raise InputError("M must be positive")
    lo, hi = (12, 29) if order == "second" else (2, 6)
    return int(M + rng.integers(lo, hi + 1))


def quantize_weights(params: ModelParams) -> ModelParams:
    """W_s -> {0, 1} at 0.5; W_a -> {-1, 0, 1} at ±0.5; output weights and biases kept."""
    W_s = (params.W_s > 0.5).astype(float)
    W_a = np.where(params.W_a > 0.5, 1.0, np.where(params.W_a < -0.5, -1.0, 0.0))
    return replace(params, W_s=W_s, W_a=W_a, b_s=params.b_s.copy(), b_a=params.b_a.copy(),
                   W_o=params.W_o.copy(), metadata=dict(params.metadata))


def features(order: str, r: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.outer(r, x).ravel() if order == "third" else np.concatenate([r, x])


def preactivations(params: ModelParams, z: np.ndarray, r: np.ndarray, x: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """State pre-activations s (length J) and action pre-activations u (length L)."""
    Ws, Wa = params.flat_views()
    v = features(params.order, r, x)
    s = (Ws @ v) @ z + params.b_s
    u = (Wa @ v) @ z + params.b_a
    return s, u


def initial_state(params: ModelParams, rng: np.random.Generator | None, noise: str = "sample") -> ModelState:
    z = np.zeros(params.J)
    z[params.start] = 1.0
    stack = Stack()
    r = read_from_uniforms(BOTTOM, None, noise_uniforms(params.L, noise, rng))
    return ModelState(z, stack, r, np.zeros(params.L, dtype=np.int64), 0, None)


def _check_x(x: np.ndarray, L: int) -> int:
    x = np.asarray(x)
    if x.shape != (L,):
        raise InputError(f"input vector must have length {L}")
    nz = np.flatnonzero(x)
    if len(nz) != 1 or x[nz[0]] != 1:
        raise InputError("input vector must be one-hot")
    return int(nz[0])


def _advance(params: ModelParams, state: ModelState, x: np.ndarray, quantized: bool,
             rng: np.random.Generator | None, noise: str) -> tuple[ModelState, float, np.ndarray, np.ndarray]:
    s, u = preactivations(params, state.z, state.r, x)
    z = g(s) if quantized else g_hat(s)
    a = arbitrate_action(u, f(u))
    stack, popped = apply_action(state.stack, a)
    r = read_from_uniforms(stack.top, popped, noise_uniforms(params.L, noise, rng))
    yhat = float(g_hat(params.W_o @ z + params.b_o))
    return ModelState(z, stack, r, a, state.t + 1, popped), yhat, s, u


def step(params: ModelParams, state: ModelState, x: np.ndarray, mode: str,
         rng: np.random.Generator | None, noise: str = "sample") -> tuple[ModelState, float]:
    """One update.  ``mode`` is "smooth" (training) or "quantized" (evaluation)."""
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    if state.z.shape != (params.J,) or state.r.shape != (params.L,):
        raise InputError("state shapes do not match the parameters")
    _check_x(x, params.L)
    quantized = mode == "quantized"
    p = quantize_weights(params) if quantized else params
    new, yhat, _, _ = _advance(p, state, x, quantized, rng, noise)
    return new, yhat


def forward_sequence(params: ModelParams, tokens: Sequence[int], schedule: Sequence[int] | None,
                     mode: str, rng: np.random.Generator | None, noise: str = "sample",
                     trace: list | None = None) -> tuple[list[float], ModelState]:
    """Run a token-index sequence; token t is presented schedule[t] times in a row.

    Returns every prediction (sum(schedule) of them) and the final state.  When
    ``trace`` is a list, one record per step is appended to it.
    """
    tokens = [int(t) for t in tokens]
    if not tokens:
        raise InputError("cannot run an empty sequence")
    if schedule is None:
        schedule = [1] * len(tokens)
    if len(schedule) != len(tokens) or any(int(k) < 1 for k in schedule):
        raise InputError("schedule needs one entry >= 1 per token")
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    if any(not 0 <= t < params.L for t in tokens):
        raise InputError("token index outside the alphabet")
    quantized = mode == "quantized"
    p = quantize_weights(params) if quantized else params
    state = initial_state(params, rng, noise)
    eye = np.eye(params.L)
    preds: list[float] = []
    for tok, k in zip(tokens, schedule):
        for _ in range(int(k)):
            state, yhat, s, u = _advance(p, state, eye[tok], quantized, rng, noise)
            preds.append(yhat)
            if trace is not None:
                trace.append({"t": state.t, "token": tok, "action": state.a.copy(),
                              "stack": state.stack, "read": state.r.copy(), "z": state.z.copy(),
                              "yhat": yhat})
    return preds, state


def classify(params: ModelParams, tokens: Sequence[int], rng: np.random.Generator | None,
             noise: str = "sample") -> bool:
    """Quantized evaluation with one pass per token; accept iff the final ŷ > 0.5."""
    preds, _ = forward_sequence(params, tokens, None, "quantized", rng, noise)
    return preds[-1] > 0.5


def classify_many(params: ModelParams, sequences: Sequence[Sequence[int]], rng: np.random.Generator | None,
                  noise: str = "sample", chunk: int = 512) -> np.ndarray:
    """Vectorized-in-a-loop quantized classification of many sequences.

    Draws read noise in the same order as calling :func:`classify` on each
    sequence in turn, so both give identical decisions for the same generator.
    """
    from ._kernels import classify_flat

    q = quantize_weights(params)
    Ws, Wa = q.flat_views()
    out = np.zeros(len(sequences), dtype=bool)
    for lo in range(0, len(sequences), chunk):
        part = sequences[lo : lo + chunk]
        lengths = np.array([len(s) for s in part], dtype=np.int64)
        if (lengths == 0).any():
            raise InputError("cannot classify an empty sequence")
        toks = np.concatenate([np.asarray(s, dtype=np.int64) for s in part])
        if toks.size and (toks.min() < 0 or toks.max() >= params.L):
            raise InputError("token index outside the alphabet")
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        rows = int(lengths.sum() + len(part))
        U = noise_uniforms(rows * params.L, noise, rng).reshape(rows, params.L)
        yhat = classify_flat(np.ascontiguousarray(Ws), np.ascontiguousarray(Wa), q.b_s, q.b_a, q.W_o,
                             q.b_o, params.order == "third", params.start, toks, offsets, U)
        out[lo : lo + len(part)] = yhat > 0.5
    return out


def trace_lines(trace: list, symbols: Sequence[str]) -> list[str]:
    """Debug log: one line per step, "t action stack-contents read-intervals"."""
    lines = []
    for rec in trace:
        a = rec["action"]
        nz = np.flatnonzero(a)
        act = "noop" if len(nz) == 0 else f"{'push' if a[nz[0]] > 0 else 'pop'}:{symbols[nz[0]]}"
        reads = "".join("H" if v >= 0.901 else ("P" if v >= 0.025 else "-") for v in rec["read"])
        lines.append(f"{rec['t']} {act} {rec['stack'].describe(symbols)} {reads}")
    return lines


def logistic(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v))
