"""Discrete stack driven by {-1, 0, +1} action vectors.

Stack symbols are input-symbol indices; ``BOTTOM`` (-1) is ⊥.  The read
vector encodes the post-action top in the high interval, a just-popped symbol
in the middle interval and everything else in the low interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import InputError

BOTTOM = -1

# (low, high) bounds of the three read intervals
ALPHA_ABSENT = (0.0001, 0.008)
ALPHA_TOP = (0.901, 0.992)
ALPHA_POPPED = (0.025, 0.110)

NOISE_MODES = ("sample", "mid", "low", "high")


@dataclass(frozen=True)
class Stack:
    items: tuple[int, ...] = (BOTTOM,)
    illegal_pop_flag: bool = False

    def __post_init__(self) -> None:
        if not self.items or self.items[0] != BOTTOM or BOTTOM in self.items[1:]:
            raise InputError("a stack holds ⊥ exactly once, at the bottom")

    @property
    def top(self) -> int:
        return self.items[-1]

    @property
    def depth(self) -> int:
        """Number of symbols above ⊥."""
        return len(self.items) - 1

    def describe(self, symbols: Sequence[str] | None = None) -> str:
        names = ["⊥" if s == BOTTOM else (symbols[s] if symbols else str(s)) for s in self.items]
        return "".join(names) if symbols and all(len(n) == 1 for n in names) else " ".join(names)


def arbitrate_action(raw: np.ndarray, quantized: np.ndarray) -> np.ndarray:
    """Keep at most one nonzero action: the one with the largest |pre-activation|,
    ties broken by the lowest index."""
    raw = np.asarray(raw, dtype=float)
    quantized = np.asarray(quantized)
    if raw.shape != quantized.shape or raw.ndim != 1:
        raise InputError("raw and quantized action vectors must be 1-D and of equal length")
    nz = np.flatnonzero(quantized)
    if len(nz) <= 1:
        return quantized.copy()
    winner = nz[np.argmax(np.abs(raw[nz]))]  # argmax returns the first maximum
    out = np.zeros_like(quantized)
    out[winner] = quantized[winner]
    return out


def apply_action(stack: Stack, action: np.ndarray) -> tuple[Stack, int | None]:
    """Apply an arbitrated action; returns the new stack and the popped symbol (or None)."""
    nz = np.flatnonzero(action)
    if len(nz) > 1:
        raise InputError("action vector must be arbitrated (at most one nonzero entry)")
    if len(nz) == 0:
        return Stack(stack.items, False), None
    i = int(nz[0])
    if action[i] > 0:
        return Stack(stack.items + (i,), False), None
    if stack.depth == 0:
        return Stack(stack.items, True), None
    popped = stack.top
    return Stack(stack.items[:-1], popped != i), popped


def _interval_values(lo_hi: tuple[float, float], u: np.ndarray) -> np.ndarray:
    lo, hi = lo_hi
    return lo + u * (hi - lo)


def noise_uniforms(L: int, mode: str, rng: np.random.Generator | None) -> np.ndarray:
    """Position inside each read interval, as a fraction in [0, 1]."""
    if mode == "sample":
        if rng is None:
            raise InputError("sampled read noise needs a random generator")
        return rng.random(L)
    if mode == "mid":
        return np.full(L, 0.5)
    if mode == "low":
        return np.zeros(L)
    if mode == "high":
        return np.ones(L)
    raise InputError(f"unknown noise mode {mode!r}; choose from {NOISE_MODES}")


def read_from_uniforms(top: int, popped: int | None, u: np.ndarray) -> np.ndarray:
    L = len(u)
    r = _interval_values(ALPHA_ABSENT, u)
    if popped is not None and popped != BOTTOM and popped != top:
        r[popped] = _interval_values(ALPHA_POPPED, u[popped : popped + 1])[0]
    if top != BOTTOM:
        if not 0 <= top < L:
            raise InputError(f"stack symbol {top} outside the alphabet")
        r[top] = _interval_values(ALPHA_TOP, u[top : top + 1])[0]
    return r


def read_vector(stack: Stack, L: int, popped: int | None, rng: np.random.Generator | None,
                mode: str = "sample") -> np.ndarray:
    """Read vector of length L for the (already updated) stack."""
    return read_from_uniforms(stack.top, popped, noise_uniforms(L, mode, rng))


def decode_read(r: np.ndarray) -> tuple[int, int | None]:
    """Recover (top, popped) from a read vector; top is BOTTOM when nothing is high."""
    r = np.asarray(r)
    top, popped = BOTTOM, None
    for i, v in enumerate(r):
        if ALPHA_TOP[0] <= v <= ALPHA_TOP[1]:
            top = i
        elif ALPHA_POPPED[0] <= v <= ALPHA_POPPED[1]:
            popped = i
        elif not ALPHA_ABSENT[0] <= v <= ALPHA_ABSENT[1]:
            raise InputError(f"read component {v} lies in no interval")
    return top, popped
