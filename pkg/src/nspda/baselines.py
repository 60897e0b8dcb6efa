"""Stackless comparison models: a first-order (Elman) and a second-order network.

They plug into the same cells interface, losses, optimizer and curriculum as
the NSPDA.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .cells import StepCache
from .exceptions import InputError
from .model import g_hat

KINDS = ("first_order", "second_order")
MAX_HIDDEN = 50
DEFAULT_HIDDEN = 32


@dataclass
class BaselineParams:
    kind: str
    hidden: int
    L: int
    weights: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InputError(f"kind must be one of {KINDS}")
        if not 1 <= self.hidden <= MAX_HIDDEN:
            raise InputError(f"hidden size must lie in [1, {MAX_HIDDEN}]")
        if self.L < 2:
            raise InputError("L must be at least 2")
        shapes = self.shapes(self.kind, self.hidden, self.L)
        self.weights = {k: np.asarray(self.weights[k], dtype=float) for k in shapes}
        for k, shp in shapes.items():
            if self.weights[k].shape != shp:
                raise InputError(f"{k} has shape {self.weights[k].shape}, expected {shp}")

    @staticmethod
    def shapes(kind: str, H: int, L: int) -> dict[str, tuple]:
        if kind == "first_order":
            return {"W_rec": (H, H), "W_in": (H, L), "b": (H,), "W_o": (H,), "b_o": ()}
        return {"W": (H, H, L), "b": (H,), "W_o": (H,), "b_o": ()}

    @property
    def J(self) -> int:
        return self.hidden

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.weights.values())

    def tensors(self) -> dict[str, np.ndarray]:
        return self.weights

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(a) for a in self.weights.values()])

    def with_vector(self, theta: np.ndarray) -> "BaselineParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise InputError("parameter vector has the wrong length")
        out, pos = {}, 0
        for k, a in self.weights.items():
            out[k] = theta[pos : pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return replace(self, weights=out, metadata=dict(self.metadata))

    def copy(self) -> "BaselineParams":
        return replace(self, weights={k: v.copy() for k, v in self.weights.items()},
                       metadata=dict(self.metadata))

    def equals(self, other: "BaselineParams") -> bool:
        return (self.kind == other.kind and self.hidden == other.hidden and self.L == other.L
                and all(np.array_equal(self.weights[k], other.weights[k]) for k in self.weights))


def init_baseline(kind: str, L: int, seed: int, hidden: int = DEFAULT_HIDDEN) -> BaselineParams:
    """Weights U(-0.1, 0.1), biases zero."""
    if kind not in KINDS:
        raise InputError(f"kind must be one of {KINDS}")
    rng = np.random.default_rng(seed)
    w = {}
    for k, shp in BaselineParams.shapes(kind, hidden, L).items():
        w[k] = np.zeros(shp) if k in ("b", "b_o") else rng.uniform(-0.1, 0.1, size=shp)
    return BaselineParams(kind, hidden, L, w, metadata={"seed": int(seed), "kind": kind})


def initial_hidden(params: BaselineParams) -> np.ndarray:
    h = np.zeros(params.hidden)
    if params.kind == "second_order":
        h[0] = 1.0  # a zero state would make every multiplicative pre-activation vanish
    return h


def _preactivation(params: BaselineParams, h: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray]:
    w = params.weights
    if params.kind == "first_order":
        return w["W_rec"] @ h + w["W_in"][:, l] + w["b"], w["W_rec"]
    A = w["W"][:, :, l]
    return A @ h + w["b"], A


def baseline_step(params: BaselineParams, hidden: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, float]:
    x = np.asarray(x)
    if x.shape != (params.L,) or hidden.shape != (params.hidden,):
        raise InputError("input or hidden vector has the wrong shape")
    nz = np.flatnonzero(x)
    if len(nz) != 1 or x[nz[0]] != 1:
        raise InputError("input vector must be one-hot")
    s, _ = _preactivation(params, hidden, int(nz[0]))
    h = g_hat(s)
    return h, float(g_hat(params.weights["W_o"] @ h + params.weights["b_o"]))


def baseline_predict(params: BaselineParams, sequences) -> np.ndarray:
    """Final ŷ for each token-index sequence."""
    out = np.zeros(len(sequences))
    eye = np.eye(params.L)
    for i, seq in enumerate(sequences):
        h = initial_hidden(params)
        y = 0.5
        for l in seq:
            h, y = baseline_step(params, h, eye[int(l)])
        out[i] = y
    return out


class BaselineCell:
    def __init__(self, params: BaselineParams):
        self.params = params
        self.n_hidden = params.hidden
        self.n_params = params.n_params
        names = list(params.weights)
        sizes = [params.weights[k].size for k in names]
        self.offsets = dict(zip(names, np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)))

    def start(self, rng) -> np.ndarray:
        return initial_hidden(self.params)

    def forward(self, h: np.ndarray, l: int, rng) -> tuple[np.ndarray, StepCache]:
        s, A = _preactivation(self.params, h, l)
        hn = g_hat(s)
        y = float(g_hat(self.params.weights["W_o"] @ hn + self.params.weights["b_o"]))
        return hn, StepCache(hn, y, dict(h=h, l=l, A=A, gp=hn * (1 - hn), hn=hn))

    def state_jacobian(self, cache: StepCache) -> np.ndarray:
        return cache.data["gp"][:, None] * cache.data["A"]

    def vjp_params(self, cache: StepCache, w: np.ndarray) -> np.ndarray:
        d, H, L = cache.data, self.params.hidden, self.params.L
        a = w * d["gp"]
        out = np.zeros(self.n_params)
        o = self.offsets
        if self.params.kind == "first_order":
            out[o["W_rec"] : o["W_rec"] + H * H] = np.outer(a, d["h"]).ravel()
            win = np.zeros((H, L))
            win[:, d["l"]] = a
            out[o["W_in"] : o["W_in"] + H * L] = win.ravel()
        else:
            W = np.zeros((H, H, L))
            W[:, :, d["l"]] = np.outer(a, d["h"])
            out[o["W"] : o["W"] + H * H * L] = W.ravel()
        out[o["b"] : o["b"] + H] = a
        return out

    def param_jacobian(self, cache: StepCache) -> np.ndarray:
        eye = np.eye(self.n_hidden)
        return np.stack([self.vjp_params(cache, e) for e in eye])

    def output_grads(self, cache: StepCache) -> tuple[np.ndarray, np.ndarray]:
        y = cache.yhat
        s = y * (1 - y)
        dh = s * self.params.weights["W_o"]
        dth = np.zeros(self.n_params)
        o = self.offsets["W_o"]
        dth[o : o + self.params.hidden] = s * cache.data["hn"]
        dth[self.offsets["b_o"]] = s
        return dh, dth
