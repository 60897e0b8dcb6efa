"""Losses and gradient procedures.

All procedures work on any cell from :mod:`nspda.cells` or
:mod:`nspda.baselines` and unroll the *effective* step sequence: token t is
presented S(t) times, each presentation is one step with its own loss term.
These numpy implementations are the reference; :mod:`nspda.fast` holds
compiled equivalents for the training loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .exceptions import CapacityError, InputError

EPS = 1e-7
ALGORITHMS = ("bptt", "tbptt", "rtrl", "uoro")
LR_MODES = ("stochastic", "fixed")
LOSS_SCOPES = ("all", "final")
LR0 = 0.1005000321
RHO_FLOOR = 1e-7


@dataclass(frozen=True)
class RefinementSchedule:
    H: tuple[int, ...]
    K: int = 4

    def __post_init__(self) -> None:
        object.__setattr__(self, "H", tuple(int(h) for h in self.H))
        if self.K < 1:
            raise InputError("K must be at least 1")
        if any(h not in (0, 1) for h in self.H):
            raise InputError("hints must be binary")

    @property
    def S(self) -> tuple[int, ...]:
        return tuple(self.K * (1 - h) + h for h in self.H)

    @classmethod
    def uniform(cls, T: int, K: int = 4) -> "RefinementSchedule":
        return cls((0,) * T, K)


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "uoro"
    truncation_window: int = 50
    clip_magnitude: float = 13.0
    lr0: float = LR0
    lr_mode: str = "stochastic"
    seed: int = 0
    read_gain: float = 0.0
    max_jacobian_entries: int = 20_000_000
    loss_scope: str = "all"

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise InputError(f"algorithm must be one of {ALGORITHMS}")
        if self.lr_mode not in LR_MODES:
            raise InputError(f"lr_mode must be one of {LR_MODES}")
        if self.clip_magnitude <= 0:
            raise InputError("clip_magnitude must be positive")
        if self.truncation_window < 1:
            raise InputError("truncation_window must be at least 1")
        if self.loss_scope not in LOSS_SCOPES:
            raise InputError(f"loss_scope must be one of {LOSS_SCOPES}")


class GradientBundle(dict):
    """Tensor name -> gradient array, in the model's parameter order."""

    def vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(a) for a in self.values()])

    @classmethod
    def from_vector(cls, template: dict[str, np.ndarray], vec: np.ndarray) -> "GradientBundle":
        out, pos = cls(), 0
        for name, a in template.items():
            a = np.asarray(a)
            out[name] = vec[pos : pos + a.size].reshape(a.shape).copy()
            pos += a.size
        if pos != vec.size:
            raise InputError("gradient vector does not match the parameter layout")
        return out


def instantaneous_loss(yhat: float, y: int) -> float:
    p = min(max(float(yhat), EPS), 1.0 - EPS)
    return -y * np.log(p) - (1 - y) * np.log(1 - p)


def loss_derivative(yhat: float, y: int) -> float:
    """d loss / d ŷ; zero where the clamp is active."""
    if yhat < EPS or yhat > 1.0 - EPS:
        return 0.0
    return -y / yhat + (1 - y) / (1 - yhat)


def scope_weights(schedule, scope: str = "all") -> np.ndarray | None:
    """Per-step loss weights: None (every step) or ones on the last token's presentations only."""
    if scope == "all":
        return None
    if scope != "final":
        raise InputError(f"loss_scope must be one of {LOSS_SCOPES}")
    S = schedule.S if isinstance(schedule, RefinementSchedule) else tuple(int(k) for k in schedule)
    w = np.zeros(sum(S))
    w[sum(S) - S[-1] :] = 1.0
    return w


def refinement_loss(predictions: Sequence[float], y: int, schedule: RefinementSchedule | Sequence[int]) -> float:
    S = schedule.S if isinstance(schedule, RefinementSchedule) else tuple(schedule)
    if len(predictions) != sum(S):
        raise InputError(f"{len(predictions)} predictions for a schedule summing to {sum(S)}")
    return float(sum(instantaneous_loss(p, y) for p in predictions))


def _steps(tokens: Sequence[int], schedule) -> list[int]:
    S = schedule.S if isinstance(schedule, RefinementSchedule) else tuple(int(k) for k in schedule)
    if len(S) != len(tokens):
        raise InputError("schedule needs one entry per token")
    if len(tokens) == 0:
        raise InputError("cannot train on an empty sequence")
    return [int(t) for t, k in zip(tokens, S) for _ in range(k)]


def unroll(cell, tokens: Sequence[int], schedule, rng) -> tuple[list, Any]:
    state = cell.start(rng)
    caches = []
    for l in _steps(tokens, schedule):
        state, cache = cell.forward(state, l, rng)
        caches.append(cache)
    return caches, state


def sequence_loss(cell, tokens, y, schedule, rng) -> float:
    caches, _ = unroll(cell, tokens, schedule, rng)
    return float(sum(instantaneous_loss(c.yhat, y) for c in caches))


def _bundle(cell, vec: np.ndarray) -> GradientBundle:
    return GradientBundle.from_vector(cell.params.tensors(), vec)


def _output_terms(cell, cache, y, weight=1.0):
    dy = weight * loss_derivative(cache.yhat, y)
    dh, dth = cell.output_grads(cache)
    return dy * dh, dy * dth


def _weights(N: int, loss_weights) -> np.ndarray:
    if loss_weights is None:
        return np.ones(N)
    w = np.asarray(loss_weights, dtype=float)
    if w.shape != (N,):
        raise InputError("loss_weights needs one entry per effective step")
    return w


def bptt_vector(cell, tokens, y, schedule, rng, window: int | None = None, loss_weights=None) -> np.ndarray:
    caches, _ = unroll(cell, tokens, schedule, rng)
    N = len(caches)
    lw = _weights(N, loss_weights)
    grad = np.zeros(cell.n_params)
    if window is None or window >= N:
        delta = np.zeros(cell.n_hidden)
        for tau in range(N - 1, -1, -1):
            c = caches[tau]
            dh, dth = _output_terms(cell, c, y, lw[tau])
            grad += dth
            delta = delta + dh
            grad += cell.vjp_params(c, delta)
            delta = cell.state_jacobian(c).T @ delta
        return grad
    for tau in range(N):
        dh, dth = _output_terms(cell, caches[tau], y, lw[tau])
        grad += dth
        delta = dh
        for s in range(tau, max(-1, tau - window), -1):
            grad += cell.vjp_params(caches[s], delta)
            delta = cell.state_jacobian(caches[s]).T @ delta
    return grad


def rtrl_vector(cell, tokens, y, schedule, rng, max_entries: int = 20_000_000, loss_weights=None) -> np.ndarray:
    if cell.n_hidden * cell.n_params > max_entries:
        raise CapacityError(f"RTRL Jacobian needs {cell.n_hidden * cell.n_params} entries, "
                            f"cap is {max_entries}")
    steps = _steps(tokens, schedule)
    lw = _weights(len(steps), loss_weights)
    state = cell.start(rng)
    P = np.zeros((cell.n_hidden, cell.n_params))
    grad = np.zeros(cell.n_params)
    for t, l in enumerate(steps):
        state, c = cell.forward(state, l, rng)
        P = cell.param_jacobian(c) + cell.state_jacobian(c) @ P
        dh, dth = _output_terms(cell, c, y, lw[t])
        grad += dth + dh @ P
    return grad


def uoro_vector(cell, tokens, y, schedule, rng, sign_rng=None, loss_weights=None) -> np.ndarray:
    """One stochastic UORO estimate of the sequence gradient.

    Read noise comes from ``rng``; the random sign vectors from ``sign_rng``
    (a child of ``rng`` when omitted), so the forward trajectory does not
    depend on the sign draws.
    """
    if sign_rng is None:
        sign_rng = rng.spawn(1)[0]
    steps = _steps(tokens, schedule)
    lw = _weights(len(steps), loss_weights)
    state = cell.start(rng)
    zt = np.zeros(cell.n_hidden)
    tt = np.zeros(cell.n_params)
    grad = np.zeros(cell.n_params)
    for t, l in enumerate(steps):
        state, c = cell.forward(state, l, rng)
        nu = np.where(sign_rng.random(cell.n_hidden) < 0.5, -1.0, 1.0)
        Jz = cell.state_jacobian(c) @ zt
        nuM = cell.vjp_params(c, nu)
        rho0 = np.sqrt(max(np.linalg.norm(tt), RHO_FLOOR) / max(np.linalg.norm(Jz), RHO_FLOOR))
        rho1 = np.sqrt(max(np.linalg.norm(nuM), RHO_FLOOR) / max(np.linalg.norm(nu), RHO_FLOOR))
        zt = rho0 * Jz + rho1 * nu
        tt = tt / rho0 + nuM / rho1
        dh, dth = _output_terms(cell, c, y, lw[t])
        grad += dth + (dh @ zt) * tt
    return grad


def _cell_for(params, read_gain: float = 0.0, noise: str = "sample"):
    from .baselines import BaselineCell, BaselineParams
    from .cells import NSPDACell

    if isinstance(params, BaselineParams):
        return BaselineCell(params)
    return NSPDACell(params, read_gain=read_gain, noise=noise)


def _unpack(sample) -> tuple[np.ndarray, int]:
    if hasattr(sample, "tokens"):
        toks, y = sample.tokens, sample.label
    else:
        toks, y = sample
    toks = np.asarray(toks)
    if toks.dtype.kind not in "iu":
        raise InputError("samples must be token-index sequences; encode them with Alphabet.encode")
    return toks.astype(np.int64), int(y)


def bptt_gradient(params, sample, schedule, rng, *, read_gain: float = 0.0) -> GradientBundle:
    toks, y = _unpack(sample)
    cell = _cell_for(params, read_gain)
    return _bundle(cell, bptt_vector(cell, toks, y, schedule, rng))


def tbptt_gradient(params, sample, schedule, window: int, rng, *, read_gain: float = 0.0) -> GradientBundle:
    if window < 1:
        raise InputError("window must be at least 1")
    toks, y = _unpack(sample)
    cell = _cell_for(params, read_gain)
    return _bundle(cell, bptt_vector(cell, toks, y, schedule, rng, window))


def rtrl_gradient(params, sample, schedule, rng, *, read_gain: float = 0.0,
                  max_entries: int = 20_000_000) -> GradientBundle:
    toks, y = _unpack(sample)
    cell = _cell_for(params, read_gain)
    return _bundle(cell, rtrl_vector(cell, toks, y, schedule, rng, max_entries))


def uoro_gradient_stream(params, sample, schedule, rng, *, sign_rng=None,
                         read_gain: float = 0.0) -> GradientBundle:
    toks, y = _unpack(sample)
    cell = _cell_for(params, read_gain)
    return _bundle(cell, uoro_vector(cell, toks, y, schedule, rng, sign_rng))


def clip(grad: np.ndarray, magnitude: float) -> np.ndarray:
    return np.clip(grad, -magnitude, magnitude)


def learning_rate(config: OptimizerConfig, epoch: int, rng) -> float:
    lam = config.lr0 / (1.0 + epoch / 100.0)
    if config.lr_mode == "stochastic":
        lam *= rng.uniform(0.5, 1.5)
    return lam


def sgd_step(params, grads: GradientBundle | np.ndarray, config: OptimizerConfig, epoch: int, rng):
    """params - λ · clip(grads), with λ = lr0 / (1 + epoch/100) (× U(0.5, 1.5) when stochastic)."""
    g = grads.vector() if isinstance(grads, GradientBundle) else np.asarray(grads, dtype=float)
    theta = params.to_vector()
    if g.shape != theta.shape:
        raise InputError("gradient and parameters are not congruent")
    lam = learning_rate(config, epoch, rng)
    return params.with_vector(theta - lam * clip(g, config.clip_magnitude))
