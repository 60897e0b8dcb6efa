"""Gradient verification suites on randomized tiny models.

Shared by the ``gradcheck`` command and the test suite:

* central finite differences against BPTT,
* RTRL against BPTT,
* truncated BPTT with a window at least the sequence length against BPTT,
* the Monte-Carlo mean of UORO against RTRL (per-coordinate z-scores),
* the compiled kernels against the numpy reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .cells import STRAIGHT_THROUGH_GAIN, NSPDACell
from .fast import nspda_gradient
from .learning import RefinementSchedule, bptt_vector, rtrl_vector, sequence_loss, uoro_vector
from .model import ModelParams, init_params

FD_TOLERANCE = 1e-4
RTRL_TOLERANCE = 1e-6
UORO_Z_LIMIT = 3.0
KERNEL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class TinyCase:
    params: ModelParams
    tokens: np.ndarray
    label: int
    schedule: RefinementSchedule
    read_seed: int


@dataclass(frozen=True)
class SuiteResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: measured {self.measured:.3e} (limit {self.tolerance:.0e}) {self.detail}".rstrip()


def tiny_cases(trials: int = 20, seed: int = 0) -> Iterator[TinyCase]:
    """J=3, L=2, T in 1..5, K alternating 1 and 4, orders alternating third and second.

    Weights are scaled up from the default init so the sigmoids are
    exercised well away from their linear regime.
    """
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        order = ("third", "second")[trial % 2]
        p = init_params(order, 3, 2, int(rng.integers(2**31)))
        p = p.with_vector(p.to_vector() * rng.uniform(5.0, 30.0))
        p.b_s[:] = rng.normal(size=3)
        p.b_a[:] = rng.normal(size=2)
        T = int(rng.integers(1, 6))
        K = (1, 4)[(trial // 2) % 2]
        yield TinyCase(p, rng.integers(0, 2, T), int(rng.integers(2)), RefinementSchedule.uniform(T, K),
                       int(rng.integers(2**31)))


def _rng(case: TinyCase) -> np.random.Generator:
    return np.random.default_rng(case.read_seed)


def finite_difference_gradient(case: TinyCase, h: float = 1e-5) -> np.ndarray:
    """Central differences with the read noise frozen (same seed for every evaluation)."""
    theta = case.params.to_vector()
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        up = sequence_loss(NSPDACell(case.params.with_vector(theta + e)), case.tokens, case.label, case.schedule, _rng(case))
        dn = sequence_loss(NSPDACell(case.params.with_vector(theta - e)), case.tokens, case.label, case.schedule, _rng(case))
        g[i] = (up - dn) / (2 * h)
    return g


def normwise_error(a: np.ndarray, ref: np.ndarray) -> float:
    scale = float(np.max(np.abs(ref)))
    return float(np.max(np.abs(a - ref))) / (scale if scale > 0 else 1.0)


def check_finite_differences(trials: int = 20, seed: int = 0) -> SuiteResult:
    worst = 0.0
    for case in tiny_cases(trials, seed):
        b = bptt_vector(NSPDACell(case.params), case.tokens, case.label, case.schedule, _rng(case))
        worst = max(worst, normwise_error(b, finite_difference_gradient(case)))
    return SuiteResult("bptt vs finite differences", worst, FD_TOLERANCE, worst < FD_TOLERANCE, f"({trials} models)")


def check_rtrl(trials: int = 20, seed: int = 0, read_gain: float = 0.0) -> SuiteResult:
    worst = 0.0
    for case in tiny_cases(trials, seed):
        cell = NSPDACell(case.params, read_gain)
        b = bptt_vector(cell, case.tokens, case.label, case.schedule, _rng(case))
        r = rtrl_vector(cell, case.tokens, case.label, case.schedule, _rng(case))
        worst = max(worst, normwise_error(r, b))
    name = "rtrl vs bptt" + (" (straight-through reads)" if read_gain else "")
    return SuiteResult(name, worst, RTRL_TOLERANCE, worst < RTRL_TOLERANCE, f"({trials} models)")


def check_tbptt_full_window(trials: int = 20, seed: int = 0, window: int = 10_000) -> SuiteResult:
    worst = 0.0
    for case in tiny_cases(trials, seed):
        cell = NSPDACell(case.params)
        b = bptt_vector(cell, case.tokens, case.label, case.schedule, _rng(case))
        t = bptt_vector(cell, case.tokens, case.label, case.schedule, _rng(case), window)
        worst = max(worst, float(np.max(np.abs(t - b))))
    return SuiteResult(f"tbptt(window={window}) vs bptt", worst, 0.0, worst == 0.0, "(exact)")


def uoro_case(seed: int = 7) -> TinyCase:
    p = init_params("third", 3, 2, seed)
    p = p.with_vector(p.to_vector() * 10.0)
    return TinyCase(p, np.array([0, 0, 1, 1]), 1, RefinementSchedule.uniform(4, 1), 5)


def uoro_z_scores(n: int = 10_000, seed: int = 0, case: TinyCase | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(z-scores, |mean - ref|) per coordinate for n independent UORO estimates.

    Every estimate uses the same read noise, so the only randomness is in
    the sign vectors and the estimator's mean must equal the RTRL gradient.
    """
    case = case or uoro_case()
    ref = rtrl_vector(NSPDACell(case.params), case.tokens, case.label, case.schedule, _rng(case))
    signs = np.random.default_rng(seed).spawn(n)
    G = np.array([nspda_gradient(case.params, case.tokens, case.label, case.schedule, "uoro", _rng(case), s)[0]
                  for s in signs])
    mean = G.mean(axis=0)
    se = G.std(axis=0, ddof=1) / np.sqrt(n)
    diff = np.abs(mean - ref)
    # coordinates whose estimate is deterministic up to rounding are compared directly
    floor = 1e-9 * (np.abs(ref) + 1.0)
    z = np.where(se > floor, diff / np.where(se > floor, se, 1.0), np.where(diff <= floor, 0.0, np.inf))
    return z, diff


def check_uoro(n: int = 10_000, seed: int = 0) -> SuiteResult:
    z, _ = uoro_z_scores(n, seed)
    worst = float(np.max(z))
    return SuiteResult("uoro mean vs rtrl", worst, UORO_Z_LIMIT, worst < UORO_Z_LIMIT,
                       f"(max |z| over {z.size} coordinates, n={n})")


def check_kernels(trials: int = 20, seed: int = 0) -> SuiteResult:
    worst = 0.0
    for case in tiny_cases(trials, seed):
        for gain in (0.0, STRAIGHT_THROUGH_GAIN):
            cell = NSPDACell(case.params, gain)
            b = bptt_vector(cell, case.tokens, case.label, case.schedule, _rng(case))
            f, _ = nspda_gradient(case.params, case.tokens, case.label, case.schedule, "bptt", _rng(case),
                                  read_gain=gain)
            u = uoro_vector(cell, case.tokens, case.label, case.schedule, _rng(case), np.random.default_rng(1))
            fu, _ = nspda_gradient(case.params, case.tokens, case.label, case.schedule, "uoro", _rng(case),
                                   np.random.default_rng(1), read_gain=gain)
            worst = max(worst, normwise_error(f, b), normwise_error(fu, u))
    return SuiteResult("compiled kernels vs reference", worst, KERNEL_TOLERANCE, worst < KERNEL_TOLERANCE,
                       f"({trials} models, both read modes)")


def run_suites(trials: int = 20, seed: int = 0, uoro_samples: int = 10_000) -> list[SuiteResult]:
    return [
        check_finite_differences(trials, seed),
        check_rtrl(trials, seed),
        check_rtrl(trials, seed, STRAIGHT_THROUGH_GAIN),
        check_tbptt_full_window(trials, seed),
        check_uoro(uoro_samples, seed),
        check_kernels(trials, seed),
    ]
