"""Training procedures: the adaptive tensor-noise regularizer, single training
stages, and the curricula (two-stage incremental, single-stage incremental,
standard)."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .baselines import BaselineCell, BaselineParams, baseline_predict
from .cells import NSPDACell
from .exceptions import InputError
from .fast import nspda_gradient
from .grammars import Alphabet, Dataset, LabeledString, PdaSpec, curriculum_slice
from .learning import (OptimizerConfig, RefinementSchedule, bptt_vector, rtrl_vector, scope_weights, sgd_step,
                       uoro_vector)
from .model import ModelParams, classify_many
from .programming import hint_mask, hinted_transitions

logger = logging.getLogger(__name__)

MODES = ("2il", "il", "standard")


@dataclass(frozen=True)
class CurriculumConfig:
    N_Tr: int = 14
    stage1_epoch_cap: int = 200
    stage2_epoch_cap: int = 350
    global_epoch_cap: int = 500

    def __post_init__(self) -> None:
        if self.N_Tr < 1:
            raise InputError("N_Tr must be at least 1")
        if min(self.stage1_epoch_cap, self.stage2_epoch_cap, self.global_epoch_cap) < 0:
            raise InputError("epoch caps must be non-negative")


@dataclass(frozen=True)
class NoiseConfig:
    N_p: float = 0.1
    beta: float = 0.01
    enabled: bool = True
    seed: int = 0
    mode: str = "multiplicative"  # or "replace": the literal M <- (p̂·β)·M
    every: str = "sample"  # or "epoch": one perturbation at the start of each epoch

    def __post_init__(self) -> None:
        if self.enabled and not 0.08 <= self.N_p <= 0.30:
            raise InputError("N_p must lie in [0.08, 0.30] when noise is enabled")
        if self.mode not in ("multiplicative", "replace"):
            raise InputError("noise mode must be 'multiplicative' or 'replace'")
        if self.every not in ("sample", "epoch"):
            raise InputError("noise must be applied every 'sample' or every 'epoch'")


def create_partitions(W: np.ndarray, N_p: float, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Pick ⌈N_p·|P|⌉ matrices from each of three contiguous partitions.

    The matrices are the slices obtained by fixing the first two indices of a
    4-D tensor, or the first index of a 3-D one.  Partition sizes are
    ⌊n/3⌋, ⌊n/3⌋ and the remainder; picks are returned partition by
    partition, ascending within each.
    """
    if W.ndim == 4:
        lead = W.shape[:2]
    elif W.ndim == 3:
        lead = W.shape[:1]
    else:
        raise InputError("noise partitions need a 3-D or 4-D tensor")
    n = int(np.prod(lead))
    if n < 3:
        raise InputError(f"need at least 3 matrices to partition, got {n}")
    base = n // 3
    bounds = [(0, base), (base, 2 * base), (2 * base, n)]
    picks: list[tuple[int, ...]] = []
    for lo, hi in bounds:
        size = hi - lo
        k = min(size, math.ceil(N_p * size - 1e-12))
        chosen = np.sort(rng.choice(size, size=k, replace=False)) + lo
        picks += [tuple(int(v) for v in np.unravel_index(c, lead)) for c in chosen]
    return picks


def _noisy_tensors(params) -> list[str]:
    if isinstance(params, ModelParams):
        return ["W_s", "W_a"]
    if params.kind == "second_order":
        return ["W"]
    return []


def apply_adaptive_noise(params, config: NoiseConfig, rng: np.random.Generator):
    """Return a copy with selected weight matrices scaled by (1 + p̂β), halving p̂ after each."""
    out = params.copy()
    if not config.enabled:
        return out
    p_hat = rng.standard_normal()
    for name in _noisy_tensors(out):
        W = getattr(out, name) if isinstance(out, ModelParams) else out.weights[name]
        lead = W.shape[:2] if W.ndim == 4 else W.shape[:1]
        if int(np.prod(lead)) < 3:
            continue
        for idx in create_partitions(W, config.N_p, rng):
            if config.mode == "multiplicative":
                W[idx] *= 1.0 + p_hat * config.beta
            else:
                W[idx] *= p_hat * config.beta
            p_hat /= 2.0
    return out


# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    slice_max_len: int
    train_accuracy: float
    validation_accuracy: float | None
    characters: int
    wall_time: float = 0.0


@dataclass
class RunMetrics:
    epochs: list[EpochRecord] = field(default_factory=list)
    converged: bool = False
    epochs_to_convergence: int | None = None
    characters_to_convergence: int | None = None
    train_error: float | None = None
    test_error: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


class Learner:
    """A model plus everything needed to train and score it.

    Random streams: ``rng`` drives shuffling and learning-rate jitter,
    ``read_rng`` the stack-read noise, ``sign_rng`` the UORO sign vectors,
    ``noise_rng`` the weight noise, ``eval_rng`` the evaluation reads.
    """

    def __init__(self, params, optimizer: OptimizerConfig, *, pda: PdaSpec | None = None,
                 hint_level: str = "none", K: int = 4, noise_seed: int = 0, fast: bool = True,
                 eval_noise: str = "sample"):
        self.params = params
        self.optimizer = optimizer
        self.pda = pda
        self.hint_level = hint_level
        self.K = K
        self.fast = fast
        self.eval_noise = eval_noise
        root = np.random.SeedSequence(optimizer.seed)
        s_train, s_read, s_sign, s_eval = root.spawn(4)
        self.rng = np.random.default_rng(s_train)
        self.read_rng = np.random.default_rng(s_read)
        self.sign_rng = np.random.default_rng(s_sign)
        self.eval_rng = np.random.default_rng(s_eval)
        self.noise_rng = np.random.default_rng(noise_seed)
        self._hinted = hinted_transitions(pda, hint_level) if pda is not None else frozenset()
        self._schedules: dict = {}
        self._alphabet = None

    @property
    def is_nspda(self) -> bool:
        return isinstance(self.params, ModelParams)

    def encode(self, data: Dataset) -> list[np.ndarray]:
        alphabet = self.pda.alphabet if self.pda is not None else None
        if alphabet is None:
            symbols = self.params.metadata.get("alphabet")
            if symbols is None:
                raise InputError("learner needs a PDA or an alphabet in the model metadata")
            alphabet = Alphabet(tuple(symbols))
        return [alphabet.encode(s.tokens) for s in data.samples]

    def schedule(self, sample: LabeledString) -> RefinementSchedule:
        key = (sample.tokens, sample.derivation)
        if key not in self._schedules:
            if self._hinted and self.pda is not None:
                H = hint_mask(self.pda, self._hinted, sample.tokens, sample.derivation)
            else:
                H = np.zeros(len(sample), dtype=np.int64)
            self._schedules[key] = RefinementSchedule(tuple(H), self.K)
        return self._schedules[key]

    def gradient(self, params, toks: np.ndarray, y: int, schedule: RefinementSchedule) -> np.ndarray:
        opt = self.optimizer
        lw = scope_weights(schedule, opt.loss_scope)
        if self.is_nspda and self.fast and opt.algorithm != "rtrl":
            g, _ = nspda_gradient(params, toks, y, schedule, opt.algorithm, self.read_rng, self.sign_rng,
                                  opt.read_gain, opt.truncation_window, lw)
            return g
        cell = NSPDACell(params, opt.read_gain) if self.is_nspda else BaselineCell(params)
        if opt.algorithm == "bptt":
            return bptt_vector(cell, toks, y, schedule, self.read_rng, loss_weights=lw)
        if opt.algorithm == "tbptt":
            return bptt_vector(cell, toks, y, schedule, self.read_rng, opt.truncation_window, lw)
        if opt.algorithm == "rtrl":
            return rtrl_vector(cell, toks, y, schedule, self.read_rng, opt.max_jacobian_entries, lw)
        return uoro_vector(cell, toks, y, schedule, self.read_rng, self.sign_rng, lw)

    def predict(self, encoded: Sequence[np.ndarray]) -> np.ndarray:
        if not encoded:
            return np.zeros(0, dtype=bool)
        if self.is_nspda:
            return classify_many(self.params, encoded, self.eval_rng, self.eval_noise)
        return baseline_predict(self.params, encoded) > 0.5

    def accuracy(self, data: Dataset) -> float | None:
        if len(data) == 0:
            return None
        pred = self.predict(self.encode(data))
        return float(np.mean(pred == data.labels.astype(bool)))


@dataclass
class _Progress:
    epoch: int = 0
    characters: int = 0
    metrics: RunMetrics = field(default_factory=RunMetrics)
    on_epoch: Callable[[EpochRecord], None] | None = None
    start: float = field(default_factory=time.perf_counter)


def _converged(learner: Learner, data: Dataset, validation: Dataset | None) -> tuple[bool, float, float | None]:
    train_acc = learner.accuracy(data)
    val_acc = None
    if validation is not None and len(validation):
        val = curriculum_slice(validation, max(data.max_len, 1))
        val_acc = learner.accuracy(val)
    ok = (train_acc is None or train_acc == 1.0) and (val_acc is None or val_acc == 1.0)
    return ok, (train_acc if train_acc is not None else 1.0), val_acc


def train_stage(learner: Learner, data_slice: Dataset, epochs_cap: int, lr_mode: str, noise: NoiseConfig,
                validation: Dataset | None, optimizer: OptimizerConfig | None = None, *,
                shuffle: bool = True, check_first: bool = True, stop_on_convergence: bool = True,
                phase: str = "train", progress: _Progress | None = None) -> tuple[Learner, int, int]:
    """Single-pass epochs over a slice until convergence or the cap.

    Returns (learner, epochs used, characters consumed).  Characters count
    every token presented once per presentation of its string; refinement
    repeats are not new characters.
    """
    if len(data_slice) == 0:
        raise InputError("cannot train on an empty slice")
    if optimizer is not None:
        learner.optimizer = optimizer
    opt = replace(learner.optimizer, lr_mode=lr_mode)
    progress = progress if progress is not None else _Progress()
    encoded = learner.encode(data_slice)
    samples = data_slice.samples
    used, chars = 0, 0
    if epochs_cap <= 0:
        return learner, 0, 0
    if check_first and stop_on_convergence and _converged(learner, data_slice, validation)[0]:
        return learner, 0, 0
    while used < epochs_cap:
        order = learner.rng.permutation(len(samples)) if shuffle else np.arange(len(samples))
        if noise.enabled and noise.every == "epoch":
            learner.params = apply_adaptive_noise(learner.params, noise, learner.noise_rng)
        for i in order:
            s = samples[i]
            params = learner.params
            if noise.enabled and noise.every == "sample":
                params = apply_adaptive_noise(params, noise, learner.noise_rng)
            g = learner.gradient(params, encoded[i], s.label, learner.schedule(s))
            learner.params = sgd_step(params, g, opt, progress.epoch, learner.rng)
            chars += len(s)
        used += 1
        progress.epoch += 1
        progress.characters += sum(len(s) for s in samples)
        done, tr, va = _converged(learner, data_slice, validation)
        rec = EpochRecord(progress.epoch, phase, data_slice.max_len, tr, va, progress.characters,
                          round(time.perf_counter() - progress.start, 3))
        progress.metrics.epochs.append(rec)
        if progress.on_epoch is not None:
            progress.on_epoch(rec)
        if done and stop_on_convergence:
            break
    return learner, used, chars


def _sequential(learner, data, upto, lr_mode, noise, validation, progress, cap_left, phase):
    for n in range(1, upto + 1):
        if cap_left() <= 0:
            return
        part = curriculum_slice(data, n)
        if len(part) == 0:
            logger.info("curriculum slice of length <= %d is empty; skipped", n)
            continue
        train_stage(learner, part, 1, lr_mode, noise, validation, check_first=False,
                    stop_on_convergence=False, shuffle=False, phase=f"{phase}-seq", progress=progress)


def run_curriculum(learner: Learner, dataset: Dataset, validation: Dataset | None,
                   config: CurriculumConfig, noise: NoiseConfig, mode: str = "2il",
                   on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[Learner, RunMetrics]:
    """Train with one of the curricula and return (learner, metrics).

    * ``2il``: stage 1 (sequential slices 1..N_Tr, then random passes over
      the ≤ N_Tr slice until convergence or the stage-1 cap; stochastic
      learning rate, no weight noise) followed by stage 2 (the same over
      1..N_max and the full data, with fixed learning rate and weight noise).
    * ``il``: stage 2 alone.
    * ``standard``: the random phase of stage 2 alone, on the full data.

    Every run halts after ``global_epoch_cap`` epochs in total.  Convergence
    counts only when reached on the full dataset.
    """
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    if len(dataset) == 0:
        raise InputError("dataset is empty")
    progress = _Progress(on_epoch=on_epoch)
    N_max = dataset.max_len
    N_Tr = min(config.N_Tr, N_max)
    quiet = replace(noise, enabled=False)

    def cap_left() -> int:
        return config.global_epoch_cap - progress.epoch

    if mode == "2il":
        _sequential(learner, dataset, N_Tr, "stochastic", quiet, validation, progress, cap_left, "stage1")
        cap = min(config.stage1_epoch_cap, cap_left())
        train_stage(learner, curriculum_slice(dataset, N_Tr), cap, "stochastic", quiet, validation,
                    phase="stage1-random", progress=progress)
    if mode in ("2il", "il"):
        _sequential(learner, dataset, N_max, "fixed", noise, validation, progress, cap_left, "stage2")
    cap = min(config.stage2_epoch_cap if mode != "standard" else config.global_epoch_cap, cap_left())
    train_stage(learner, dataset, cap, "fixed", noise, validation, phase="stage2-random", progress=progress)

    m = progress.metrics
    done, tr, _ = _converged(learner, dataset, validation)
    m.converged = done
    m.train_error = 100.0 * (1.0 - tr)
    if done:
        m.epochs_to_convergence = progress.epoch
        m.characters_to_convergence = progress.characters
    return learner, m


def two_stage_incremental(learner: Learner, dataset: Dataset, validation: Dataset | None,
                          config: CurriculumConfig, optimizer: OptimizerConfig | None = None,
                          noise: NoiseConfig | None = None, on_epoch=None) -> tuple[Learner, RunMetrics]:
    if optimizer is not None:
        learner.optimizer = optimizer
    return run_curriculum(learner, dataset, validation, config, noise or NoiseConfig(), "2il", on_epoch)
