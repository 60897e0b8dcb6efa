"""Experiment engine behind the command line: configuration, dataset files,
training runs with replicates, evaluation and aggregate tables."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .baselines import KINDS, BaselineParams, baseline_predict, init_baseline
from .cells import STRAIGHT_THROUGH_GAIN
from .checkpoint import save_checkpoint
from .exceptions import InputError
from .grammars import Alphabet, Dataset, builtin_grammar, sample_dataset, sample_length_bucket, split_dataset
from .learning import LR0, OptimizerConfig
from .model import ORDERS, ModelParams, classify_many, init_params, size_state_count
from .programming import insert_hints
from .protocols import CurriculumConfig, EpochRecord, Learner, NoiseConfig, RunMetrics, run_curriculum

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {v!r}")


def _lengths(v: str) -> tuple[int, ...]:
    out = tuple(int(x) for x in str(v).replace(" ", "").split(",") if x)
    if not out or min(out) < 1:
        raise InputError(f"bad length list {v!r}")
    return out


def parse_range(v: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in str(v).split(":"))
    except ValueError as exc:
        raise InputError(f"length range must look like LOW:HIGH, got {v!r}") from exc
    if not 1 <= lo <= hi:
        raise InputError(f"bad length range {v!r}")
    return lo, hi


@dataclass(frozen=True)
class ExperimentConfig:
    grammar: str = "anbn"
    model: str = "third"            # third | second | first_order | second_order
    states: int | None = None       # J; None draws it from the grammar's state count
    hidden: int = 32                # baselines only
    hints: str = "hint2"
    algo: str = "uoro"
    window: int = 50
    lr0: float = LR0
    clip: float = 13.0
    read_gain: float = STRAIGHT_THROUGH_GAIN
    K: int = 4
    loss_scope: str = "all"
    mode: str = "2il"
    ntr: int = 14
    stage1_cap: int = 200
    stage2_cap: int = 350
    global_cap: int = 500
    noise: bool = True
    noise_np: float = 0.1
    noise_beta: float = 0.01
    noise_mode: str = "multiplicative"
    noise_every: str = "sample"
    data_pos: int = 1987
    data_neg: int = 2021
    data_len: tuple[int, int] = (1, 21)
    data_seed: int = 7
    eval_lengths: tuple[int, ...] = (60,)
    eval_size: int = 10_000
    model_seed: int = 0
    train_seed: int = 0
    replicates: int = 5
    out: str = "runs"

    def __post_init__(self) -> None:
        builtin_grammar(self.grammar)
        if self.model not in ORDERS + KINDS:
            raise InputError(f"model must be one of {ORDERS + KINDS}")
        if self.replicates < 1:
            raise InputError("replicates must be at least 1")

    @property
    def is_nspda(self) -> bool:
        return self.model in ORDERS


# config-file key -> (field, parser)
KEYS: dict[str, tuple[str, Callable[[str], Any]]] = {
    "grammar": ("grammar", str),
    "model.order": ("model", str),
    "model.states": ("states", lambda v: None if str(v) in ("", "auto") else int(v)),
    "model.hidden": ("hidden", int),
    "model.hints": ("hints", str),
    "opt.algo": ("algo", str),
    "opt.window": ("window", int),
    "opt.lr0": ("lr0", float),
    "opt.clip": ("clip", float),
    "opt.read_gain": ("read_gain", float),
    "opt.k": ("K", int),
    "opt.loss_scope": ("loss_scope", str),
    "curriculum.mode": ("mode", str),
    "curriculum.ntr": ("ntr", int),
    "curriculum.stage1_cap": ("stage1_cap", int),
    "curriculum.stage2_cap": ("stage2_cap", int),
    "curriculum.global_cap": ("global_cap", int),
    "noise.enabled": ("noise", _bool),
    "noise.np": ("noise_np", float),
    "noise.beta": ("noise_beta", float),
    "noise.mode": ("noise_mode", str),
    "noise.every": ("noise_every", str),
    "data.pos": ("data_pos", int),
    "data.neg": ("data_neg", int),
    "data.len": ("data_len", parse_range),
    "data.seed": ("data_seed", int),
    "eval.lengths": ("eval_lengths", _lengths),
    "eval.size": ("eval_size", int),
    "seed.model": ("model_seed", int),
    "seed.train": ("train_seed", int),
    "replicates": ("replicates", int),
    "out": ("out", str),
}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{path}:{n}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def build_config(values: dict[str, Any], base: ExperimentConfig | None = None) -> ExperimentConfig:
    changes: dict[str, Any] = {}
    for key, value in values.items():
        if value is None:
            continue
        if key not in KEYS:
            raise InputError(f"unknown config key {key!r}")
        name, parse = KEYS[key]
        try:
            changes[name] = parse(value) if isinstance(value, str) else value
        except ValueError as exc:
            raise InputError(f"bad value for {key}: {value!r}") from exc
    cfg = replace(base or ExperimentConfig(), **changes)
    if os.environ.get("NSPDA_OUT"):
        cfg = replace(cfg, out=os.environ["NSPDA_OUT"])
    return cfg


def config_lines(cfg: ExperimentConfig) -> list[str]:
    inverse = {name: key for key, (name, _) in KEYS.items()}
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "data_len":
            v = f"{v[0]}:{v[1]}"
        elif f.name == "eval_lengths":
            v = ",".join(str(x) for x in v)
        elif v is None:
            v = "auto"
        lines.append(f"{inverse[f.name]} = {v}")
    return lines


# -- data ---------------------------------------------------------------------


def make_datasets(grammar: str, n_pos: int, n_neg: int, len_range: tuple[int, int], seed: int,
                  eval_lengths: tuple[int, ...] = (60,), eval_size: int = 10_000) -> dict[str, Dataset]:
    """80/10/10 splits plus a fresh balanced set per evaluation length."""
    pda = builtin_grammar(grammar)
    data = sample_dataset(pda, n_pos, n_neg, len_range[0], len_range[1], seed)
    sets = dict(zip(SPLITS, split_dataset(data)))
    for i, n in enumerate(eval_lengths):
        sets[f"len{n}"] = sample_length_bucket(pda, n, eval_size, seed + 1000 + i)
    return sets


def write_datasets(sets: dict[str, Dataset], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, data in sets.items():
        path = out / (f"{name}.txt" if name in SPLITS else f"test_{name}.txt")
        data.save(path)
        paths.append(path)
    return paths


def read_datasets(data_dir: str | Path) -> dict[str, Dataset]:
    d = Path(data_dir)
    missing = [s for s in SPLITS if not (d / f"{s}.txt").is_file()]
    if missing:
        raise FileNotFoundError(f"{d}: missing {', '.join(m + '.txt' for m in missing)}")
    sets = {s: Dataset.load(d / f"{s}.txt") for s in SPLITS}
    for path in sorted(d.glob("test_len*.txt"), key=lambda p: int(p.stem[len("test_len"):])):
        sets[path.stem[len("test_"):]] = Dataset.load(path)
    return sets


# -- models and evaluation ----------------------------------------------------


def initial_model(cfg: ExperimentConfig, seed: int) -> ModelParams | BaselineParams:
    pda = builtin_grammar(cfg.grammar)
    if cfg.is_nspda:
        J = cfg.states or size_state_count(cfg.model, pda.M, np.random.default_rng(seed))
        params = insert_hints(init_params(cfg.model, J, pda.L, seed), pda, cfg.hints)
    else:
        params = init_baseline(cfg.model, pda.L, seed, cfg.hidden)
    params.metadata.update(grammar=cfg.grammar, alphabet=list(pda.alphabet.symbols))
    return params


def model_alphabet(params) -> Alphabet:
    symbols = params.metadata.get("alphabet")
    if not symbols:
        raise InputError("the model does not record its alphabet")
    return Alphabet(tuple(symbols))


def predict(params, data: Dataset, seed: int = 0, noise: str = "sample") -> np.ndarray:
    alphabet = model_alphabet(params)
    encoded = [alphabet.encode(s.tokens) for s in data.samples]
    if isinstance(params, ModelParams):
        return classify_many(params, encoded, np.random.default_rng(seed), noise)
    return baseline_predict(params, encoded) > 0.5


def error_percent(params, data: Dataset, seed: int = 0, noise: str = "sample") -> float:
    if len(data) == 0:
        raise InputError("cannot evaluate on an empty set")
    wrong = predict(params, data, seed, noise) != data.labels.astype(bool)
    return 100.0 * float(wrong.sum()) / len(data)


def evaluate(params, sets: dict[str, Dataset], seed: int = 0) -> dict[str, float]:
    """Error % on every test set, plus ``pooled`` over all of them."""
    out: dict[str, float] = {}
    wrong = total = 0
    for name, data in sets.items():
        e = error_percent(params, data, seed)
        out[name] = e
        wrong += round(e * len(data) / 100.0)
        total += len(data)
    if total:
        out["pooled"] = 100.0 * wrong / total
    return out


def test_sets(sets: dict[str, Dataset]) -> dict[str, Dataset]:
    return {k: v for k, v in sets.items() if k == "test" or k.startswith("len")}


# -- training -----------------------------------------------------------------


@dataclass
class ReplicateResult:
    replicate: int
    metrics: RunMetrics
    params: Any = field(repr=False, default=None)
    wall_time: float = 0.0


def train_replicate(cfg: ExperimentConfig, sets: dict[str, Dataset], replicate: int = 0,
                    on_epoch: Callable[[EpochRecord], None] | None = None) -> ReplicateResult:
    """One training run; seeds are offset by the replicate index."""
    import time

    model_seed, train_seed = cfg.model_seed + replicate, cfg.train_seed + replicate
    params = initial_model(cfg, model_seed)
    pda = builtin_grammar(cfg.grammar)
    opt = OptimizerConfig(algorithm=cfg.algo, truncation_window=cfg.window, clip_magnitude=cfg.clip, lr0=cfg.lr0,
                          seed=train_seed, read_gain=cfg.read_gain if cfg.is_nspda else 0.0,
                          loss_scope=cfg.loss_scope)
    learner = Learner(params, opt, pda=pda if cfg.is_nspda else None,
                      hint_level=cfg.hints if cfg.is_nspda else "none", K=cfg.K, noise_seed=train_seed)
    noise = NoiseConfig(cfg.noise_np, cfg.noise_beta, cfg.noise and cfg.model != "first_order", train_seed,
                        cfg.noise_mode, cfg.noise_every)
    curriculum = CurriculumConfig(cfg.ntr, cfg.stage1_cap, cfg.stage2_cap, cfg.global_cap)
    start = time.perf_counter()
    if on_epoch is not None:
        on_epoch(initial_record(params, sets, train_seed))
    learner, metrics = run_curriculum(learner, sets["train"], sets.get("validation"), curriculum, noise, cfg.mode,
                                      on_epoch)
    metrics.test_error = evaluate(learner.params, test_sets(sets), seed=train_seed)
    return ReplicateResult(replicate, metrics, learner.params, time.perf_counter() - start)


def initial_record(params, sets: dict[str, Dataset], seed: int) -> EpochRecord:
    """Epoch-0 record of the untrained model (its own read-noise stream, so training is unaffected)."""
    train = 1.0 - error_percent(params, sets["train"], seed) / 100.0
    val = sets.get("validation")
    val_acc = 1.0 - error_percent(params, val, seed) / 100.0 if val is not None and len(val) else None
    return EpochRecord(0, "initial", 0, train, val_acc, 0)


def _record_line(rec: EpochRecord) -> str:
    d = asdict(rec)
    d.pop("wall_time")
    return json.dumps(d, sort_keys=True)


def run_experiment(cfg: ExperimentConfig, sets: dict[str, Dataset], out_dir: str | Path | None = None,
                   replicates: int | None = None) -> list[ReplicateResult]:
    """Train every replicate; with ``out_dir`` write checkpoints, metrics and the aggregate table.

    Metrics files hold no wall-clock values so identical seeds give identical
    files; timings go to ``timing.json``.
    """
    n = cfg.replicates if replicates is None else replicates
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text("\n".join(config_lines(cfg)) + "\n")
    results = []
    for r in range(n):
        lines: list[str] = []
        res = train_replicate(cfg, sets, r, lambda rec: lines.append(_record_line(rec)))
        results.append(res)
        logger.info("replicate %d: converged=%s epochs=%s test=%s", r, res.metrics.converged,
                    len(res.metrics.epochs), res.metrics.test_error)
        if out is not None:
            final = {k: v for k, v in res.metrics.as_dict().items() if k != "epochs"}
            lines.append(json.dumps({"final": final}, sort_keys=True))
            (out / f"metrics_rep{r}.jsonl").write_text("\n".join(lines) + "\n")
            save_checkpoint(res.params, out / f"checkpoint_rep{r}.json")
    if out is not None:
        write_aggregate(results, out / "aggregate.csv")
        (out / "timing.json").write_text(json.dumps({f"rep{r.replicate}": round(r.wall_time, 3) for r in results},
                                                    indent=1) + "\n")
    return results


def aggregate_rows(results: list[ReplicateResult]) -> list[dict[str, Any]]:
    names = sorted({k for r in results for k in r.metrics.test_error})
    rows = []
    for r in results:
        m = r.metrics
        row = {"replicate": r.replicate, "converged": int(m.converged), "epochs": len(m.epochs),
               "epochs_to_convergence": m.epochs_to_convergence, "characters_to_convergence": m.characters_to_convergence,
               "train_error": m.train_error}
        row.update({f"test_error_{k}": m.test_error.get(k) for k in names})
        rows.append(row)
    mean = {"replicate": "mean"}
    for key in rows[0]:
        if key == "replicate":
            continue
        vals = [row[key] for row in rows if row[key] is not None]
        mean[key] = float(np.mean(vals)) if vals and len(vals) == len(rows) else None
    return rows + [mean]


def write_aggregate(results: list[ReplicateResult], path: str | Path) -> None:
    rows = aggregate_rows(results)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
