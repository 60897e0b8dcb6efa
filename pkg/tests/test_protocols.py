import copy
from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nspda.baselines import init_baseline
from nspda.exceptions import InputError
from nspda.grammars import builtin_grammar, curriculum_slice, sample_dataset, split_dataset
from nspda.learning import OptimizerConfig
from nspda.model import init_params
from nspda.programming import insert_hints, program_full
from nspda.protocols import (CurriculumConfig, EpochRecord, Learner, NoiseConfig, RunMetrics, apply_adaptive_noise,
                             create_partitions, run_curriculum, train_stage, two_stage_incremental)

PDA = builtin_grammar("anbn")
DATA = sample_dataset(PDA, 12, 12, 1, 8, seed=1)
TRAIN, VAL, _ = split_dataset(DATA, (0.75, 0.25, 0.0))


def _learner(seed=0, K=4, algo="bptt", params=None, hint="hint2"):
    params = params if params is not None else insert_hints(init_params("third", 7, 2, seed), PDA, hint)
    return Learner(params, OptimizerConfig(algorithm=algo, seed=seed), pda=PDA, hint_level=hint, K=K,
                   noise_seed=seed)


def test_partition_sizes():
    W = np.zeros((4, 4, 2, 2))
    picks = create_partitions(W, 0.1, np.random.default_rng(0))
    flat = [i * 4 + j for i, j in picks]
    # partitions [0,5), [5,10), [10,16): one pick each
    assert len(flat) == 3 and flat[0] < 5 <= flat[1] < 10 <= flat[2]
    picks = create_partitions(W, 0.3, np.random.default_rng(0))
    assert len(picks) == 2 + 2 + 2


def test_partition_three_dimensional():
    picks = create_partitions(np.zeros((9, 5, 4)), 0.3, np.random.default_rng(0))
    assert all(len(p) == 1 for p in picks) and len(picks) == 3
    with pytest.raises(InputError):
        create_partitions(np.zeros((2, 5, 4)), 0.1, np.random.default_rng(0))
    with pytest.raises(InputError):
        create_partitions(np.zeros((9, 5)), 0.1, np.random.default_rng(0))


def test_noise_config_bounds():
    with pytest.raises(InputError):
        NoiseConfig(N_p=0.5)
    NoiseConfig(N_p=0.5, enabled=False)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 7), st.integers(2, 3), st.floats(0.08, 0.3), st.integers(0, 10_000),
       st.sampled_from(["multiplicative", "replace"]))
def test_noise_touches_only_selected_matrices(J, L, N_p, seed, mode):
    p = init_params("third", J, L, seed)
    cfg = NoiseConfig(N_p=N_p, beta=0.5, mode=mode)
    rng = np.random.default_rng(seed)
    mirror = copy.deepcopy(rng)
    out = apply_adaptive_noise(p, cfg, rng)
    mirror.standard_normal()
    for name in ("W_s", "W_a"):
        before, after = getattr(p, name), getattr(out, name)
        assert after.shape == before.shape
        picks = set(create_partitions(before, N_p, mirror))
        for idx in np.ndindex(before.shape[:2]):
            if idx not in picks:
                assert np.array_equal(before[idx], after[idx])
    for name in ("b_s", "b_a", "W_o"):
        assert np.array_equal(getattr(p, name), getattr(out, name))


def test_noise_skips_first_order_and_hits_second_order_tensor():
    first = init_baseline("first_order", 2, 0, hidden=6)
    assert apply_adaptive_noise(first, NoiseConfig(), np.random.default_rng(0)).equals(first)
    second = init_baseline("second_order", 2, 0, hidden=6)
    noisy = apply_adaptive_noise(second, NoiseConfig(beta=1.0), np.random.default_rng(0))
    assert not np.array_equal(noisy.weights["W"], second.weights["W"])


@pytest.mark.parametrize("mode", ["2il", "il", "standard"])
def test_curriculum_terminates_within_cap(mode):
    cfg = CurriculumConfig(N_Tr=4, stage1_epoch_cap=3, stage2_epoch_cap=3, global_epoch_cap=7)
    _, m = run_curriculum(_learner(), TRAIN, VAL, cfg, NoiseConfig(), mode)
    assert len(m.epochs) <= 7
    assert [r.epoch for r in m.epochs] == list(range(1, len(m.epochs) + 1))
    phases = {r.phase for r in m.epochs}
    if mode == "standard":
        assert phases == {"stage2-random"}
    if mode == "il":
        assert not any(p.startswith("stage1") for p in phases)


def test_zero_cap_runs_nothing():
    cfg = CurriculumConfig(global_epoch_cap=0)
    learner = _learner()
    before = learner.params.copy()
    _, m = run_curriculum(learner, TRAIN, VAL, cfg, NoiseConfig(), "2il")
    assert m.epochs == [] and learner.params.equals(before)


@pytest.mark.parametrize("noise", [True, False])
def test_reproducible_under_fixed_seeds(noise):
    cfg = CurriculumConfig(N_Tr=4, stage1_epoch_cap=2, stage2_epoch_cap=2, global_epoch_cap=10)
    runs = [run_curriculum(_learner(algo="uoro"), TRAIN, VAL, cfg, NoiseConfig(enabled=noise), "2il") for _ in range(2)]
    (la, ma), (lb, mb) = runs
    assert la.params.equals(lb.params)
    strip = lambda m: [(r.epoch, r.phase, r.train_accuracy, r.characters) for r in m.epochs]
    assert strip(ma) == strip(mb)


def test_character_accounting_ignores_refinement():
    counts = []
    for K in (1, 4):
        cfg = CurriculumConfig(N_Tr=3, stage1_epoch_cap=1, stage2_epoch_cap=1, global_epoch_cap=20)
        _, m = run_curriculum(_learner(K=K), TRAIN, VAL, cfg, NoiseConfig(enabled=False), "2il")
        counts.append([r.characters for r in m.epochs])
        steps = np.diff([0] + counts[-1])
        for r, d in zip(m.epochs, steps):
            part = curriculum_slice(TRAIN, r.slice_max_len)
            assert d == part.n_characters
    assert counts[0] == counts[1]


def test_converged_model_stops_immediately():
    p = program_full(PDA, "third", 7)
    learner = _learner(params=p, hint="full")
    _, m = run_curriculum(learner, TRAIN, VAL, CurriculumConfig(), NoiseConfig(), "standard")
    assert m.converged and m.epochs == [] and m.epochs_to_convergence == 0 and m.train_error == 0.0


def test_train_stage_reports_characters():
    learner, used, chars = train_stage(_learner(), TRAIN, 2, "fixed", NoiseConfig(enabled=False), None,
                                       stop_on_convergence=False)
    assert used == 2 and chars == 2 * TRAIN.n_characters
    with pytest.raises(InputError):
        train_stage(_learner(), curriculum_slice(TRAIN, 1), 1, "fixed", NoiseConfig(), None)


def test_two_stage_entry_point_and_metrics_schema():
    cfg = CurriculumConfig(N_Tr=3, stage1_epoch_cap=1, stage2_epoch_cap=1, global_epoch_cap=12)
    _, m_nspda = two_stage_incremental(_learner(), TRAIN, VAL, cfg)
    base = init_baseline("first_order", 2, 0, hidden=8)
    base.metadata["alphabet"] = list(PDA.alphabet.symbols)
    _, m_base = run_curriculum(Learner(base, OptimizerConfig(algorithm="bptt")), TRAIN, VAL, cfg,
                               NoiseConfig(enabled=False), "2il")
    assert isinstance(m_base, RunMetrics) and isinstance(m_base.epochs[0], EpochRecord)
    assert asdict(m_nspda).keys() == asdict(m_base).keys()
    assert asdict(m_nspda.epochs[0]).keys() == asdict(m_base.epochs[0]).keys()


def test_empty_dataset_rejected():
    from nspda.grammars import Dataset
    with pytest.raises(InputError):
        run_curriculum(_learner(), Dataset((), "anbn", 0), None, CurriculumConfig(), NoiseConfig(), "2il")
    with pytest.raises(InputError):
        run_curriculum(_learner(), TRAIN, None, CurriculumConfig(), NoiseConfig(), "bogus")


def test_epoch_noise_perturbs_once_per_epoch(monkeypatch):
    import nspda.protocols as proto
    seen = []
    real = proto.apply_adaptive_noise
    monkeypatch.setattr(proto, "apply_adaptive_noise", lambda p, c, r: seen.append(c.every) or real(p, c, r))
    train_stage(_learner(), TRAIN, 2, "fixed", NoiseConfig(every="epoch"), None, stop_on_convergence=False)
    assert seen == ["epoch", "epoch"]
    seen.clear()
    train_stage(_learner(), TRAIN, 1, "fixed", NoiseConfig(), None, stop_on_convergence=False)
    assert len(seen) == len(TRAIN)
    with pytest.raises(InputError):
        NoiseConfig(every="batch")
