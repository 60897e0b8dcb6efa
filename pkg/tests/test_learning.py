import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nspda import verification as v
from nspda.cells import STRAIGHT_THROUGH_GAIN, NSPDACell
from nspda.exceptions import InputError
from nspda.fast import nspda_gradient
from nspda.learning import (EPS, OptimizerConfig, RefinementSchedule, bptt_vector, clip, instantaneous_loss,
                            learning_rate, refinement_loss, rtrl_vector, scope_weights, sgd_step)
from nspda.model import init_params


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.floats(0.1, 50))
def test_clip_is_idempotent(g, m):
    g = np.asarray(g)
    once = clip(g, m)
    assert np.array_equal(clip(once, m), once)
    assert np.all(np.abs(once) <= m)


def test_clip_example():
    assert clip(np.array([100.0, -100.0, 3.0]), 13).tolist() == [13.0, -13.0, 3.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.integers(0, 1))
def test_loss_is_nonnegative(preds, y):
    loss = refinement_loss(preds, y, [1] * len(preds))
    assert loss >= 0
    exact = refinement_loss([float(y)] * len(preds), y, [1] * len(preds))
    assert exact <= len(preds) * 1.1 * EPS


def test_loss_positive_when_any_prediction_is_off():
    assert refinement_loss([1.0, 0.6, 1.0], 1, [1, 1, 1]) > 0.5
    assert instantaneous_loss(0.5, 0) == pytest.approx(np.log(2))


def test_refinement_schedule():
    # hinted tokens are presented once, the rest K times
    s = RefinementSchedule((1, 0, 1), K=4)
    assert s.S == (1, 4, 1)
    assert RefinementSchedule.uniform(3, 2).S == (2, 2, 2)
    with pytest.raises(InputError):
        refinement_loss([0.5], 1, s)


def test_learning_rate_schedule():
    cfg = OptimizerConfig(lr_mode="fixed")
    assert learning_rate(cfg, 0, None) == pytest.approx(0.1005000321)
    assert learning_rate(cfg, 100, None) == pytest.approx(0.1005000321 / 2)
    rng = np.random.default_rng(0)
    jittered = [learning_rate(OptimizerConfig(), 0, rng) / 0.1005000321 for _ in range(500)]
    assert 0.5 <= min(jittered) and max(jittered) <= 1.5


def test_sgd_step_clips_before_scaling():
    p = init_params("third", 2, 2, 0)
    g = np.zeros(p.n_params)
    g[0] = 100.0
    q = sgd_step(p, g, OptimizerConfig(lr_mode="fixed", lr0=1.0), 0, None)
    assert p.to_vector()[0] - q.to_vector()[0] == pytest.approx(13.0)


def test_optimizer_validation():
    with pytest.raises(InputError):
        OptimizerConfig(clip_magnitude=0)
    with pytest.raises(InputError):
        OptimizerConfig(algorithm="adam")
    with pytest.raises(InputError):
        OptimizerConfig(truncation_window=0)


def test_gradient_suites_small():
    for result in (v.check_finite_differences(6, seed=3), v.check_rtrl(6, seed=3),
                   v.check_rtrl(6, seed=3, read_gain=STRAIGHT_THROUGH_GAIN),
                   v.check_tbptt_full_window(6, seed=3), v.check_kernels(6, seed=3)):
        assert result.passed, result.line()


def test_short_window_differs_from_full():
    case = next(v.tiny_cases(4, seed=1))
    case = v.TinyCase(case.params, np.array([0, 1, 1, 0, 1]), 1, RefinementSchedule.uniform(5, 4), 3)
    cell = NSPDACell(case.params)
    full = bptt_vector(cell, case.tokens, 1, case.schedule, np.random.default_rng(3))
    short = bptt_vector(cell, case.tokens, 1, case.schedule, np.random.default_rng(3), window=2)
    assert np.max(np.abs(full - short)) > 0


def test_final_scope_routes_agree():
    for case in v.tiny_cases(6, seed=5):
        lw = scope_weights(case.schedule, "final")
        assert lw.sum() == case.schedule.S[-1]
        cell = NSPDACell(case.params, STRAIGHT_THROUGH_GAIN)
        ref = bptt_vector(cell, case.tokens, case.label, case.schedule, np.random.default_rng(0), loss_weights=lw)
        rt = rtrl_vector(cell, case.tokens, case.label, case.schedule, np.random.default_rng(0), loss_weights=lw)
        fast, _ = nspda_gradient(case.params, case.tokens, case.label, case.schedule, "bptt",
                                 np.random.default_rng(0), read_gain=STRAIGHT_THROUGH_GAIN, loss_weights=lw)
        assert v.normwise_error(rt, ref) < 1e-9 and v.normwise_error(fast, ref) < 1e-10


def test_uoro_z_scores_small_sample():
    z, _ = v.uoro_z_scores(n=2000, seed=0)
    assert np.max(z) < 4.0


def test_straight_through_gain_gives_read_gradient():
    case = next(v.tiny_cases(1, seed=0))
    off, _ = nspda_gradient(case.params, case.tokens, case.label, case.schedule, "bptt", np.random.default_rng(0))
    on, _ = nspda_gradient(case.params, case.tokens, case.label, case.schedule, "bptt", np.random.default_rng(0),
                           read_gain=STRAIGHT_THROUGH_GAIN)
    n_ws = case.params.W_s.size
    wa = slice(n_ws, n_ws + case.params.W_a.size)
    assert np.all(off[wa] == 0) and np.any(on[wa] != 0)
