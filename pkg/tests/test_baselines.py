import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nspda.baselines import MAX_HIDDEN, BaselineCell, BaselineParams, baseline_predict, baseline_step, init_baseline
from nspda.exceptions import InputError
from nspda.learning import RefinementSchedule, bptt_vector, rtrl_vector, sequence_loss, uoro_vector


def test_shapes_and_limits():
    p = init_baseline("second_order", 3, 0, hidden=5)
    assert p.weights["W"].shape == (5, 5, 3)
    assert init_baseline("first_order", 2, 0, hidden=4).weights["W_rec"].shape == (4, 4)
    with pytest.raises(InputError):
        init_baseline("first_order", 2, 0, hidden=MAX_HIDDEN + 1)
    with pytest.raises(InputError):
        init_baseline("lstm", 2, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 4), st.data())
def test_second_order_one_hot_contraction(H, L, data):
    p = init_baseline("second_order", L, data.draw(st.integers(0, 999)), hidden=H)
    p.weights["b"][:] = np.linspace(-1, 1, H)
    j, l = data.draw(st.integers(0, H - 1)), data.draw(st.integers(0, L - 1))
    h, _ = baseline_step(p, np.eye(H)[j], np.eye(L)[l])
    expected = 1 / (1 + np.exp(-(p.weights["W"][:, j, l] + p.weights["b"])))
    assert np.allclose(h, expected, rtol=0, atol=1e-15)


def _fd(cell_of, p, tokens, y, schedule, h=1e-6):
    theta = p.to_vector()
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        up = sequence_loss(cell_of(p.with_vector(theta + e)), tokens, y, schedule, None)
        dn = sequence_loss(cell_of(p.with_vector(theta - e)), tokens, y, schedule, None)
        g[i] = (up - dn) / (2 * h)
    return g


@pytest.mark.parametrize("kind", ["first_order", "second_order"])
def test_baseline_gradients(kind):
    p = init_baseline(kind, 2, 3, hidden=4)
    p = p.with_vector(p.to_vector() * 20)
    tokens, sched = np.array([0, 1, 1, 0]), RefinementSchedule.uniform(4, 2)
    b = bptt_vector(BaselineCell(p), tokens, 1, sched, None)
    fd = _fd(BaselineCell, p, tokens, 1, sched)
    assert np.max(np.abs(b - fd)) / np.max(np.abs(fd)) < 1e-4
    r = rtrl_vector(BaselineCell(p), tokens, 1, sched, None)
    assert np.max(np.abs(r - b)) / np.max(np.abs(b)) < 1e-6
    u = np.mean([uoro_vector(BaselineCell(p), tokens, 1, sched, None, np.random.default_rng(i)) for i in range(400)],
                axis=0)
    assert np.corrcoef(u, b)[0, 1] > 0.9


def test_predict_matches_stepping():
    p = init_baseline("first_order", 2, 1, hidden=6)
    seqs = [np.array([0, 1, 1]), np.array([1])]
    got = baseline_predict(p, seqs)
    h = np.zeros(6)
    for l in seqs[0]:
        h, y = baseline_step(p, h, np.eye(2)[l])
    assert got[0] == y


def test_congruence_checks():
    p = init_baseline("first_order", 2, 1, hidden=3)
    with pytest.raises(InputError):
        p.with_vector(np.zeros(p.n_params + 1))
    with pytest.raises(InputError):
        BaselineParams("first_order", 3, 2, {**p.weights, "W_rec": np.zeros((2, 2))})
    with pytest.raises(InputError):
        baseline_step(p, np.zeros(3), np.array([1.0, 1.0]))
