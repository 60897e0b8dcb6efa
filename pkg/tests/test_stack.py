import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nspda.exceptions import InputError
from nspda.stack import (ALPHA_ABSENT, ALPHA_POPPED, ALPHA_TOP, BOTTOM, Stack, apply_action, arbitrate_action,
                         decode_read, noise_uniforms, read_vector)

L = 3


def _action(kind, sym):
    a = np.zeros(L)
    if kind == "push":
        a[sym] = 1
    elif kind == "pop":
        a[sym] = -1
    return a


actions = st.lists(st.tuples(st.sampled_from(["push", "pop", "noop"]), st.integers(0, L - 1)), max_size=30)


def test_intervals_are_disjoint():
    bounds = sorted([ALPHA_ABSENT, ALPHA_POPPED, ALPHA_TOP])
    assert all(a[1] < b[0] for a, b in zip(bounds, bounds[1:]))


@settings(max_examples=100, deadline=None)
@given(actions, st.integers(0, 2**32 - 1))
def test_replay_is_deterministic_and_bottom_stays(seq, seed):
    def run():
        s, popped = Stack(), None
        for kind, sym in seq:
            s, popped = apply_action(s, _action(kind, sym))
            assert s.items[0] == BOTTOM and BOTTOM not in s.items[1:]
        return s, popped

    assert run() == run()


@settings(max_examples=100, deadline=None)
@given(actions, st.integers(0, 2**32 - 1), st.sampled_from(["sample", "low", "high", "mid"]))
def test_read_decodes_to_stack_top(seq, seed, mode):
    rng = np.random.default_rng(seed)
    s, popped = Stack(), None
    for kind, sym in seq:
        s, popped = apply_action(s, _action(kind, sym))
        top, seen = decode_read(read_vector(s, L, popped, rng, mode))
        assert top == s.top
        if popped is not None and popped != s.top:
            assert seen == popped


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, L - 1), max_size=10), st.integers(0, L - 1))
def test_push_then_pop_restores(items, sym):
    s = Stack((BOTTOM, *items))
    pushed, _ = apply_action(s, _action("push", sym))
    back, popped = apply_action(pushed, _action("pop", sym))
    assert back.items == s.items and popped == sym and not back.illegal_pop_flag


def test_pop_on_empty_sets_flag():
    s, popped = apply_action(Stack(), _action("pop", 0))
    assert s.items == (BOTTOM,) and s.illegal_pop_flag and popped is None


def test_mismatched_pop_flags():
    s, popped = apply_action(Stack((BOTTOM, 1)), _action("pop", 0))
    assert s.items == (BOTTOM,) and popped == 1 and s.illegal_pop_flag


def test_arbitration_keeps_largest_magnitude():
    out = arbitrate_action(np.array([0.7, -2.0, 1.5]), np.array([1, -1, 1]))
    assert out.tolist() == [0, -1, 0]
    tie = arbitrate_action(np.array([1.0, -1.0, 0.0]), np.array([1, -1, 0]))
    assert tie.tolist() == [1, 0, 0]


def test_unarbitrated_action_rejected():
    with pytest.raises(InputError):
        apply_action(Stack(), np.array([1.0, 1.0, 0.0]))


def test_bad_stack_rejected():
    with pytest.raises(InputError):
        Stack((0, BOTTOM))


def test_noise_modes():
    assert noise_uniforms(2, "low", None).tolist() == [0, 0]
    assert noise_uniforms(2, "high", None).tolist() == [1, 1]
    with pytest.raises(InputError):
        noise_uniforms(2, "sample", None)
    with pytest.raises(InputError):
        noise_uniforms(2, "bogus", None)


def test_read_outside_intervals_rejected():
    with pytest.raises(InputError):
        decode_read(np.array([0.5, 0.001, 0.001]))
