import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nspda.baselines import init_baseline
from nspda.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint, to_document
from nspda.exceptions import CheckpointError
from nspda.grammars import builtin_grammar
from nspda.model import init_params
from nspda.programming import program_full


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["second", "third"]), st.integers(1, 5), st.integers(2, 4), st.integers(0, 2**31),
       st.floats(-1e3, 1e3, allow_nan=False))
def test_nspda_round_trip_is_bit_exact(tmp_path_factory, order, J, L, seed, b_o):
    p = init_params(order, J, L, seed)
    p.b_o = b_o
    p.b_s[:] = np.random.default_rng(seed).normal(size=J) * 1e-7
    p.metadata["alphabet"] = [chr(97 + i) for i in range(L)]
    path = tmp_path_factory.mktemp("ck") / "m.json"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert q.equals(p) and q.b_o == p.b_o and q.start == p.start and q.metadata == p.metadata
    assert np.array_equal(q.to_vector(), p.to_vector())


@pytest.mark.parametrize("kind", ["first_order", "second_order"])
def test_baseline_round_trip(tmp_path, kind):
    p = init_baseline(kind, 3, 4, hidden=5)
    save_checkpoint(p, tmp_path / "b.json")
    q = load_checkpoint(tmp_path / "b.json")
    assert q.equals(p) and np.array_equal(q.to_vector(), p.to_vector())


def test_programmed_checkpoint_keeps_start_and_metadata(tmp_path):
    p = program_full(builtin_grammar("dyck2"), "third", 7)
    save_checkpoint(p, tmp_path / "p.json")
    q = load_checkpoint(tmp_path / "p.json")
    assert q.start == p.start and q.metadata["hint_level"] == "full" and q.equals(p)


def test_saving_is_deterministic(tmp_path):
    p = init_params("third", 3, 2, 0)
    save_checkpoint(p, tmp_path / "a.json")
    save_checkpoint(p.copy(), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_version_mismatch(tmp_path):
    doc = to_document(init_params("third", 3, 2, 0))
    doc["format_version"] = FORMAT_VERSION + 1
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(tmp_path / "v.json")


@pytest.mark.parametrize("text", ["not json", "[1, 2]", '{"format_version": 1}',
                                  '{"format_version": 1, "kind": "nspda", "tensors": {}, "biases": {}, "J": 2, "L": 2}'])
def test_malformed(tmp_path, text):
    (tmp_path / "bad.json").write_text(text)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.json")


def test_wrong_value_count(tmp_path):
    doc = to_document(init_params("third", 3, 2, 0))
    doc["tensors"]["W_s"]["values"].pop()
    (tmp_path / "w.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "w.json")
