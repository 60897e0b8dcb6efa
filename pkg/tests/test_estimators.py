import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nspda.estimators import BaselineClassifier, NSPDAClassifier, check_labels, check_sequences
from nspda.exceptions import InputError
from nspda.grammars import builtin_grammar, sample_dataset

DATA = sample_dataset(builtin_grammar("anbn"), 20, 20, 1, 10, seed=0)
X = ["".join(s.tokens) for s in DATA]
y = DATA.labels
QUICK = dict(n_tr=3, stage1_epochs=1, stage2_epochs=1, max_epochs=6)


def test_params_round_trip():
    est = NSPDAClassifier(grammar="anbn", K=2)
    assert est.get_params()["K"] == 2
    est.set_params(algorithm="bptt")
    c = clone(est)
    assert c.get_params() == est.get_params()


def test_nspda_fit_predict():
    est = NSPDAClassifier(grammar="anbn", algorithm="bptt", **QUICK).fit(X, y)
    pred = est.predict(X)
    assert pred.shape == (len(X),) and set(np.unique(pred)) <= {0, 1}
    assert 0 <= est.score(X, y) <= 1
    assert est.metrics_.epochs and list(est.classes_) == [0, 1]
    assert est.alphabet_.symbols == ("a", "b")


def test_fit_is_reproducible():
    a = NSPDAClassifier(grammar="anbn", algorithm="uoro", **QUICK).fit(X, y)
    b = NSPDAClassifier(grammar="anbn", algorithm="uoro", **QUICK).fit(X, y)
    assert a.params_.equals(b.params_)


def test_custom_alphabet_without_grammar():
    est = NSPDAClassifier(hint_level="none", n_states=4, algorithm="bptt", **QUICK).fit(X, y)
    assert est.predict(["ab", "ba"]).shape == (2,)
    with pytest.raises(InputError):
        NSPDAClassifier(hint_level="hint2", **QUICK).fit(X, y)
    with pytest.raises(InputError):
        NSPDAClassifier(hint_level="none", **QUICK).fit(X, y)


@pytest.mark.parametrize("kind", ["first_order", "second_order"])
def test_baseline_fit_predict(kind):
    est = BaselineClassifier(kind=kind, hidden=6, noise=(kind == "second_order"), **QUICK).fit(X, y)
    assert est.predict(X[:5]).shape == (5,)


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        NSPDAClassifier(grammar="anbn").predict(["ab"])


def test_input_validation():
    with pytest.raises(InputError):
        check_sequences("abab")
    with pytest.raises(InputError):
        check_sequences([])
    with pytest.raises(InputError):
        check_sequences(["ab", ""])
    with pytest.raises(InputError):
        check_labels([0, 2], 2)
    with pytest.raises(InputError):
        check_labels([0, 1, 1], 2)
    est = NSPDAClassifier(grammar="anbn", algorithm="bptt", **QUICK).fit(X, y)
    with pytest.raises(InputError):
        est.predict(["abc"])
    with pytest.raises(InputError):
        NSPDAClassifier(grammar="anbn", mode="fast").fit(X, y)
    with pytest.raises(InputError):
        BaselineClassifier(kind="gru").fit(X, y)
