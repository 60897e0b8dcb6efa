"""scikit-learn style wrappers around the training procedures.

``X`` is a sequence of strings (each character a token) or of token
sequences; ``y`` holds 0/1 labels.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .baselines import DEFAULT_HIDDEN, KINDS, init_baseline
from .cells import STRAIGHT_THROUGH_GAIN
from .exceptions import InputError
from .grammars import Alphabet, Dataset, LabeledString, as_tokens, builtin_grammar
from .learning import OptimizerConfig
from .model import init_params, size_state_count
from .programming import HINT_LEVELS, insert_hints
from .protocols import MODES, CurriculumConfig, Learner, NoiseConfig, run_curriculum


def check_sequences(X, alphabet: Alphabet | None = None) -> list[tuple[str, ...]]:
    """Token tuples for every item of X; all tokens must belong to ``alphabet`` when given."""
    if isinstance(X, (str, bytes)):
        raise InputError("X must be a collection of sequences, not a single string")
    try:
        seqs = [as_tokens(x) for x in X]
    except TypeError as exc:
        raise InputError("X must be an iterable of sequences") from exc
    if not seqs:
        raise InputError("X is empty")
    for s in seqs:
        if len(s) == 0:
            raise InputError("empty sequences cannot be classified")
        if alphabet is not None:
            bad = [t for t in s if t not in alphabet]
            if bad:
                raise InputError(f"symbol {bad[0]!r} is not in the alphabet {alphabet.symbols}")
    return seqs


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise InputError(f"y must be a 1-D array of {n} labels")
    if not np.isin(y, (0, 1)).all():
        raise InputError("labels must be 0 or 1")
    return y.astype(np.int64)


def _holdout(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    k = int(round(fraction * n)) if n > 1 else 0
    return np.sort(order[k:]), np.sort(order[:k])


class _SequenceClassifier(ClassifierMixin, BaseEstimator):
    def _alphabet(self, seqs) -> Alphabet:
        if getattr(self, "grammar", None):
            return builtin_grammar(self.grammar).alphabet
        return Alphabet(tuple(sorted({t for s in seqs for t in s})))

    def _datasets(self, X, y):
        seqs = check_sequences(X)
        labels = check_labels(y, len(seqs))
        alphabet = self._alphabet(seqs)
        check_sequences(seqs, alphabet)
        samples = [LabeledString(s, int(l)) for s, l in zip(seqs, labels)]
        train_idx, val_idx = _holdout(len(samples), self.validation_fraction, self.random_state)
        name = getattr(self, "grammar", None) or "custom"
        train = Dataset(tuple(samples[i] for i in train_idx), name, self.random_state)
        val = Dataset(tuple(samples[i] for i in val_idx), name, self.random_state)
        return alphabet, train, val

    def _fit_learner(self, learner: Learner, train: Dataset, val: Dataset, noise: NoiseConfig):
        config = CurriculumConfig(self.n_tr, self.stage1_epochs, self.stage2_epochs, self.max_epochs)
        learner, metrics = run_curriculum(learner, train, val if len(val) else None, config, noise, self.mode)
        self.params_ = learner.params
        self.metrics_ = metrics
        self.classes_ = np.array([0, 1])
        self._learner = learner
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        seqs = check_sequences(X, self.alphabet_)
        encoded = [self.alphabet_.encode(s) for s in seqs]
        return self._learner.predict(encoded).astype(np.int64)


class NSPDAClassifier(_SequenceClassifier):
    """Neural state pushdown automaton trained with one of the curricula.

    With ``grammar`` set to a builtin name the hint level can use that
    grammar's automaton; otherwise the alphabet is taken from the data and
    only ``hint_level="none"`` is possible.
    """

    def __init__(self, grammar: str | None = None, order: str = "third", n_states: int | None = None,
                 hint_level: str = "hint2", algorithm: str = "uoro", K: int = 4, mode: str = "2il",
                 noise: bool = True, noise_fraction: float = 0.1, noise_beta: float = 0.01,
                 read_gain: float = STRAIGHT_THROUGH_GAIN, truncation_window: int = 50,
                 n_tr: int = 14, stage1_epochs: int = 200, stage2_epochs: int = 350, max_epochs: int = 500,
                 validation_fraction: float = 0.1, random_state: int = 0):
        self.grammar = grammar
        self.order = order
        self.n_states = n_states
        self.hint_level = hint_level
        self.algorithm = algorithm
        self.K = K
        self.mode = mode
        self.noise = noise
        self.noise_fraction = noise_fraction
        self.noise_beta = noise_beta
        self.read_gain = read_gain
        self.truncation_window = truncation_window
        self.n_tr = n_tr
        self.stage1_epochs = stage1_epochs
        self.stage2_epochs = stage2_epochs
        self.max_epochs = max_epochs
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y) -> "NSPDAClassifier":
        if self.hint_level not in HINT_LEVELS:
            raise InputError(f"hint_level must be one of {HINT_LEVELS}")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")
        if self.hint_level != "none" and not self.grammar:
            raise InputError("hints need a builtin grammar")
        alphabet, train, val = self._datasets(X, y)
        self.alphabet_ = alphabet
        pda = builtin_grammar(self.grammar) if self.grammar else None
        seed = int(self.random_state)
        if self.n_states is not None:
            J = int(self.n_states)
        elif pda is not None:
            J = size_state_count(self.order, pda.M, np.random.default_rng(seed))
        else:
            raise InputError("n_states is required without a builtin grammar")
        params = init_params(self.order, J, len(alphabet), seed)
        params.metadata["alphabet"] = list(alphabet.symbols)
        if pda is not None:
            params = insert_hints(params, pda, self.hint_level)
        opt = OptimizerConfig(algorithm=self.algorithm, truncation_window=self.truncation_window,
                              seed=seed, read_gain=self.read_gain)
        learner = Learner(params, opt, pda=pda, hint_level=self.hint_level, K=self.K, noise_seed=seed)
        noise = NoiseConfig(self.noise_fraction, self.noise_beta, bool(self.noise), seed)
        return self._fit_learner(learner, train, val, noise)


class BaselineClassifier(_SequenceClassifier):
    """Stackless first- or second-order recurrent classifier."""

    def __init__(self, kind: str = "first_order", hidden: int = DEFAULT_HIDDEN, grammar: str | None = None,
                 algorithm: str = "bptt", K: int = 4, mode: str = "2il", noise: bool = False,
                 noise_fraction: float = 0.1, noise_beta: float = 0.01, truncation_window: int = 50,
                 n_tr: int = 14, stage1_epochs: int = 200, stage2_epochs: int = 350, max_epochs: int = 500,
                 validation_fraction: float = 0.1, random_state: int = 0):
        self.kind = kind
        self.hidden = hidden
        self.grammar = grammar
        self.algorithm = algorithm
        self.K = K
        self.mode = mode
        self.noise = noise
        self.noise_fraction = noise_fraction
        self.noise_beta = noise_beta
        self.truncation_window = truncation_window
        self.n_tr = n_tr
        self.stage1_epochs = stage1_epochs
        self.stage2_epochs = stage2_epochs
        self.max_epochs = max_epochs
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y) -> "BaselineClassifier":
        if self.kind not in KINDS:
            raise InputError(f"kind must be one of {KINDS}")
        alphabet, train, val = self._datasets(X, y)
        self.alphabet_ = alphabet
        seed = int(self.random_state)
        params = init_baseline(self.kind, len(alphabet), seed, self.hidden)
        params.metadata["alphabet"] = list(alphabet.symbols)
        opt = OptimizerConfig(algorithm=self.algorithm, truncation_window=self.truncation_window, seed=seed)
        learner = Learner(params, opt, K=self.K, noise_seed=seed)
        noise = NoiseConfig(self.noise_fraction, self.noise_beta, bool(self.noise), seed)
        return self._fit_learner(learner, train, val, noise)
