"""Neural state pushdown automata: differentiable stacks, automaton
programming, curricula and the gradient estimators to train them."""

from .baselines import BaselineParams, init_baseline
from .checkpoint import load_checkpoint, save_checkpoint
from .estimators import BaselineClassifier, NSPDAClassifier
from .exceptions import (CapacityError, CheckpointError, GenerationExhaustedError, GrammarNotFoundError, InputError,
                         NSPDAError, ProgrammingError)
from .grammars import Alphabet, Dataset, PdaSpec, builtin_grammar, pda_accepts, sample_dataset
from .model import ModelParams, classify, classify_many, init_params
from .programming import insert_hints, program_full

__version__ = "0.1.0"

__all__ = [
    "Alphabet", "BaselineClassifier", "BaselineParams", "CapacityError", "CheckpointError", "Dataset",
    "GenerationExhaustedError", "GrammarNotFoundError", "InputError", "ModelParams", "NSPDAClassifier",
    "NSPDAError", "PdaSpec", "ProgrammingError", "builtin_grammar", "classify", "classify_many", "init_baseline",
    "init_params", "insert_hints", "load_checkpoint", "pda_accepts", "program_full", "sample_dataset",
    "save_checkpoint",
]
