"""Separation of mixed X-ray images of double-sided painted panels using
the photographs of both sides as side information.

Main entry points:

- :func:`xsep.coupled_dl.train_coupled` and
  :func:`xsep.weighted_dl.train_weighted` learn coupled dictionaries,
- :func:`xsep.patchwork.separate_single_scale` and
  :func:`xsep.pyramid.separate_multiscale` separate a mixture,
- :mod:`xsep.synthbench` runs the synthetic experiments,
- ``python -m xsep`` / ``xsep`` is the command-line front end.
"""

from .coupled_dl import DictionaryTriple, TrainConfig, TrainingSet, train_coupled
from .errors import ArgumentError, FormatError, InfeasibleError, NumericalError, XsepError
from .momp import GroupedDictionary, SparsityBudget, momp, momp_batch
from .patchwork import PatchGridSpec, separate_single_scale
from .pyramid import PyramidSpec, decompose, reconstruct, separate_multiscale
from .separator import BPConfig, SeparationProblem, solve_separation
from .weighted_dl import MaskedTrainingSet, train_weighted

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "BPConfig", "DictionaryTriple", "FormatError", "GroupedDictionary", "InfeasibleError",
    "MaskedTrainingSet", "NumericalError", "PatchGridSpec", "PyramidSpec", "SeparationProblem",
    "SparsityBudget", "TrainConfig", "TrainingSet", "XsepError", "decompose", "momp", "momp_batch",
    "reconstruct", "separate_multiscale", "separate_single_scale", "solve_separation", "train_coupled",
    "train_weighted",
]
