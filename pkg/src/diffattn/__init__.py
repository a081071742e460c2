"""Exemplar-guided differential attention for VQA-style data.

Submodules: ``tensor``, ``attention``, ``losses``, ``dcn``, ``model``,
``exemplars``, ``metrics``, ``trainer``, ``data``, ``container``,
``export``, ``gradcheck`` and ``cli``.  ``BACKEND`` names the active
kernel implementation (``"cython"`` or ``"python"``).
"""
from .attention import ModelParams, init_params
from .data import Dataset, GenConfig, generate, split
from .exemplars import EmbeddingStore, ExemplarIndex, build_index, knn
from .kernels import BACKEND
from .metrics import rank_correlation, vqa_accuracy
from .model import MODEL_NAMES, ModelSpec
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "MODEL_NAMES",
    "Dataset",
    "EmbeddingStore",
    "ExemplarIndex",
    "GenConfig",
    "ModelParams",
    "ModelSpec",
    "TrainConfig",
    "build_index",
    "evaluate",
    "generate",
    "init_params",
    "knn",
    "rank_correlation",
    "split",
    "train",
    "vqa_accuracy",
]
