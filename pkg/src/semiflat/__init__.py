"""Embeddings of narrow networks into wider ones and the critical points they create."""

from .embedding import EmbedKind, EmbedSpec, embed, verify_function_equality
from .errors import SemiflatError
from .network import Activation, Dataset, LossKind, NetworkParams

__all__ = [
    "Activation",
    "Dataset",
    "EmbedKind",
    "EmbedSpec",
    "LossKind",
    "NetworkParams",
    "SemiflatError",
    "embed",
    "verify_function_equality",
]
__version__ = "0.1.0"
