"""COMER-style dialogue state tracking: hierarchical belief-state generation
with a shared Conditional Memory Relation Decoder and constant-time inference
with respect to ontology size."""

from .model import ComerModel, ModelConfig

__all__ = ["ComerModel", "ModelConfig"]
__version__ = "0.1.0"
