"""Unpaired image captioning from semantic concepts via attention-based relationship exploration."""

from .concepts import ConceptSet, ConceptVocabulary, extract_sentence_concepts, load_image_concepts
from .config import TrainConfig, preset
from .model import Captioner

__all__ = [
    "Captioner",
    "ConceptSet",
    "ConceptVocabulary",
    "TrainConfig",
    "extract_sentence_concepts",
    "load_image_concepts",
    "preset",
]
