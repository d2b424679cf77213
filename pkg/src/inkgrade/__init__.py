"""inkgrade: handwritten answer-sheet recognition and automatic scoring.

The pipeline: ruled sheets are segmented into character cells by projections
and borderline morphology, cells are classified by an ensemble of small
convnets (pretrained on synthetic glyphs, fine-tuned on the exam domain),
candidates are rescored by a character n-gram language model under beam
search, and the recognized text is scored by a small transformer classifier.
Agreement with ground-truth scores is measured by quadratic weighted kappa.
"""

__version__ = "0.1.0"

from .imagecore import BinaryImage, BoundingBox, GrayImage, binarize, crop, load_image, save_image
from .metrics import RatingPair, char_accuracy, levenshtein, qwk

__all__ = [
    "BinaryImage",
    "BoundingBox",
    "GrayImage",
    "RatingPair",
    "binarize",
    "char_accuracy",
    "crop",
    "levenshtein",
    "load_image",
    "qwk",
    "save_image",
]
