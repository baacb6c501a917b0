"""Data-centric toolkit for multi-vendor mammography segmentation.

Preprocessing, annotation-guided augmentation, style post-processing and
mixing, segmentation metrics, significance testing and TTA uncertainty.
Model training is out of scope; predictions are consumed as files.
"""
from .core_types import ClassId, AnnotatedSample, SeededRng, ScriptedRng, mask_of, rand_uniform

__version__ = "0.1.0"

__all__ = ["ClassId", "AnnotatedSample", "SeededRng", "ScriptedRng", "mask_of", "rand_uniform"]
