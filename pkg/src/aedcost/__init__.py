"""Acoustic event detection on a compute budget.

Frame features, four classifier families (GMM-UBM, SVM, DNN, RNN), a per-frame
operation-count cost model with instrumented kernels, a fixed-point inference
path and DET/EER evaluation.
"""
from .costmodel import (ModelDescriptor, PlatformBudget, formula_ops, instrumented_score,
                        max_model_size, ops_budget_per_frame, verify_costs)
from .evaluation import eer_from_scores, equal_error_rate, sweep_det
from .features import DeltaFeatures, FeatureNormalizer, extract_features
from .gmm import GmmUbmClassifier
from .neural import DNNClassifier, RNNClassifier
from .ops import OpCount
from .svm import SMOClassifier

__version__ = "0.1.0"

__all__ = [
    "DNNClassifier",
    "DeltaFeatures",
    "FeatureNormalizer",
    "GmmUbmClassifier",
    "ModelDescriptor",
    "OpCount",
    "PlatformBudget",
    "RNNClassifier",
    "SMOClassifier",
    "eer_from_scores",
    "equal_error_rate",
    "extract_features",
    "formula_ops",
    "instrumented_score",
    "max_model_size",
    "ops_budget_per_frame",
    "sweep_det",
    "verify_costs",
]
