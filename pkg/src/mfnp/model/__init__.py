from .estimator import (
    GaussianPrediction,
    InferenceInputs,
    InferResult,
    ModelConfig,
    MultiFidelityEstimator,
    fuse,
    low_context_elements,
    low_target_elements,
    res_context_elements,
    res_target_elements,
)

__all__ = [
    "GaussianPrediction",
    "InferenceInputs",
    "InferResult",
    "ModelConfig",
    "MultiFidelityEstimator",
    "fuse",
    "low_context_elements",
    "low_target_elements",
    "res_context_elements",
    "res_target_elements",
]
