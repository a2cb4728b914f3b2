"""Layer implementations, the pipeline scheduler and the model zoo."""
from ..policy import BLOCKING, PIPELINED, PipelinePolicy
from .graph import APPLICABILITY, CATEGORY, CalibrationRecord, LayerSpec, ModelGraph
from .io import load_model, load_weights, save_model, save_weights
from .layers import attention, dense_private, dense_public, encode_weight, inner_matmul
from .reference import float_forward, replica_forward
from .scheduler import SweepResult, calibrate, run_model, sweep_threshold
from .zoo import MODELS, build_model, cnn_toy, transformer_toy

__all__ = [
    "APPLICABILITY", "BLOCKING", "CATEGORY", "CalibrationRecord", "LayerSpec", "MODELS",
    "ModelGraph", "PIPELINED", "PipelinePolicy", "SweepResult", "attention", "build_model",
    "calibrate", "cnn_toy", "dense_private", "dense_public", "encode_weight", "float_forward",
    "inner_matmul", "load_model", "load_weights", "replica_forward", "run_model",
    "save_model", "save_weights", "sweep_threshold", "transformer_toy",
]
