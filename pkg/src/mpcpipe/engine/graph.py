"""Model description: layer specs, model graphs and calibration records."""
from dataclasses import dataclass, field, replace

import numpy as np

from ..nonlinear import DEFAULT_APPROX, ApproxConfig

LINEAR_KINDS = ("dense", "conv2d")
KINDS = ("dense", "conv2d", "relu", "softmax", "maxpool", "attention", "flatten")

CATEGORY = {"dense": "Linear", "conv2d": "Linear", "relu": "ReLU", "softmax": "Softmax",
            "maxpool": "Maxpool", "attention": "Attention", "flatten": "Other"}

# (inter-linear-layer, inner-layer) pipeline applicability per operation
APPLICABILITY = {
    "conv2d": (True, False),
    "dense": (True, False),
    "relu": (False, True),
    "softmax": (False, True),
    "maxpool": (False, True),
    "attention": (True, True),
    "flatten": (False, False),
}


@dataclass
class LayerSpec:
    name: str
    kind: str
    inputs: tuple = ("x",)
    params: dict = field(default_factory=dict)
    weight_mode: str = "private"
    matmul_path: str = "direct"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.weight_mode not in ("private", "public"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")
        if self.matmul_path not in ("direct", "limb16", "limb4"):
            raise ValueError(f"unknown matmul path {self.matmul_path!r}")
        self.inputs = tuple(self.inputs)

    @property
    def linear(self):
        return self.kind in LINEAR_KINDS

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "inputs": list(self.inputs),
                "params": dict(self.params), "weight_mode": self.weight_mode,
                "matmul_path": self.matmul_path}


@dataclass
class LinearDims:
    x_shape: tuple
    w_shape: tuple
    op: str
    params: dict


@dataclass
class CalibrationRecord:
    linear: dict                     # layer name -> LinearDims
    next_linear: dict                # layer name -> next linear layer name or None
    threshold_bytes: float = float("inf")
    sweep: list = field(default_factory=list)

    def to_dict(self):
        return {
            "linear": {k: {"x_shape": list(v.x_shape), "w_shape": list(v.w_shape),
                           "op": v.op, "params": v.params} for k, v in self.linear.items()},
            "next_linear": dict(self.next_linear),
            "threshold_bytes": None if np.isinf(self.threshold_bytes) else self.threshold_bytes,
            "sweep": [list(r) for r in self.sweep],
        }


@dataclass
class ModelGraph:
    name: str
    input_name: str
    input_shape: tuple
    layers: list
    weights: dict
    scale_bits: int = 16
    approx: ApproxConfig = DEFAULT_APPROX
    calibration: CalibrationRecord = None

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        seen = {self.input_name}
        modes = set()
        for layer in self.layers:
            if layer.name in seen:
                raise ValueError(f"duplicate tensor name {layer.name!r}")
            missing = [i for i in layer.inputs if i not in seen]
            if missing:
                raise ValueError(f"layer {layer.name!r} reads undefined {missing}")
            if layer.linear:
                modes.add(layer.weight_mode)
                if layer.name not in self.weights:
                    raise ValueError(f"no weights for linear layer {layer.name!r}")
            seen.add(layer.name)
        if len(modes) > 1:
            raise ValueError("weight_mode must be uniform across a model")

    @property
    def output_name(self):
        return self.layers[-1].name

    @property
    def weight_mode(self):
        modes = {l.weight_mode for l in self.layers if l.linear}
        return modes.pop() if modes else "public"

    def linear_layers(self):
        return [l for l in self.layers if l.linear]

    def static_next_linear(self):
        names = [l.name for l in self.linear_layers()]
        return {a: b for a, b in zip(names, names[1:] + [None])}

    def with_weight_mode(self, mode):
        layers = [replace(l, weight_mode=mode) if l.linear else l for l in self.layers]
        return replace(self, layers=layers, calibration=None)

    def with_matmul_path(self, path, kinds=LINEAR_KINDS):
        layers = [replace(l, matmul_path=path) if l.kind in kinds else l for l in self.layers]
        return replace(self, layers=layers)
