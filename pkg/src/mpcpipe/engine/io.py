"""Model config and weight files.

A model config is JSON: name, input {name, shape}, scale_bits, a layer
list (LayerSpec fields) and a map from linear layer name to weight file,
relative to the config. Weight files hold an encoded fixed-point tensor:
magic ``MPW1``, u8 scale bits, u8 ndim, ndim x u32 dims, then the values
as little-endian u64.
"""
import json
import os
import struct

import numpy as np

from ..ring import RING_DTYPE, decode_fixed, encode_fixed
from .graph import LayerSpec, ModelGraph

MAGIC = b"MPW1"


def save_weights(path, w, scale_bits=16):
    w = np.asarray(w)
    ring = w.astype(RING_DTYPE) if w.dtype == RING_DTYPE else encode_fixed(w, scale_bits)
    ring = np.asarray(ring, RING_DTYPE).reshape(w.shape)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<BB", scale_bits, ring.ndim))
        fh.write(struct.pack(f"<{ring.ndim}I", *ring.shape))
        fh.write(ring.astype("<u8").tobytes())


def load_weights(path, decode=True):
    """Returns (array, scale_bits); decoded to float unless ``decode`` is False."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a weight file")
    scale, ndim = struct.unpack_from("<BB", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 6)
    off = 6 + 4 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) != off + 8 * count:
        raise ValueError(f"{path}: expected {count} values, file has {(len(raw) - off) // 8}")
    ring = np.frombuffer(raw, "<u8", count, off).astype(RING_DTYPE).reshape(shape)
    return (decode_fixed(ring, scale) if decode else ring), scale


def save_model(graph, directory):
    """Write ``model.json`` and one weight file per linear layer; returns the config path."""
    os.makedirs(directory, exist_ok=True)
    files = {}
    for name, w in graph.weights.items():
        files[name] = f"{name}.mpw"
        save_weights(os.path.join(directory, files[name]), w, graph.scale_bits)
    cfg = {
        "name": graph.name,
        "input": {"name": graph.input_name, "shape": list(graph.input_shape)},
        "scale_bits": graph.scale_bits,
        "layers": [l.to_dict() for l in graph.layers],
        "weights": files,
    }
    path = os.path.join(directory, "model.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2)
    return path


def load_model(path):
    with open(path) as fh:
        cfg = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    weights = {}
    for name, fname in cfg.get("weights", {}).items():
        weights[name], _ = load_weights(os.path.join(base, fname))
    layers = [LayerSpec(**d) for d in cfg["layers"]]
    return ModelGraph(cfg["name"], cfg["input"]["name"], tuple(cfg["input"]["shape"]), layers,
                      weights, scale_bits=cfg.get("scale_bits", 16))
