"""Desk-scale stand-in models with seeded random weights."""
import numpy as np

from .graph import LayerSpec, ModelGraph

MODELS = ("transformer-toy", "cnn-toy")


def _init(rng, shape, fan_in, gain=1.0):
    return rng.normal(0.0, gain / np.sqrt(fan_in), shape)


def transformer_toy(seed=0, batch=8, seq=32, d_model=64, heads=4, ffn_mult=4, classes=10,
                    weight_mode="private"):
    """One attention block plus FFN and a per-token classification head.

    No normalisation or residual connections; weights are scaled so that
    activations stay of order one.
    """
    rng = np.random.default_rng(seed)
    d_ff = ffn_mult * d_model
    dense = [("q", "x", d_model, d_model), ("k", "x", d_model, d_model),
             ("v", "x", d_model, d_model), ("o", "attn", d_model, d_model),
             ("ff1", "o", d_model, d_ff), ("ff2", "act", d_ff, d_model),
             ("head", "ff2", d_model, classes)]
    weights = {name: _init(rng, (fi, fo), fi) for name, _, fi, fo in dense}
    spec = {name: LayerSpec(name, "dense", (src,), {"out": fo}, weight_mode)
            for name, src, _, fo in dense}
    layers = [spec["q"], spec["k"], spec["v"],
              LayerSpec("attn", "attention", ("q", "k", "v"), {"heads": heads}),
              spec["o"], spec["ff1"], LayerSpec("act", "relu", ("ff1",)), spec["ff2"],
              spec["head"]]
    x = rng.normal(0.0, 1.0, (batch, seq, d_model))
    return ModelGraph("transformer-toy", "x", x.shape, layers, weights), x


def cnn_toy(seed=0, batch=2, channels=(8, 8, 16, 16, 16, 16), classes=10, image=32,
            weight_mode="private"):
    """Six 3x3 convolutions with ReLU, 2x2 max pooling after the 2nd and 4th."""
    rng = np.random.default_rng(seed)
    layers, weights = [], {}
    src, cin, side = "x", 3, image
    for i, cout in enumerate(channels, 1):
        name = f"conv{i}"
        weights[name] = _init(rng, (cout, cin, 3, 3), cin * 9, gain=np.sqrt(2.0))
        layers.append(LayerSpec(name, "conv2d", (src,),
                                {"out": cout, "kernel": 3, "stride": 1, "padding": 1},
                                weight_mode))
        layers.append(LayerSpec(f"relu{i}", "relu", (name,)))
        src, cin = f"relu{i}", cout
        if i in (2, 4):
            layers.append(LayerSpec(f"pool{i // 2}", "maxpool", (src,),
                                    {"window": 2, "stride": 2}))
            src, side = f"pool{i // 2}", side // 2
    layers.append(LayerSpec("flat", "flatten", (src,)))
    weights["fc"] = _init(rng, (cin * side * side, classes), cin * side * side)
    layers.append(LayerSpec("fc", "dense", ("flat",), {"out": classes}, weight_mode))
    x = rng.uniform(-1.0, 1.0, (batch, 3, image, image))
    return ModelGraph("cnn-toy", "x", x.shape, layers, weights), x


def build_model(name, seed=0, weight_mode="private", **kw):
    """Model id or config path -> (graph, plaintext input)."""
    if name == "transformer-toy":
        return transformer_toy(seed, weight_mode=weight_mode, **kw)
    if name == "cnn-toy":
        return cnn_toy(seed, weight_mode=weight_mode, **kw)
    import os

    from .io import load_model
    if not os.path.isfile(name):
        raise ValueError(f"unknown model {name!r}: expected one of {MODELS} or a model.json path")
    graph = load_model(name)
    if graph.weight_mode != weight_mode:
        graph = graph.with_weight_mode(weight_mode)
    x = np.random.default_rng(seed).normal(0.0, 1.0, graph.input_shape)
    return graph, x
