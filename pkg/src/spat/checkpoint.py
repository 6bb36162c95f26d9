"""JSON checkpoints that roundtrip float64 parameters bitwise."""

import json
from pathlib import Path

import numpy as np

from .net import ModelParams, NetConfig, config_dict

FORMAT_VERSION = 1


def _encode(a):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("refusing to checkpoint non-finite parameters")
    # json writes float repr, the shortest string that parses back to the same double
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _decode(obj):
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def checkpoint_dict(params, net_cfg, provenance=None):
    return {
        "format_version": FORMAT_VERSION,
        "net_config": config_dict(net_cfg),
        "params": {
            "hidden_weights": [_encode(w) for w in params.hidden_weights],
            "hidden_biases": [_encode(b) for b in params.hidden_biases],
            "head_W": _encode(params.head_W),
            "head_bias": _encode(params.head_bias),
        },
        "provenance": dict(provenance or {}),
    }


def save_checkpoint(path, params, net_cfg, provenance=None):
    path = Path(path)
    path.write_text(json.dumps(checkpoint_dict(params, net_cfg, provenance), indent=1))
    return path


def load_checkpoint(path):
    """Returns ``(params, net_cfg, provenance)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {doc.get('format_version')!r}")
    nc = doc["net_config"]
    net_cfg = NetConfig(tuple(nc["layer_sizes"]), nc["activation"], nc["head_mode"], nc["scale_s"])
    p = doc["params"]
    params = ModelParams(
        [_decode(w) for w in p["hidden_weights"]],
        [_decode(b) for b in p["hidden_biases"]],
        _decode(p["head_W"]),
        _decode(p["head_bias"]),
    )
    params.check_shapes(net_cfg)
    return params, net_cfg, doc.get("provenance", {})
