"""JSON serialisation of generators.

Schema::

    {"layers": [{"w": [[...]], "b": [...], "act": "tanh"}, ...],
     "linear": {"U": [[...]], "lambda": [...], "b": [...]} | null,
     "precision": {"centers": [[...]], "gamma": [...], "W": [[...]], "zeta": z} | null}

A missing ``"linear"`` key means no linear part. An optional ``"subspace"``
matrix stores the input pre-map. Floats are written with ``repr`` precision,
so a save/load round trip is exact.
"""

import json

import numpy as np

from .errors import SchemaError
from .generator import ACTIVATIONS, FeedforwardNet, Generator, Layer, PositiveRbf


def _matrix(obj, path):
    if not isinstance(obj, list) or not obj or not all(isinstance(r, list) for r in obj):
        raise SchemaError("expected a non-empty list of rows", path)
    widths = {len(r) for r in obj}
    if len(widths) != 1:
        raise SchemaError(f"ragged matrix (row lengths {sorted(widths)})", path)
    try:
        out = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"non-numeric entry ({exc})", path) from exc
    if not np.all(np.isfinite(out)):
        raise SchemaError("non-finite entry", path)
    return out


def _vector(obj, path):
    if not isinstance(obj, list):
        raise SchemaError("expected a list of numbers", path)
    try:
        out = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"non-numeric entry ({exc})", path) from exc
    if out.ndim != 1 or not np.all(np.isfinite(out)):
        raise SchemaError("expected a flat list of finite numbers", path)
    return out


def _require(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing key {key!r}", f"{path}.{key}")
    return obj[key]


def generator_to_json(gen):
    if not isinstance(gen, Generator) or gen.net is None:
        raise SchemaError("only generators with a mean network can be serialised", "$")
    out = {
        "layers": [
            {"w": l.weight.tolist(), "b": l.bias.tolist(), "act": l.act} for l in gen.net.layers
        ],
        "linear": None,
        "precision": None,
    }
    if gen.use_linear_part:
        out["linear"] = {"U": gen.U.tolist(), "lambda": gen.eigenvalues.tolist(), "b": gen.offset.tolist()}
    else:
        out["offset"] = gen.offset.tolist()
    if gen.precision is not None:
        p = gen.precision
        out["precision"] = {
            "centers": p.centers.tolist(),
            "gamma": p.gamma.tolist(),
            "W": p.weights.tolist(),
            "zeta": p.zeta,
        }
    if gen.subspace is not None:
        out["subspace"] = gen.subspace.tolist()
    return out


def generator_from_json(obj):
    layers_obj = _require(obj, "layers", "$")
    if not isinstance(layers_obj, list) or not layers_obj:
        raise SchemaError("expected a non-empty list of layers", "$.layers")
    layers = []
    for i, lo in enumerate(layers_obj):
        path = f"$.layers[{i}]"
        w = _matrix(_require(lo, "w", path), f"{path}.w")
        b = _vector(_require(lo, "b", path), f"{path}.b")
        act = lo.get("act", "tanh")
        if act not in ACTIVATIONS:
            raise SchemaError(f"unsupported activation {act!r}", f"{path}.act")
        if b.shape != (w.shape[0],):
            raise SchemaError("bias length does not match weight rows", f"{path}.b")
        if i > 0 and w.shape[1] != layers[-1].weight.shape[0]:
            raise SchemaError("input width does not match the previous layer", f"{path}.w")
        layers.append(Layer(w, b, act))
    net = FeedforwardNet(layers)

    lin = obj.get("linear")
    if lin is not None:
        U = _matrix(_require(lin, "U", "$.linear"), "$.linear.U")
        lam = _vector(_require(lin, "lambda", "$.linear"), "$.linear.lambda")
        offset = _vector(_require(lin, "b", "$.linear"), "$.linear.b")
        if U.shape != (net.out_dim, net.in_dim):
            raise SchemaError(f"U must be {net.out_dim}x{net.in_dim}", "$.linear.U")
        if lam.shape != (net.in_dim,) or np.any(lam < 0):
            raise SchemaError("one nonnegative eigenvalue per latent dimension required", "$.linear.lambda")
        if offset.shape != (net.out_dim,):
            raise SchemaError("offset length must equal the output dimension", "$.linear.b")
    else:
        U = lam = None
        offset = _vector(obj["offset"], "$.offset") if "offset" in obj else np.zeros(net.out_dim)
        if offset.shape != (net.out_dim,):
            raise SchemaError("offset length must equal the output dimension", "$.offset")

    prec = obj.get("precision")
    precision = None
    if prec is not None:
        centers = _matrix(_require(prec, "centers", "$.precision"), "$.precision.centers")
        gamma = _vector(_require(prec, "gamma", "$.precision"), "$.precision.gamma")
        W = _matrix(_require(prec, "W", "$.precision"), "$.precision.W")
        zeta = _require(prec, "zeta", "$.precision")
        if centers.shape[1] != net.in_dim:
            raise SchemaError("centers must live in the latent space", "$.precision.centers")
        if gamma.shape != (len(centers),) or np.any(gamma <= 0):
            raise SchemaError("one positive bandwidth per center required", "$.precision.gamma")
        if W.shape != (net.out_dim, len(centers)):
            raise SchemaError(f"W must be {net.out_dim}x{len(centers)}", "$.precision.W")
        if not isinstance(zeta, (int, float)) or not zeta > 0:
            raise SchemaError("zeta must be a positive number", "$.precision.zeta")
        precision = PositiveRbf(centers, gamma, W, float(zeta))

    subspace = None
    if obj.get("subspace") is not None:
        subspace = _matrix(obj["subspace"], "$.subspace")
        if subspace.shape[0] != net.in_dim:
            raise SchemaError("subspace rows must equal the latent dimension", "$.subspace")

    return Generator(net, U, lam, offset, precision, use_linear_part=lin is not None, subspace=subspace)


def save_model(gen, path):
    with open(path, "w") as fh:
        json.dump(generator_to_json(gen), fh)


def load_model(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg} at line {exc.lineno})", "$") from exc
    return generator_from_json(obj)


def save_autoencoder(model, path):
    """Generator plus encoder layers under an ``"encoder"`` key."""
    obj = generator_to_json(model.generator)
    obj["encoder"] = [{"w": l.weight.tolist(), "b": l.bias.tolist(), "act": l.act} for l in model.encoder.layers]
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_encoder(path):
    with open(path) as fh:
        obj = json.load(fh)
    if "encoder" not in obj:
        return None
    enc = generator_from_json({"layers": obj["encoder"]})
    return enc.net
