"""Command-line entry points. Every command reads a TOML config and writes files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .ambient import (
    ConvexCombinationMetric,
    LocalDiagCovMetric,
    SupportMetric,
    SupportMetricParams,
    cost_rbf,
    fit_gmm_support,
    fit_local_lda,
    fit_rbf_support,
    metric_from_json,
    metric_to_json,
)
from .data import make_synthetic_paraboloid, make_synthetic_sine, read_dataset_csv
from .errors import (
    ConfigurationError,
    NumericalDomainError,
    SchemaError,
    TrainingError,
    UnreachableError,
)
from .generator import ExpectedPullbackMetric, Paraboloid, PullbackMetric
from .geometry import BvpOptions, solve_geodesic_bvp
from .graph import build_latent_graph, reference_prototypes, shortest_graph_path
from .metric import identity_metric
from .modelio import load_model, save_autoencoder
from .sampling import LatentDensity, McmcOptions, mcmc_sample, rejection_sample
from .training import (
    Architecture,
    TrainConfig,
    attach_precision,
    fit_precision_rbf,
    residual_variances,
    train_autoencoder,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_NUM = (int, float)
_REQUIRED = object()

# section -> key -> (accepted types, default)
_MODEL = {
    "kind": (str, "none"),  # none | paraboloid | file
    "path": (str, None),
    "dim": (int, 2),  # latent dimension when kind = none
    "coef": (_NUM, 0.3),
    "metric_type": (str, "pullback"),  # pullback | expected
}
_METRIC = {"kind": (str, "identity"), "path": (str, None)}  # identity | file
_DATA = {
    "kind": (str, "paraboloid"),  # paraboloid | sine | file
    "path": (str, None),
    "n": (int, 1000),
    "n_per_component": (int, 300),
    "noise": (_NUM, 0.1),
}

SCHEMAS = {
    "geodesic": {
        "seed": (int, 0),
        "model": _MODEL,
        "metric": _METRIC,
        "endpoints": {"a": (list, _REQUIRED), "b": (list, _REQUIRED)},
        "solver": {"n_knots": (int, 16), "segments": (int, 160), "tol": (_NUM, 1e-6), "max_iters": (int, 2000)},
        "graph": {
            "enabled": (bool, True),
            "samples": (int, 10000),
            "radius": (_NUM, 4.0),
            "prototypes": (int, 100),
            "k": (int, 7),
            "segments": (int, 20),
        },
    },
    "sample": {
        "seed": (int, 0),
        "model": _MODEL,
        "metric": _METRIC,
        "sampler": {
            "method": (str, "mcmc"),  # mcmc | rejection
            "n": (int, 1000),
            "radius": (_NUM, 4.0),
            "center": (list, None),
            "step": (_NUM, None),
            "burn": (int, 1000),
            "thin": (int, 5),
            "chains": (int, 4),
        },
    },
    "fit-metric": {
        "seed": (int, 0),
        "data": _DATA,
        "fit": {
            "kind": (str, "rbf-support"),  # rbf-support | gmm-support | cost-rbf | local-diag | local-lda
            "k": (int, 20),
            "kappa": (_NUM, 1.0),
            "alpha": (_NUM, 1e3),
            "epsilon": (_NUM, 1e-2),
            "mode": (str, "support"),
            "sigma": (_NUM, 1.0),
            "centers": (list, None),
            "values": (_NUM, 10.0),
            "n_base": (int, 20),
            "neighbors": (int, 50),
            "lda_epsilon": (_NUM, 1e-3),
            "iters": (int, 20),
        },
    },
    "train": {
        "seed": (int, 0),
        "data": _DATA,
        "arch": {
            "latent_dim": (int, 2),
            "decoder_hidden": (list, [3]),
            "encoder_hidden": (list, [16]),
            "activation": (str, "tanh"),
            "use_linear_part": (bool, True),
        },
        "train": {
            "epochs": (int, 2000),
            "batch_size": (int, 64),
            "step_size": (_NUM, 1e-2),
            "l2_weight": (_NUM, 1e-5),
            "optimizer": (str, "adam"),
        },
        "precision": {"enabled": (bool, True), "k": (int, 20), "zeta": (_NUM, 1e-6), "neighbors": (int, 10),
                      "kappa": (_NUM, 3.0)},
    },
    "make-data": {"seed": (int, 0), "data": _DATA},
}


def _resolve(schema, given, path):
    if not isinstance(given, dict):
        raise ConfigurationError(f"{path or 'config'}: expected a table")
    unknown = sorted(set(given) - set(schema))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigurationError(f"unknown config key {where}{unknown[0]}")
    out = {}
    for key, entry in schema.items():
        full = f"{path}.{key}" if path else key
        if isinstance(entry, dict):
            out[key] = _resolve(entry, given.get(key, {}), full)
            continue
        types, default = entry
        if key not in given:
            if default is _REQUIRED:
                raise ConfigurationError(f"missing required config key {full}")
            out[key] = copy.deepcopy(default)
            continue
        value = given[key]
        ok = isinstance(value, types) and not (types == _NUM and isinstance(value, bool))
        if types is int and isinstance(value, bool):
            ok = False
        if not ok:
            raise ConfigurationError(f"config key {full} has the wrong type ({type(value).__name__})")
        out[key] = float(value) if types == _NUM else value
    return out


def load_config(command, path=None, seed=None):
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"config file is not valid TOML: {exc}") from exc
    raw = dict(raw)
    raw.pop("command", None)
    cfg = _resolve(SCHEMAS[command], raw, "")
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg["command"] = command
    return cfg


def _vector(value, key, dim=None):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"config key {key} must be a list of numbers") from exc
    if arr.ndim != 1 or (dim is not None and arr.size != dim):
        raise ConfigurationError(f"config key {key} must have {dim} entries")
    return arr


def _ambient(cfg, dim):
    m = cfg["metric"]
    if m["kind"] == "identity":
        return identity_metric(dim)
    if m["kind"] == "file":
        if not m["path"]:
            raise ConfigurationError("missing required config key metric.path")
        try:
            with open(m["path"]) as fh:
                metric = metric_from_json(json.load(fh))
        except FileNotFoundError as exc:
            raise ConfigurationError(f"metric.path: file not found: {m['path']}") from exc
        if metric.dim != dim:
            raise ConfigurationError(f"metric.path: metric dimension {metric.dim}, expected {dim}")
        return metric
    raise ConfigurationError(f"config key metric.kind: unknown value {m['kind']!r}")


def latent_metric(cfg):
    """The latent metric described by the ``model`` and ``metric`` sections."""
    model = cfg["model"]
    kind = model["kind"]
    if kind == "none":
        return _ambient(cfg, model["dim"])
    if kind == "paraboloid":
        gen = Paraboloid(2, model["coef"])
    elif kind == "file":
        if not model["path"]:
            raise ConfigurationError("missing required config key model.path")
        if not Path(model["path"]).exists():
            raise ConfigurationError(f"model.path: file not found: {model['path']}")
        gen = load_model(model["path"])
    else:
        raise ConfigurationError(f"config key model.kind: unknown value {kind!r}")
    ambient = _ambient(cfg, gen.ambient_dim)
    if model["metric_type"] == "pullback":
        return PullbackMetric(gen, ambient)
    if model["metric_type"] == "expected":
        return ExpectedPullbackMetric(gen, ambient)
    raise ConfigurationError(f"config key model.metric_type: unknown value {model['metric_type']!r}")


def _load_data(cfg, rng_seed):
    d = cfg["data"]
    if d["kind"] == "paraboloid":
        return make_synthetic_paraboloid(d["n_per_component"], rng_seed, noise=d["noise"])
    if d["kind"] == "sine":
        return make_synthetic_sine(d["n"], d["noise"], rng_seed)
    if d["kind"] == "file":
        if not d["path"]:
            raise ConfigurationError("missing required config key data.path")
        if not Path(d["path"]).exists():
            raise ConfigurationError(f"data.path: file not found: {d['path']}")
        return read_dataset_csv(d["path"])
    raise ConfigurationError(f"config key data.kind: unknown value {d['kind']!r}")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


# --------------------------------------------------------------------------- commands


def cmd_geodesic(cfg, out):
    metric = latent_metric(cfg)
    a = _vector(cfg["endpoints"]["a"], "endpoints.a", metric.dim)
    b = _vector(cfg["endpoints"]["b"], "endpoints.b", metric.dim)
    s = cfg["solver"]
    opts = BvpOptions(n_knots=s["n_knots"], segments=s["segments"], tol=s["tol"], max_iters=s["max_iters"])
    summary = {"seed": cfg["seed"]}
    g = cfg["graph"]
    if g["enabled"]:
        protos = reference_prototypes(metric.dim, g["samples"], g["radius"], g["prototypes"], cfg["seed"])
        graph = build_latent_graph(protos, g["k"], metric, g["segments"])
        path = shortest_graph_path(graph, a, b, metric)
        opts.graph_init = graph
        summary["graph_length"] = path.length
        summary["graph_nodes"] = [int(i) for i in path.nodes]
    sol = solve_geodesic_bvp(a, b, metric, opts)
    summary.update(sol.summary())
    if g["enabled"]:
        summary["relative_gap_to_graph"] = (sol.length - summary["graph_length"]) / summary["graph_length"] \
            if summary["graph_length"] > 0 else 0.0
    sol.curve.write_csv(out / "curve.csv", metric)
    sol.curve.save_json(out / "curve.json")
    _write_json(out / "summary.json", summary)
    return summary


def cmd_sample(cfg, out):
    s = cfg["sampler"]
    if s["n"] < 1:
        raise ConfigurationError("config key sampler.n must be >= 1")
    metric = latent_metric(cfg)
    center = None if s["center"] is None else _vector(s["center"], "sampler.center", metric.dim)
    density = LatentDensity(metric, s["radius"], center)
    if s["method"] == "mcmc":
        opts = McmcOptions(step=s["step"], burn=s["burn"], thin=s["thin"], chains=s["chains"], seed=cfg["seed"])
        res = mcmc_sample(density, s["n"], opts)
    elif s["method"] == "rejection":
        res = rejection_sample(density, s["n"], cfg["seed"])
    else:
        raise ConfigurationError(f"config key sampler.method: unknown value {s['method']!r}")
    res.write_csv(out / "samples.csv")
    res.write_json(out / "samples.json")
    res.write_diagnostics(out / "diagnostics.json")
    return res.diagnostics()


def cmd_fit_metric(cfg, out):
    data = _load_data(cfg, cfg["seed"])
    f = cfg["fit"]
    kind = f["kind"]
    x = data.points
    if kind in ("rbf-support", "gmm-support"):
        params = SupportMetricParams(f["alpha"], f["epsilon"], f["mode"])
        if kind == "rbf-support":
            h = fit_rbf_support(x, f["k"], f["kappa"], seed=cfg["seed"])
        else:
            h = fit_gmm_support(x, f["k"], seed=cfg["seed"])
        metric = SupportMetric(h, params)
    elif kind == "cost-rbf":
        if f["centers"] is None:
            raise ConfigurationError("missing required config key fit.centers")
        centers = np.asarray(f["centers"], dtype=float)
        if centers.ndim != 2 or centers.shape[1] != data.dim:
            raise ConfigurationError(f"config key fit.centers must be a list of {data.dim}-vectors")
        h = cost_rbf(centers, f["values"], f["sigma"])
        metric = SupportMetric(h, SupportMetricParams(f["alpha"], f["epsilon"], "cost"))
    elif kind == "local-diag":
        metric = LocalDiagCovMetric(x, f["sigma"], f["epsilon"])
    elif kind == "local-lda":
        if data.labels is None:
            raise ConfigurationError("fit.kind = local-lda requires labels, but the dataset has none")
        lda = fit_local_lda(x, data.labels, f["n_base"], k=f["neighbors"], eps=f["lda_epsilon"],
                            iters=f["iters"], seed=cfg["seed"], sigma=f["sigma"])
        metric = ConvexCombinationMetric.from_set(lda)
    else:
        raise ConfigurationError(f"config key fit.kind: unknown value {kind!r}")
    obj = metric_to_json(metric)
    _write_json(out / "metric.json", obj)
    return {"kind": obj["kind"], "dim": int(metric.dim), "seed": cfg["seed"]}


def cmd_train(cfg, out):
    data = _load_data(cfg, cfg["seed"])
    a = cfg["arch"]
    t = cfg["train"]
    arch = Architecture(a["latent_dim"], [int(v) for v in a["decoder_hidden"]],
                        [int(v) for v in a["encoder_hidden"]], a["activation"], a["use_linear_part"])
    tc = TrainConfig(t["epochs"], t["batch_size"], t["step_size"], t["l2_weight"], cfg["seed"], t["optimizer"])
    model = train_autoencoder(data, arch, tc)
    codes = model.encode(data.points)
    p = cfg["precision"]
    if p["enabled"]:
        resid = data.points - model.generator.forward(codes)
        var = residual_variances(codes, resid, p["neighbors"])
        prec = fit_precision_rbf(codes, var, p["k"], p["zeta"], p["kappa"], seed=cfg["seed"])
        model.generator = attach_precision(model.generator, prec)
    save_autoencoder(model, out / "model.json")
    with open(out / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(model.losses):
            w.writerow([i + 1, repr(float(v))])
    with open(out / "codes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"z_{i + 1}" for i in range(codes.shape[1])])
        for row in codes:
            w.writerow([repr(float(v)) for v in row])
    summary = {"seed": cfg["seed"], "rmse": model.rmse(data.points), "epochs": t["epochs"],
               "final_loss": float(model.losses[-1]) if len(model.losses) else None}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_make_data(cfg, out):
    data = _load_data(cfg, cfg["seed"])
    data.write_csv(out / "data.csv")
    return {"n": len(data), "dim": data.dim, "seed": cfg["seed"]}


COMMANDS = {
    "geodesic": cmd_geodesic,
    "sample": cmd_sample,
    "fit-metric": cmd_fit_metric,
    "train": cmd_train,
    "make-data": cmd_make_data,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="latentgeo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return parser


def run(command, config=None, out=".", seed=None):
    """Run one command; returns its summary dictionary. Raises library errors."""
    cfg = load_config(command, config, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved_config.json", cfg)
    return COMMANDS[command](cfg, out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run(args.command, args.config, args.out, args.seed)
    except (ConfigurationError, SchemaError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalDomainError, TrainingError, UnreachableError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
