"""Natural cubic spline curves with fixed endpoints and uniform parametrisation."""

import csv
import json

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, SchemaError
from .metric import sqrt_det


class Curve:
    """Natural cubic spline through ``knots`` placed at ``t_i = i / (N_k - 1)``."""

    def __init__(self, knots):
        knots = np.array(knots, dtype=float)
        if knots.ndim != 2 or knots.shape[0] < 2:
            raise ConfigurationError("a curve needs at least two knots of shape (N_k, d)")
        if not np.all(np.isfinite(knots)):
            raise ConfigurationError("curve knots must be finite")
        self.knots = knots
        self.knots.setflags(write=False)
        self.times = np.linspace(0.0, 1.0, knots.shape[0])
        self._spline = CubicSpline(self.times, knots, bc_type="natural")

    @property
    def dim(self):
        return self.knots.shape[1]

    @property
    def n_knots(self):
        return self.knots.shape[0]

    @property
    def start(self):
        return self.knots[0]

    @property
    def end(self):
        return self.knots[-1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self._spline(t)
        # endpoints are reproduced exactly
        out = np.where(np.expand_dims(t == 0.0, -1), self.knots[0], out)
        out = np.where(np.expand_dims(t == 1.0, -1), self.knots[-1], out)
        return out

    def velocity(self, t):
        return self._spline(np.asarray(t, dtype=float), 1)

    def acceleration(self, t):
        return self._spline(np.asarray(t, dtype=float), 2)

    def with_knots(self, knots):
        return Curve(knots)

    def to_json(self):
        return {"knots": self.knots.tolist(), "dim": int(self.dim)}

    @classmethod
    def from_json(cls, obj):
        if "knots" not in obj:
            raise SchemaError("missing key 'knots'", "$.knots")
        knots = np.asarray(obj["knots"], dtype=float)
        if "dim" in obj and knots.ndim == 2 and knots.shape[1] != int(obj["dim"]):
            raise SchemaError("knot width does not match 'dim'", "$.dim")
        return cls(knots)

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def write_csv(self, path, metric=None, samples=101):
        """Write columns ``t, z_1..z_d, sqrt_det_M`` sampled uniformly in t."""
        t = np.linspace(0.0, 1.0, samples)
        pts = self(t)
        if metric is not None:
            sd = sqrt_det(metric(pts))
        else:
            sd = np.full(samples, np.nan)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"z_{i + 1}" for i in range(self.dim)] + ["sqrt_det_M"])
            for ti, p, s in zip(t, pts, sd):
                writer.writerow([repr(float(ti))] + [repr(float(v)) for v in p] + [repr(float(s))])


def straight_line(a, b, n_knots=2):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = np.linspace(0.0, 1.0, n_knots)[:, None]
    knots = (1.0 - s) * a + s * b
    knots[0], knots[-1] = a, b
    return Curve(knots)


def spline_basis(n_knots, t):
    """Cardinal basis of the natural spline: ``curve(t) = B(t) @ knots``.

    Returns value and first-derivative matrices, each of shape ``(len(t), n_knots)``.
    """
    times = np.linspace(0.0, 1.0, n_knots)
    sp = CubicSpline(times, np.eye(n_knots), bc_type="natural")
    return sp(t), sp(t, 1)


class Reparametrized:
    """The curve ``t -> curve(s(t))`` for a monotone C1 map ``s`` of [0, 1] onto itself."""

    def __init__(self, curve, s, ds):
        self.curve = curve
        self.s = s
        self.ds = ds

    @property
    def dim(self):
        return self.curve.dim

    def __call__(self, t):
        return self.curve(self.s(np.asarray(t, dtype=float)))

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        return self.curve.velocity(self.s(t)) * np.expand_dims(self.ds(t), -1)


def resample_by_arclength(points, n):
    """``n`` points equally spaced in Euclidean arclength along a polyline."""
    points = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0.0:
        return np.repeat(points[:1], n, axis=0)
    target = np.linspace(0.0, cum[-1], n)
    out = np.column_stack([np.interp(target, cum, points[:, j]) for j in range(points.shape[1])])
    out[0], out[-1] = points[0], points[-1]
    return out
