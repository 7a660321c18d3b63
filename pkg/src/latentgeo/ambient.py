"""Ambient metrics built from data: support/cost RBF metrics, local covariance,
local LDA with convex-combination interpolation, positive combinations and
linear projections."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls
from sklearn.cluster import KMeans

from .errors import ConfigurationError, SchemaError
from .metric import ConstantMetric, MetricField, _as_batch, identity_metric

KERNEL_FLOOR = 1e-300
# exponent of the smooth saturation h / (1 + h^p)^(1/p) used when an RBF sum may exceed 1
SATURATION_POWER = 16
QUADRATIC_FORM_ONLY_ABOVE = 256


def kmeans(points, k, seed=0, iters=50):
    """k-means++ initialised Lloyd iterations; returns (centers, labels)."""
    points = np.asarray(points, dtype=float)
    if k > len(points):
        raise ConfigurationError(f"K={k} exceeds the number of points {len(points)}")
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=iters, random_state=seed)
    labels = km.fit_predict(points)
    return km.cluster_centers_.copy(), labels


# --------------------------------------------------------------------------- support functions


class SupportFunction:
    """Positive function ``h`` that is large near data (or near costly regions).

    ``kind="positive-rbf"``: ``h(x) = sum_k w_k exp(-0.5 lambda_k |x - c_k|^2)``.
    ``kind="unnormalized-gmm"``: ``h(x) = sum_k pi_k exp(-0.5 sum_d (x_d - c_kd)^2 / s_d^2)``.
    """

    def __init__(self, kind, centers, weights, bandwidths=None, variances=None):
        self.kind = kind
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.weights = np.asarray(weights, dtype=float).ravel()
        k, dim = self.centers.shape
        if self.weights.shape != (k,):
            raise ConfigurationError("one weight per center is required")
        if kind == "positive-rbf":
            self.bandwidths = np.broadcast_to(np.asarray(bandwidths, dtype=float), (k,)).copy()
            if np.any(self.weights <= 0) or np.any(self.bandwidths <= 0):
                raise ConfigurationError("rbf weights and bandwidths must be positive")
            self._scale = np.repeat(self.bandwidths[:, None], dim, axis=1)
        elif kind == "unnormalized-gmm":
            self.variances = np.broadcast_to(np.asarray(variances, dtype=float), (dim,)).copy()
            if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
                raise ConfigurationError("gmm weights must be nonnegative and sum to 1")
            if np.any(self.variances <= 0):
                raise ConfigurationError("gmm variances must be positive")
            self._scale = np.repeat((1.0 / self.variances)[None, :], k, axis=0)
        else:
            raise ConfigurationError(f"unknown support function kind {kind!r}")

    @property
    def dim(self):
        return self.centers.shape[1]

    def upper_bound(self):
        """A bound on ``sup_x h(x)``."""
        return float(self.weights.sum())

    def basis(self, x):
        diff = x[:, None, :] - self.centers[None, :, :]  # (n, k, D)
        return np.exp(-0.5 * np.sum(self._scale * diff**2, axis=-1)), diff

    def __call__(self, x):
        x, single = _as_batch(x, self.dim)
        phi, _ = self.basis(x)
        h = phi @ self.weights
        return h[0] if single else h

    def gradient(self, x):
        x, single = _as_batch(x, self.dim)
        phi, diff = self.basis(x)
        g = -np.einsum("nk,k,nkd->nd", phi, self.weights, self._scale * diff)
        return g[0] if single else g

    def to_json(self):
        out = {"kind": self.kind, "centers": self.centers.tolist(), "weights": self.weights.tolist()}
        if self.kind == "positive-rbf":
            out["bandwidths"] = self.bandwidths.tolist()
        else:
            out["variances"] = self.variances.tolist()
        return out

    @classmethod
    def from_json(cls, obj):
        return cls(
            obj["kind"],
            obj["centers"],
            obj["weights"],
            bandwidths=obj.get("bandwidths"),
            variances=obj.get("variances"),
        )


def rbf_bandwidths(points, centers, labels, kappa):
    """``lambda_k = 0.5 * (kappa * mean_{x in C_k} |x - c_k|)^-2``."""
    lam = np.empty(len(centers))
    for k, c in enumerate(centers):
        members = points[labels == k]
        mean_dist = np.mean(np.linalg.norm(members - c, axis=1)) if len(members) else 0.0
        if mean_dist <= 0.0:
            mean_dist = 1e-8
        lam[k] = 0.5 * (kappa * mean_dist) ** -2
    return lam


def fit_rbf_support(points, k, kappa=1.0, seed=0, weight_floor=1e-8):
    """Positive RBF support function with target value 1 on the data."""
    points = np.asarray(points, dtype=float)
    if k > len(points):
        raise ConfigurationError(f"K={k} exceeds the number of points {len(points)}")
    centers, labels = kmeans(points, k, seed=seed)
    lam = rbf_bandwidths(points, centers, labels, kappa)
    phi = np.exp(-0.5 * lam[None, :] * np.sum((points[:, None, :] - centers[None]) ** 2, axis=-1))
    w, _ = nnls(phi, np.ones(len(points)))
    w = np.maximum(w, weight_floor)
    return SupportFunction("positive-rbf", centers, w, bandwidths=lam)


def cost_rbf(centers, values, sigma):
    """Cost function ``sum_k y_k exp(-|x - c_k|^2 / (2 sigma^2))``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    values = np.broadcast_to(np.asarray(values, dtype=float), (len(centers),))
    return SupportFunction("positive-rbf", centers, values, bandwidths=1.0 / sigma**2)


def fit_gmm_support(points, k, seed=0):
    """Unnormalised GMM with shared diagonal covariance and uniform weights over k-means centers."""
    points = np.asarray(points, dtype=float)
    centers, labels = kmeans(points, k, seed=seed)
    resid = points - centers[labels]
    var = np.maximum(np.mean(resid**2, axis=0), 1e-12)
    pi = np.bincount(labels, minlength=k) / len(points)
    keep = pi > 0
    pi = pi[keep] / pi[keep].sum()
    return SupportFunction("unnormalized-gmm", centers[keep], pi, variances=var)


@dataclass(frozen=True)
class SupportMetricParams:
    alpha: float = 1e3
    epsilon: float = 1e-2
    mode: str = "support"

    def __post_init__(self):
        if self.alpha <= 0 or self.epsilon <= 0:
            raise ConfigurationError("alpha and epsilon must be positive")
        if self.mode not in ("support", "cost"):
            raise ConfigurationError("mode must be 'support' or 'cost'")


def _saturate(h):
    p = SATURATION_POWER
    return h / (1.0 + h**p) ** (1.0 / p)


def _saturate_grad(h):
    p = SATURATION_POWER
    return (1.0 + h**p) ** (-1.0 / p - 1.0)


class SupportMetric(MetricField):
    """Diagonal metric ``(alpha h + eps)^-1 I`` (support) or ``(alpha h + eps) I`` (cost).

    In support mode an RBF sum whose weights add up to more than one is
    smoothly saturated below 1, which keeps every entry in
    ``[1/(alpha+eps), 1/eps]``.
    """

    regularize = False

    def __init__(self, h, params=SupportMetricParams()):
        self.h = h
        self.params = params
        self.dim = h.dim
        self._saturated = params.mode == "support" and h.upper_bound() > 1.0

    def scale(self, x):
        """The scalar multiplying the identity, for a ``(n, D)`` batch."""
        h = self.h(x)
        if self._saturated:
            h = _saturate(h)
        a, e = self.params.alpha, self.params.epsilon
        return 1.0 / (a * h + e) if self.params.mode == "support" else a * h + e

    def _evaluate(self, x):
        return self.scale(x)[:, None, None] * np.eye(self.dim)

    def _derivative(self, x):
        h = self.h(x)
        gh = self.h.gradient(x)
        a, e = self.params.alpha, self.params.epsilon
        if self._saturated:
            gh = gh * _saturate_grad(h)[:, None]
            h = _saturate(h)
        if self.params.mode == "support":
            ds = -a * gh / (a * h + e)[:, None] ** 2
        else:
            ds = a * gh
        return np.einsum("ij,nk->nijk", np.eye(self.dim), ds)

    def sandwich(self, x, jac):
        s = self.scale(np.atleast_2d(x))
        return s[:, None, None] * np.einsum("nai,naj->nij", jac, jac)


def eval_support_metric(h, params, x):
    return SupportMetric(h, params)(x)


# --------------------------------------------------------------------------- local diagonal covariance


class LocalDiagCovMetric(MetricField):
    """Inverse local diagonal covariance with Gaussian weights."""

    regularize = False

    def __init__(self, data, sigma=1.0, eps=1e-2):
        self.data = np.atleast_2d(np.asarray(data, dtype=float))
        if len(self.data) == 0:
            raise ConfigurationError("local covariance metric needs data")
        self.sigma = float(sigma)
        self.eps = float(eps)
        self.dim = self.data.shape[1]

    def diagonal(self, x):
        diff = self.data[None, :, :] - x[:, None, :]  # (n, N, D)
        w = np.exp(-np.sum(diff**2, axis=-1) / (2.0 * self.sigma**2))
        return 1.0 / (np.einsum("nk,nkd->nd", w, diff**2) + self.eps)

    def _evaluate(self, x):
        diag = self.diagonal(x)
        return diag[:, :, None] * np.eye(self.dim)

    def sandwich(self, x, jac):
        diag = self.diagonal(np.atleast_2d(x))
        return np.einsum("nai,na,naj->nij", jac, diag, jac)


def eval_local_diag_cov_metric(data, sigma, eps, x):
    return LocalDiagCovMetric(data, sigma, eps)(x)


# --------------------------------------------------------------------------- local LDA


@dataclass
class LocalLdaStats:
    """Neighbourhood statistics at one base point."""

    neighbors: np.ndarray
    weights: np.ndarray
    within: np.ndarray
    between: np.ndarray
    class_means: dict
    priors: dict
    mean: np.ndarray
    metric: np.ndarray


def local_lda_statistics(points, labels, base, metric, k, eps, diagonal_within=True):
    """One local-LDA update at ``base`` using the current ``metric`` for neighbour search."""
    diff = points - base
    dist = np.sqrt(np.maximum(np.einsum("ni,ij,nj->n", diff, metric, diff), 0.0))
    order = np.argsort(dist, kind="stable")[:k]
    d_nb = dist[order]
    radius = d_nb.max()
    if radius > 0:
        ratio = d_nb / radius
        w = np.where(d_nb < radius, (1.0 - ratio**3) ** 3, 0.0)
    else:
        w = np.ones_like(d_nb)
    x_nb = points[order]
    y_nb = labels[order]
    total = w.sum()
    dim = points.shape[1]
    within = np.zeros((dim, dim))
    means, priors = {}, {}
    for c in np.unique(y_nb):
        sel = y_nb == c
        wc = w[sel].sum()
        if wc <= 0:
            continue
        mc = (w[sel, None] * x_nb[sel]).sum(axis=0) / wc
        means[int(c)] = mc
        priors[int(c)] = wc / total
        r = x_nb[sel] - mc
        within += np.einsum("n,ni,nj->ij", w[sel], r, r)
    within /= total
    mean = sum(priors[c] * means[c] for c in means)
    between = np.zeros((dim, dim))
    for c in means:
        r = means[c] - mean
        between += priors[c] * np.outer(r, r)
    if diagonal_within:
        within = np.diag(np.diag(within))
    w_diag = np.maximum(np.diag(within), 1e-12)
    if diagonal_within:
        w_inv = np.diag(1.0 / w_diag)
    else:
        w_inv = np.linalg.inv(within + 1e-12 * np.eye(dim))
    new_metric = w_inv @ between @ w_inv + eps * w_inv
    new_metric = 0.5 * (new_metric + new_metric.T)
    return LocalLdaStats(order, w, within, between, means, priors, mean, new_metric)


@dataclass
class LocalLdaMetricSet:
    base_points: np.ndarray
    base_metrics: np.ndarray
    sigma: float = 1.0


def fit_local_lda(points, labels, n_base, k=50, eps=1e-3, iters=20, seed=0, sigma=1.0, diagonal_within=True):
    """Local LDA metrics at ``n_base`` randomly chosen data points."""
    points = np.asarray(points, dtype=float)
    if labels is None:
        raise ConfigurationError("local LDA needs class labels")
    labels = np.asarray(labels).astype(int)
    if len(np.unique(labels)) < 2:
        raise ConfigurationError("local LDA needs at least two classes")
    if k > len(points):
        raise ConfigurationError(f"K={k} exceeds the number of points {len(points)}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(points), size=min(n_base, len(points)), replace=False)
    base = points[idx]
    dim = points.shape[1]
    metrics = np.empty((len(base), dim, dim))
    for s, xs in enumerate(base):
        m = np.eye(dim)
        for _ in range(iters):
            new = local_lda_statistics(points, labels, xs, m, k, eps, diagonal_within).metric
            done = np.allclose(new, m, rtol=1e-12, atol=0.0)
            m = new
            if done:
                break
        metrics[s] = m
    return LocalLdaMetricSet(base, metrics, sigma)


class ConvexCombinationMetric(MetricField):
    """``sum_k w_k(x) M_k`` with normalised Gaussian kernel weights around base points."""

    regularize = False

    def __init__(self, base_points, base_metrics, sigma=1.0):
        self.base_points = np.atleast_2d(np.asarray(base_points, dtype=float))
        self.base_metrics = np.asarray(base_metrics, dtype=float).reshape(
            len(self.base_points), self.base_points.shape[1], self.base_points.shape[1]
        )
        if len(self.base_points) == 0:
            raise ConfigurationError("convex combination needs at least one base metric")
        self.sigma = float(sigma)
        self.dim = self.base_points.shape[1]

    @classmethod
    def from_set(cls, lda_set):
        return cls(lda_set.base_points, lda_set.base_metrics, lda_set.sigma)

    def weights(self, x):
        x, single = _as_batch(x, self.dim)
        sq = np.sum((x[:, None, :] - self.base_points[None]) ** 2, axis=-1)
        raw = np.exp(-sq / (2.0 * self.sigma**2))
        raw = np.where(raw < KERNEL_FLOOR, 0.0, raw)
        total = raw.sum(axis=1)
        dead = total == 0.0
        w = np.zeros_like(raw)
        w[~dead] = raw[~dead] / total[~dead, None]
        if np.any(dead):
            nearest = np.argmin(sq[dead], axis=1)  # argmin returns the lowest index on ties
            w[np.flatnonzero(dead), nearest] = 1.0
        return w[0] if single else w

    def _evaluate(self, x):
        return np.einsum("nk,kij->nij", self.weights(x), self.base_metrics)


def eval_convex_combination_metric(lda_set, x):
    return ConvexCombinationMetric.from_set(lda_set)(x)


# --------------------------------------------------------------------------- combinators


class CombinedMetric(MetricField):
    """Pointwise positive combination ``sum_i w_i M_i(x)``.

    Each field is evaluated with its own regularisation, so the sum needs none.
    """

    regularize = False

    def __init__(self, fields, weights):
        fields = list(fields)
        weights = np.asarray(weights, dtype=float).ravel()
        if not fields or len(fields) != len(weights):
            raise ConfigurationError("need one weight per metric field")
        if np.any(weights <= 0):
            raise ConfigurationError("combination weights must be positive")
        dims = {f.dim for f in fields}
        if len(dims) != 1:
            raise ConfigurationError(f"metric dimensions differ: {sorted(dims)}")
        self.fields = fields
        self.weights = weights
        self.dim = dims.pop()

    def _evaluate(self, x):
        return sum(w * f(x) for f, w in zip(self.fields, self.weights))

    def sandwich(self, x, jac):
        return sum(w * f.sandwich(x, jac) for f, w in zip(self.fields, self.weights))


def combine_metrics(fields, weights):
    return CombinedMetric(fields, weights)


class ProjectedMetric(MetricField):
    """``P^T M'(P (x - c)) P`` for a ``d' x D`` projection ``P`` and an inner metric on ``R^d'``."""

    def __init__(self, projection, center, inner):
        self.projection = np.atleast_2d(np.asarray(projection, dtype=float))
        self.center = np.asarray(center, dtype=float).ravel()
        self.inner = inner
        dp, big_d = self.projection.shape
        if self.center.shape != (big_d,):
            raise ConfigurationError("center must have one entry per ambient dimension")
        if inner.dim != dp:
            raise ConfigurationError("inner metric dimension must equal the number of projection rows")
        self.dim = big_d

    def project(self, x):
        return (np.atleast_2d(x) - self.center) @ self.projection.T

    def _evaluate(self, x):
        if self.dim > QUADRATIC_FORM_ONLY_ABOVE:
            raise ConfigurationError(
                f"full {self.dim}x{self.dim} matrices are not materialised; use quadratic_form or sandwich"
            )
        inner = self.inner(self.project(x))
        return np.einsum("ai,nab,bj->nij", self.projection, inner, self.projection)

    def quadratic_form(self, x, v):
        """``<v, M(x) v>`` without forming the ``D x D`` matrix."""
        single = np.ndim(x) == 1 and np.ndim(v) == 1
        pv = np.atleast_2d(v) @ self.projection.T
        inner = self.inner(self.project(x))
        out = np.einsum("na,nab,nb->n", pv, inner, pv)
        return out[0] if single else out

    def sandwich(self, x, jac):
        pj = np.einsum("ad,ndi->nai", self.projection, jac)
        return self.inner.sandwich(self.project(x), pj)


def eval_projected_metric(pm, x, direction=None):
    if direction is None:
        return pm(x)
    return pm.quadratic_form(x, direction)


# --------------------------------------------------------------------------- serialization


def metric_to_json(metric):
    if isinstance(metric, ConstantMetric):
        if np.array_equal(metric.matrix, np.eye(metric.dim)):
            return {"kind": "identity", "dim": int(metric.dim)}
        return {"kind": "constant", "matrix": metric.matrix.tolist()}
    if isinstance(metric, SupportMetric):
        kind = "support-rbf" if metric.h.kind == "positive-rbf" else "support-gmm"
        return {
            "kind": kind,
            "alpha": metric.params.alpha,
            "epsilon": metric.params.epsilon,
            "mode": metric.params.mode,
            "h": metric.h.to_json(),
        }
    if isinstance(metric, LocalDiagCovMetric):
        return {"kind": "local-diag", "data": metric.data.tolist(), "sigma": metric.sigma, "epsilon": metric.eps}
    if isinstance(metric, ConvexCombinationMetric):
        return {
            "kind": "local-lda",
            "base_points": metric.base_points.tolist(),
            "base_metrics": metric.base_metrics.tolist(),
            "sigma": metric.sigma,
        }
    if isinstance(metric, CombinedMetric):
        return {
            "kind": "combination",
            "weights": metric.weights.tolist(),
            "metrics": [metric_to_json(f) for f in metric.fields],
        }
    if isinstance(metric, ProjectedMetric):
        return {
            "kind": "projected",
            "projection": metric.projection.tolist(),
            "center": metric.center.tolist(),
            "inner": metric_to_json(metric.inner),
        }
    raise ConfigurationError(f"cannot serialise metric of type {type(metric).__name__}")


def metric_from_json(obj, path="$"):
    if not isinstance(obj, dict) or "kind" not in obj:
        raise SchemaError("metric object needs a 'kind' key", path)
    kind = obj["kind"]
    try:
        if kind == "identity":
            return identity_metric(int(obj["dim"]))
        if kind == "constant":
            return ConstantMetric(obj["matrix"])
        if kind in ("support-rbf", "support-gmm"):
            params = SupportMetricParams(float(obj["alpha"]), float(obj["epsilon"]), obj.get("mode", "support"))
            return SupportMetric(SupportFunction.from_json(obj["h"]), params)
        if kind == "local-diag":
            return LocalDiagCovMetric(obj["data"], obj["sigma"], obj["epsilon"])
        if kind == "local-lda":
            return ConvexCombinationMetric(obj["base_points"], obj["base_metrics"], obj.get("sigma", 1.0))
        if kind == "combination":
            fields = [metric_from_json(m, f"{path}.metrics[{i}]") for i, m in enumerate(obj["metrics"])]
            return CombinedMetric(fields, obj["weights"])
        if kind == "projected":
            inner = metric_from_json(obj["inner"], f"{path}.inner")
            return ProjectedMetric(obj["projection"], obj["center"], inner)
    except KeyError as exc:
        raise SchemaError(f"missing key {exc.args[0]!r}", f"{path}.{exc.args[0]}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(str(exc), path) from exc
    raise SchemaError(f"unknown metric kind {kind!r}", f"{path}.kind")
