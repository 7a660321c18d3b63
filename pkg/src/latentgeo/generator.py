"""Generators with exact forward-mode Jacobians, and the latent pull-back metrics they induce."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .metric import MetricField, _as_batch

ACTIVATIONS = ("tanh", "softplus", "linear")
WEIGHT_FLOOR = 1e-8


class ImmersionWarning(UserWarning):
    """The generator Jacobian is (numerically) rank deficient."""


def _act(name, a):
    """Activation value with first and second derivatives."""
    if name == "tanh":
        t = np.tanh(a)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    if name == "softplus":
        s = np.logaddexp(0.0, a)
        sig = 0.5 * (1.0 + np.tanh(0.5 * a))
        return s, sig, sig * (1.0 - sig)
    if name == "linear":
        return a, np.ones_like(a), np.zeros_like(a)
    raise ConfigurationError(f"unsupported activation {name!r}; use one of {ACTIVATIONS}")


@dataclass
class Layer:
    weight: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)
    act: str = "tanh"


class FeedforwardNet:
    """Multilayer perceptron ``h_l = act_l(W_l h_{l-1} + b_l)``; the last layer is linear."""

    def __init__(self, layers):
        self.layers = []
        for i, layer in enumerate(layers):
            w = np.atleast_2d(np.asarray(layer.weight, dtype=float))
            b = np.asarray(layer.bias, dtype=float).ravel()
            if b.shape != (w.shape[0],):
                raise ConfigurationError(f"layer {i}: bias length does not match weight rows")
            if i > 0 and w.shape[1] != self.layers[-1].weight.shape[0]:
                raise ConfigurationError(f"layer {i}: input width does not match previous layer")
            if layer.act not in ACTIVATIONS:
                raise ConfigurationError(f"layer {i}: unsupported activation {layer.act!r}")
            self.layers.append(Layer(w, b, layer.act))
        if not self.layers:
            raise ConfigurationError("a network needs at least one layer")

    @classmethod
    def random(cls, sizes, act="tanh", rng=None, scale=None):
        """Glorot-uniform weights, zero biases; hidden layers use ``act``, output linear."""
        rng = np.random.default_rng(rng)
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            lim = np.sqrt(6.0 / (n_in + n_out)) if scale is None else scale
            w = rng.uniform(-lim, lim, size=(n_out, n_in))
            last = i == len(sizes) - 2
            layers.append(Layer(w, np.zeros(n_out), "linear" if last else act))
        return cls(layers)

    @property
    def in_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self):
        return self.layers[-1].weight.shape[0]

    @property
    def sizes(self):
        return [self.in_dim] + [l.weight.shape[0] for l in self.layers]

    @property
    def widths_nondecreasing(self):
        """``d <= n_1 <= ... <= D``, the width condition for an immersion."""
        s = self.sizes
        return all(b >= a for a, b in zip(s[:-1], s[1:]))

    def forward(self, z):
        h = np.atleast_2d(z)
        for layer in self.layers:
            h, _, _ = _act(layer.act, h @ layer.weight.T + layer.bias)
        return h

    def forward_cache(self, z):
        """Pre-activations and outputs of every layer, for backpropagation."""
        h = np.atleast_2d(z)
        cache = [(None, h)]
        for layer in self.layers:
            a = h @ layer.weight.T + layer.bias
            h, _, _ = _act(layer.act, a)
            cache.append((a, h))
        return cache

    def jacobian(self, z):
        """``(n, out, in)`` Jacobian by forward-mode chain rule."""
        h = np.atleast_2d(z)
        n, d = h.shape
        jac = np.broadcast_to(np.eye(d), (n, d, d))
        for layer in self.layers:
            a = h @ layer.weight.T + layer.bias
            h, d1, _ = _act(layer.act, a)
            jac = d1[:, :, None] * np.einsum("oi,nij->noj", layer.weight, jac)
        return jac

    def hessian(self, z):
        """``(n, out, in, in)`` second derivatives by forward-mode chain rule."""
        h = np.atleast_2d(z)
        n, d = h.shape
        jac = np.broadcast_to(np.eye(d), (n, d, d))
        hess = np.zeros((n, d, d, d))
        for layer in self.layers:
            a = h @ layer.weight.T + layer.bias
            ja = np.einsum("oi,nij->noj", layer.weight, jac)
            ha = np.einsum("oi,nijk->nojk", layer.weight, hess)
            h, d1, d2 = _act(layer.act, a)
            hess = d2[:, :, None, None] * np.einsum("noj,nok->nojk", ja, ja) + d1[:, :, None, None] * ha
            jac = d1[:, :, None] * ja
        return hess


class PositiveRbf:
    """Precision network ``beta(z) = W phi(z)`` with ``phi_k = exp(-0.5 gamma_k |z - c_k|^2)``."""

    def __init__(self, centers, gamma, weights, zeta=1e-6):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        k = len(self.centers)
        self.gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (k,)).copy()
        self.weights = np.atleast_2d(np.asarray(weights, dtype=float))
        if self.weights.shape[1] != k:
            raise ConfigurationError("precision weight matrix must have one column per center")
        if np.any(self.gamma <= 0):
            raise ConfigurationError("rbf bandwidths must be positive")
        if not np.all(np.isfinite(self.weights)):
            raise ConfigurationError("precision weights must be finite")
        # strict positivity keeps beta >= 0 and sigma bounded
        self.weights = np.maximum(self.weights, WEIGHT_FLOOR)
        if zeta <= 0:
            raise ConfigurationError("zeta must be positive")
        self.zeta = float(zeta)

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def basis(self, z):
        diff = np.atleast_2d(z)[:, None, :] - self.centers[None]
        return np.exp(-0.5 * self.gamma * np.sum(diff**2, axis=-1)), diff

    def beta(self, z):
        phi, _ = self.basis(z)
        return phi @ self.weights.T

    def beta_jacobian(self, z):
        phi, diff = self.basis(z)
        dphi = -(phi * self.gamma)[:, :, None] * diff  # (n, k, d)
        return np.einsum("ak,nkd->nad", self.weights, dphi)

    def variance(self, z):
        return 1.0 / (self.beta(z) + self.zeta)

    def sigma(self, z):
        return (self.beta(z) + self.zeta) ** -0.5

    def sigma_jacobian(self, z):
        b = self.beta(z) + self.zeta
        return -0.5 * (b ** -1.5)[:, :, None] * self.beta_jacobian(z)


class Generator:
    """``mu(z) = f(U_sub z) + A U_sub z + b`` with ``A = U diag(sqrt(lambda))``.

    ``subspace`` is an optional orthonormal ``d x d_sub`` pre-map so that the
    generator can be explored on a random low-dimensional slice of its input.
    """

    def __init__(self, net=None, U=None, eigenvalues=None, offset=None, precision=None,
                 use_linear_part=None, subspace=None, out_dim=None, in_dim=None):
        self.net = net
        self.U = None if U is None else np.atleast_2d(np.asarray(U, dtype=float))
        self.eigenvalues = None if eigenvalues is None else np.asarray(eigenvalues, dtype=float).ravel()
        if use_linear_part is None:
            use_linear_part = self.U is not None
        self.use_linear_part = bool(use_linear_part)
        if self.use_linear_part and (self.U is None or self.eigenvalues is None):
            raise ConfigurationError("the linear part needs U and eigenvalues")
        if net is not None:
            self._in, self._out = net.in_dim, net.out_dim
        elif self.U is not None:
            self._out, self._in = self.U.shape
        else:
            if in_dim is None or out_dim is None:
                raise ConfigurationError("a generator without a net needs explicit dimensions")
            self._in, self._out = int(in_dim), int(out_dim)
        if self.U is not None and self.U.shape != (self._out, self._in):
            raise ConfigurationError(f"U must be {self._out}x{self._in}, got {self.U.shape}")
        if self.eigenvalues is not None and np.any(self.eigenvalues < 0):
            raise ConfigurationError("eigenvalues must be nonnegative")
        self.offset = np.zeros(self._out) if offset is None else np.asarray(offset, dtype=float).ravel()
        if self.offset.shape != (self._out,):
            raise ConfigurationError("offset length must equal the output dimension")
        self.precision = precision
        if precision is not None and precision.out_dim != self._out:
            raise ConfigurationError("precision network output does not match the generator output")
        self.subspace = None if subspace is None else np.atleast_2d(np.asarray(subspace, dtype=float))
        if self.subspace is not None and self.subspace.shape[0] != self._in:
            raise ConfigurationError("subspace rows must equal the generator input dimension")

    @property
    def latent_dim(self):
        return self._in if self.subspace is None else self.subspace.shape[1]

    @property
    def ambient_dim(self):
        return self._out

    @property
    def linear_map(self):
        """``A = U diag(sqrt(lambda))`` or zeros when the linear part is off."""
        if not self.use_linear_part:
            return np.zeros((self._out, self._in))
        return self.U * np.sqrt(self.eigenvalues)

    def _lift(self, z):
        z, _ = _as_batch(z, self.latent_dim)
        return z if self.subspace is None else z @ self.subspace.T

    def _lift_jac(self, jac):
        return jac if self.subspace is None else jac @ self.subspace

    def forward(self, z):
        single = np.ndim(z) == 1
        u = self._lift(z)
        out = np.broadcast_to(self.offset, (len(u), self._out)).copy()
        if self.net is not None:
            out += self.net.forward(u)
        if self.use_linear_part:
            out += u @ self.linear_map.T
        return out[0] if single else out

    __call__ = forward

    def jacobian_mean(self, z):
        single = np.ndim(z) == 1
        u = self._lift(z)
        jac = np.broadcast_to(self.linear_map, (len(u), self._out, self._in)).copy()
        if self.net is not None:
            jac += self.net.jacobian(u)
        jac = self._lift_jac(jac)
        return jac[0] if single else jac

    jacobian = jacobian_mean

    def hessian_mean(self, z):
        single = np.ndim(z) == 1
        u = self._lift(z)
        if self.net is None:
            hess = np.zeros((len(u), self._out, self._in, self._in))
        else:
            hess = self.net.hessian(u)
        if self.subspace is not None:
            hess = np.einsum("naij,ip,jq->napq", hess, self.subspace, self.subspace)
        return hess[0] if single else hess

    def _need_precision(self):
        if self.precision is None:
            raise ConfigurationError(
                "generator has no precision network; use pullback_metric for deterministic generators"
            )

    def sigma(self, z):
        self._need_precision()
        single = np.ndim(z) == 1
        s = self.precision.sigma(self._lift(z))
        return s[0] if single else s

    def jacobian_sigma(self, z):
        self._need_precision()
        single = np.ndim(z) == 1
        jac = self._lift_jac(self.precision.sigma_jacobian(self._lift(z)))
        return jac[0] if single else jac


class Paraboloid:
    """Analytic map ``z -> [z, c |z|^2]`` with exact Jacobian and Hessian."""

    def __init__(self, dim=2, coef=0.3):
        self.latent_dim = int(dim)
        self.ambient_dim = self.latent_dim + 1
        self.coef = float(coef)

    def forward(self, z):
        single = np.ndim(z) == 1
        z, _ = _as_batch(z, self.latent_dim)
        out = np.column_stack([z, self.coef * np.sum(z**2, axis=1)])
        return out[0] if single else out

    __call__ = forward

    def jacobian_mean(self, z):
        single = np.ndim(z) == 1
        z, _ = _as_batch(z, self.latent_dim)
        n, d = z.shape
        jac = np.zeros((n, d + 1, d))
        jac[:, :d, :] = np.eye(d)
        jac[:, d, :] = 2.0 * self.coef * z
        return jac[0] if single else jac

    jacobian = jacobian_mean

    def hessian_mean(self, z):
        single = np.ndim(z) == 1
        z, _ = _as_batch(z, self.latent_dim)
        n, d = z.shape
        hess = np.zeros((n, d + 1, d, d))
        hess[:, d] = 2.0 * self.coef * np.eye(d)
        return hess[0] if single else hess


def finite_diff_jacobian(fn, z, lam=1e-5):
    """Forward-difference Jacobian of a batched map from a single batch of ``d + 1`` inputs."""
    if lam <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    z = np.asarray(z, dtype=float).ravel()
    batch = np.vstack([z, z + lam * np.eye(z.size)])
    out = np.atleast_2d(fn(batch))
    return ((out[1:] - out[0]) / lam).T


class FiniteDifferenceMap:
    """Wraps a batched black-box map; Jacobians come from ``finite_diff_jacobian``."""

    def __init__(self, fn, latent_dim, ambient_dim, lam=1e-5):
        self.fn = fn
        self.latent_dim = int(latent_dim)
        self.ambient_dim = int(ambient_dim)
        self.lam = lam
        self.calls = 0

    def forward(self, z):
        single = np.ndim(z) == 1
        self.calls += 1
        out = np.atleast_2d(self.fn(np.atleast_2d(z)))
        return out[0] if single else out

    __call__ = forward

    def jacobian_mean(self, z):
        single = np.ndim(z) == 1
        z = np.atleast_2d(z)

        def counted(batch):
            self.calls += 1
            return self.fn(batch)

        jac = np.stack([finite_diff_jacobian(counted, zi, self.lam) for zi in z])
        return jac[0] if single else jac

    jacobian = jacobian_mean


# --------------------------------------------------------------------------- PCA


@dataclass
class PcaModel:
    components: np.ndarray  # (D, d), orthonormal columns
    eigenvalues: np.ndarray  # (d,), descending
    mean: np.ndarray  # (D,)

    @property
    def projection(self):
        """Row matrix ``P`` (d x D) mapping centred data onto the components."""
        return self.components.T


def fit_pca(points, d):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, big_d = points.shape
    if d < 1 or d > min(n - 1, big_d):
        raise ConfigurationError(f"cannot extract {d} components from {n} points in {big_d} dimensions")
    mean = points.mean(axis=0)
    centred = points - mean
    cov = centred.T @ centred / (n - 1)
    ev, vecs = np.linalg.eigh(cov)
    order = np.argsort(ev)[::-1][:d]
    ev = np.clip(ev[order], 0.0, None)
    vecs = vecs[:, order]
    # deterministic sign: largest-magnitude entry of each component is positive
    signs = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(d)])
    signs[signs == 0] = 1.0
    return PcaModel(vecs * signs, ev, mean)


# --------------------------------------------------------------------------- pull-back metrics


def _warn_rank(m):
    ev = np.linalg.eigvalsh(m)
    bad = ev[..., 0] < 1e-12 * np.maximum(ev[..., -1], 1e-300)
    if np.any(bad):
        warnings.warn("pull-back metric is rank deficient; the generator is not an immersion here",
                      ImmersionWarning, stacklevel=3)


class PullbackMetric(MetricField):
    """``J_mu(z)^T M_X(mu(z)) J_mu(z)``.

    The derivative is analytic when the generator exposes ``hessian_mean``
    and the ambient metric has an analytic derivative.
    """

    def __init__(self, gen, ambient, check_rank=False):
        if ambient.dim != gen.ambient_dim:
            raise ConfigurationError(
                f"ambient metric dimension {ambient.dim} != generator output {gen.ambient_dim}"
            )
        self.gen = gen
        self.ambient = ambient
        self.dim = gen.latent_dim
        self.check_rank = check_rank
        if hasattr(gen, "hessian_mean") and ambient._derivative is not None:
            self._derivative = self._analytic_derivative

    def _evaluate(self, z):
        x = self.gen.forward(z)
        jac = self.gen.jacobian_mean(z)
        m = self.ambient.sandwich(x, jac)
        if self.check_rank:
            _warn_rank(m)
        return m

    def _analytic_derivative(self, z):
        x = self.gen.forward(z)
        jac = self.gen.jacobian_mean(z)  # (n, D, d)
        hess = self.gen.hessian_mean(z)  # (n, D, d, d)
        mx = self.ambient(x)  # (n, D, D)
        dmx = self.ambient.derivative(x)  # (n, D, D, D)
        a = np.einsum("naik,nab,nbj->nijk", hess, mx, jac)
        chain = np.einsum("nabc,nck->nabk", dmx, jac)
        b = np.einsum("nai,nabk,nbj->nijk", jac, chain, jac)
        return a + np.swapaxes(a, 1, 2) + b


class ExpectedPullbackMetric(MetricField):
    """``J_mu^T M_X(mu) J_mu + J_sigma^T M_X(mu) J_sigma``."""

    def __init__(self, gen, ambient):
        gen._need_precision()
        if ambient.dim != gen.ambient_dim:
            raise ConfigurationError("ambient metric dimension does not match the generator output")
        self.gen = gen
        self.ambient = ambient
        self.dim = gen.latent_dim

    def _evaluate(self, z):
        x = self.gen.forward(z)
        return self.ambient.sandwich(x, self.gen.jacobian_mean(z)) + self.ambient.sandwich(
            x, self.gen.jacobian_sigma(z)
        )


def _metric_at(field_cls, gen, ambient, z):
    field = field_cls(gen, ambient)
    # rank is judged before the diagonal lift, which would otherwise mask it
    raw = np.atleast_2d(field.raw(z))
    _warn_rank(0.5 * (raw + np.swapaxes(raw, -1, -2)))
    return field(z)


def pullback_metric(gen, ambient, z):
    return _metric_at(PullbackMetric, gen, ambient, z)


def expected_pullback_metric(gen, ambient, z):
    return _metric_at(ExpectedPullbackMetric, gen, ambient, z)


def stochastic_pullback_metric(gen, ambient, z, eps, frozen=False):
    """Pull-back through the sampled generator with fixed noise ``eps``.

    ``eps`` may be a single ``D``-vector or a batch ``(n_draws, D)``; the
    latter returns one metric per draw. With ``frozen`` the ambient metric is
    evaluated at ``mu(z)`` instead of ``mu(z) + eps * sigma(z)``.
    """
    z = np.asarray(z, dtype=float)
    eps = np.asarray(eps, dtype=float)
    single = eps.ndim == 1
    eps = np.atleast_2d(eps)
    mu = gen.forward(z)
    j_mu = gen.jacobian_mean(z)
    if np.any(eps):
        sigma = gen.sigma(z)
        j_sigma = gen.jacobian_sigma(z)
    else:
        sigma = np.zeros_like(mu)
        j_sigma = np.zeros_like(j_mu)
    jac = j_mu[None] + eps[:, :, None] * j_sigma[None]
    x = np.broadcast_to(mu, eps.shape) if frozen else mu + eps * sigma
    m = ambient.sandwich(x, jac)
    m = 0.5 * (m + np.swapaxes(m, 1, 2))
    return m[0] if single else m


def mc_expected_metric(gen, ambient, z, n_draws=1000, rng=None, frozen=True):
    """Monte-Carlo mean of the stochastic pull-back over standard normal noise."""
    rng = np.random.default_rng(rng)
    eps = rng.standard_normal((n_draws, gen.ambient_dim))
    return stochastic_pullback_metric(gen, ambient, z, eps, frozen=frozen).mean(axis=0)
