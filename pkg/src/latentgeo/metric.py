"""Metric fields: smooth maps from points to symmetric positive-definite matrices.

Every field evaluates batches. ``field(z)`` accepts a single point of shape
``(d,)`` or a batch ``(n, d)`` and returns ``(d, d)`` or ``(n, d, d)``.
Outputs are symmetrised and their eigenvalues floored at
``REGULARIZATION * trace / d`` so that nearly degenerate pull-backs stay
invertible. Well-conditioned matrices pass through unchanged.
"""

import numpy as np

from .errors import ConfigurationError, NumericalDomainError

REGULARIZATION = 1e-10
FD_STEP = 1e-4


def _as_batch(z, dim):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[-1] != dim:
        raise ConfigurationError(f"expected points of dimension {dim}, got {z.shape[-1]}")
    return z, single


def _floor_spectrum(m):
    """Shift the diagonal just enough to lift the smallest eigenvalue to the floor."""
    d = m.shape[-1]
    ok = np.all(np.isfinite(m), axis=(1, 2))
    good = m[ok]
    floor = REGULARIZATION * np.abs(np.trace(good, axis1=-2, axis2=-1)) / d
    lowest = np.linalg.eigvalsh(good)[:, 0] if d > 1 else good[:, 0, 0]
    deficit = np.zeros(len(m))
    deficit[ok] = np.clip(floor - lowest, 0.0, None)
    if not np.any(deficit):
        return m
    return m + deficit[:, None, None] * np.eye(d)


class MetricField:
    """Base class. Subclasses implement ``_evaluate`` on ``(n, d)`` batches.

    ``_derivative`` may be overridden to return ``(n, d, d, d)`` arrays with
    ``out[n, i, j, k] = dM_ij / dz_k``; otherwise central differences are used.
    """

    dim = None
    fd_step = FD_STEP
    # fields that are SPD by construction skip the diagonal lift
    regularize = True

    def _evaluate(self, z):
        raise NotImplementedError

    _derivative = None

    @property
    def derivative_mode(self):
        return "analytic" if self._derivative is not None else "central-finite-difference"

    def __call__(self, z):
        z, single = _as_batch(z, self.dim)
        m = np.asarray(self._evaluate(z), dtype=float)
        m = 0.5 * (m + np.swapaxes(m, -1, -2))
        if self.regularize:
            m = _floor_spectrum(m)
        return m[0] if single else m

    def raw(self, z):
        """Evaluate without symmetrisation or regularisation."""
        z, single = _as_batch(z, self.dim)
        m = np.asarray(self._evaluate(z), dtype=float)
        return m[0] if single else m

    def sandwich(self, x, jac):
        """Return ``J^T M(x) J`` for batches ``x (n, D)`` and ``jac (n, D, d)``."""
        m = self(np.atleast_2d(x))
        return np.einsum("nai,nab,nbj->nij", jac, m, jac)

    def derivative(self, z):
        z, single = _as_batch(z, self.dim)
        if self._derivative is not None:
            dm = np.asarray(self._derivative(z), dtype=float)
            dm = 0.5 * (dm + np.swapaxes(dm, 1, 2))
        else:
            dm = self._fd_derivative(z)
        return dm[0] if single else dm

    def _fd_derivative(self, z):
        n, d = z.shape
        h = self.fd_step * np.maximum(1.0, np.abs(z))  # (n, d)
        pts = np.empty((n, 2 * d, d))
        for k in range(d):
            pts[:, 2 * k] = z
            pts[:, 2 * k + 1] = z
            pts[:, 2 * k, k] += h[:, k]
            pts[:, 2 * k + 1, k] -= h[:, k]
        m = self(pts.reshape(-1, d)).reshape(n, 2 * d, d, d)
        dm = (m[:, 0::2] - m[:, 1::2]) / (2.0 * h[:, :, None, None])  # (n, k, i, j)
        return np.transpose(dm, (0, 2, 3, 1))


class FunctionMetric(MetricField):
    """Metric defined by a user function ``fn(z_batch) -> (n, d, d)``."""

    def __init__(self, dim, fn, derivative=None, fd_step=FD_STEP):
        self.dim = int(dim)
        self._fn = fn
        self.fd_step = fd_step
        if derivative is not None:
            self._derivative = derivative

    def _evaluate(self, z):
        return self._fn(z)


class ConstantMetric(MetricField):
    regularize = False

    def __init__(self, matrix):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.shape[0] != matrix.shape[1]:
            raise ConfigurationError("constant metric must be square")
        if not np.allclose(matrix, matrix.T) or np.linalg.eigvalsh(matrix).min() <= 0:
            raise ConfigurationError("constant metric must be symmetric positive definite")
        self.matrix = matrix
        self.dim = matrix.shape[0]

    def _evaluate(self, z):
        return np.broadcast_to(self.matrix, (z.shape[0], self.dim, self.dim))

    def _derivative(self, z):
        return np.zeros((z.shape[0], self.dim, self.dim, self.dim))

    def sandwich(self, x, jac):
        return np.einsum("nai,ab,nbj->nij", jac, self.matrix, jac)


def identity_metric(dim):
    return ConstantMetric(np.eye(dim))


def metric_derivative(metric, z):
    """Jacobian of ``vec(M)`` (columns stacked) with respect to ``z``: shape ``(d*d, d)``."""
    dm = metric.derivative(np.asarray(z, dtype=float))
    d = metric.dim
    # vec stacks columns: row index i + d*j holds dM_ij
    return np.transpose(dm, (1, 0, 2)).reshape(d * d, d)


def sqrt_det(m):
    """``sqrt(det M)`` via symmetric eigenvalues, log-domain above 20 dimensions."""
    m = np.asarray(m, dtype=float)
    ev = np.linalg.eigvalsh(m)
    if not np.all(np.isfinite(ev)):
        raise NumericalDomainError("non-finite metric eigenvalues")
    ev = np.clip(ev, 0.0, None)
    if m.shape[-1] > 20:
        with np.errstate(divide="ignore"):
            return np.exp(0.5 * np.sum(np.log(ev), axis=-1))
    return np.sqrt(np.prod(ev, axis=-1))
