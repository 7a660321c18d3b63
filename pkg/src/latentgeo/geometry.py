"""Curve length and energy, plus solvers for the geodesic equation."""

from dataclasses import dataclass, field

import numpy as np

from .curves import Curve, resample_by_arclength, spline_basis, straight_line
from .errors import ConfigurationError, DomainEscapeError, NumericalDomainError


@dataclass
class TangentVector:
    base: np.ndarray
    components: np.ndarray
    converged: bool = True

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        self.components = np.asarray(self.components, dtype=float)
        if self.base.shape != self.components.shape:
            raise ConfigurationError("tangent vector and base point differ in dimension")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.components, dtype=dtype)


@dataclass
class GeodesicSolution:
    curve: Curve
    length: float
    energy: float
    converged: bool
    iterations: int
    residual: float

    def summary(self):
        return {
            "length": float(self.length),
            "energy": float(self.energy),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "residual": float(self.residual),
        }


@dataclass
class BvpOptions:
    n_knots: int = 16
    segments: int = None  # defaults to 10 * n_knots
    tol: float = 1e-6
    max_iters: int = 2000
    graph_init: object = None  # a LatentGraph
    armijo_c: float = 1e-4
    max_halvings: int = 60

    def resolved_segments(self):
        return self.segments if self.segments is not None else 10 * self.n_knots


@dataclass
class ExpOptions:
    steps: int = 100
    bound: float = 1e6


@dataclass
class LogOptions:
    bvp: BvpOptions = field(default_factory=BvpOptions)
    exp: ExpOptions = field(default_factory=ExpOptions)
    normal: bool = True
    shoot_refine: bool = True
    shoot_iters: int = 20
    shoot_tol: float = 1e-12


def _check_dims(curve, metric):
    if curve.dim != metric.dim:
        raise ConfigurationError(
            f"curve dimension {curve.dim} does not match metric dimension {metric.dim}"
        )


def _quadratic_speed(curve, metric, segments):
    if segments < 1:
        raise ConfigurationError("segments must be >= 1")
    _check_dims(curve, metric)
    t = np.linspace(0.0, 1.0, segments + 1)
    pts = curve(t)
    vel = curve.velocity(t)
    m = metric(pts)
    q = np.einsum("ni,nij,nj->n", vel, m, vel)
    bad = ~np.isfinite(q)
    if np.any(bad):
        t_bad = float(t[np.argmax(bad)])
        raise NumericalDomainError(f"non-finite metric evaluation at t={t_bad}", t=t_bad)
    return t, q


def _trapezoid(values, t):
    dt = np.diff(t)
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * dt))


def curve_length(curve, metric, segments=100):
    """Trapezoidal quadrature of ``sqrt(<c', M(c) c'>)`` over uniform segments."""
    t, q = _quadratic_speed(curve, metric, segments)
    return _trapezoid(np.sqrt(np.clip(q, 0.0, None)), t)


def curve_energy(curve, metric, segments=100):
    """Trapezoidal quadrature of ``0.5 <c', M(c) c'>``."""
    t, q = _quadratic_speed(curve, metric, segments)
    return _trapezoid(0.5 * q, t)


def curve_speed(curve, metric, segments=100):
    t, q = _quadratic_speed(curve, metric, segments)
    return t, np.sqrt(np.clip(q, 0.0, None))


def geodesic_ode_rhs(z, zdot, metric):
    """Acceleration of the geodesic through ``z`` with velocity ``zdot``.

    Assembles ``-0.5 M^-1 [2 (zdot^T kron I) dvecM zdot - dvecM^T (zdot kron zdot)]``.
    """
    z = np.asarray(z, dtype=float)
    zdot = np.asarray(zdot, dtype=float)
    d = metric.dim
    m = metric(z)
    dm = metric.derivative(z)  # (d, d, d): dM_ij/dz_k
    dvec = np.transpose(dm, (1, 0, 2)).reshape(d * d, d)
    term = 2.0 * np.kron(zdot[None, :], np.eye(d)) @ dvec @ zdot - dvec.T @ np.kron(zdot, zdot)
    try:
        acc = -0.5 * np.linalg.solve(m, term)
    except np.linalg.LinAlgError as exc:
        raise NumericalDomainError(f"singular metric at z={z.tolist()}") from exc
    if not np.all(np.isfinite(acc)):
        raise NumericalDomainError(f"non-finite geodesic acceleration at z={z.tolist()}")
    return acc


def _geodesic_rhs_batch(z, w, metric):
    m = metric(z)
    dm = metric.derivative(z)
    t1 = np.einsum("nj,nijk,nk->ni", w, dm, w)
    t2 = np.einsum("nijk,ni,nj->nk", dm, w, w)
    return -0.5 * np.linalg.solve(m, (2.0 * t1 - t2)[..., None])[..., 0]


class _EnergyProblem:
    """Discretised energy over interior knots, with gradient and a metric-weighted preconditioner."""

    def __init__(self, a, b, metric, n_knots, segments):
        self.a = a
        self.b = b
        self.metric = metric
        self.n_knots = n_knots
        self.t = np.linspace(0.0, 1.0, segments + 1)
        w = np.full(segments + 1, 1.0 / segments)
        w[0] *= 0.5
        w[-1] *= 0.5
        self.w = w
        self.phi, self.dphi = spline_basis(n_knots, self.t)

    def full_knots(self, interior):
        return np.vstack([self.a, interior, self.b])

    def energy(self, interior):
        x = self.full_knots(interior)
        c = self.phi @ x
        v = self.dphi @ x
        m = self.metric(c)
        e = 0.5 * np.sum(self.w * np.einsum("ni,nij,nj->n", v, m, v))
        return float(e), c, v, m

    def gradient(self, interior, c, v, m):
        dm = self.metric.derivative(c)
        wmv = self.w[:, None] * np.einsum("nij,nj->ni", m, v)
        quad = 0.5 * self.w[:, None] * np.einsum("ni,nijk,nj->nk", v, dm, v)
        g = self.dphi.T @ wmv + self.phi.T @ quad
        return g[1:-1]

    def preconditioner(self, m):
        dp = self.dphi[:, 1:-1]
        k, d = dp.shape[1], self.metric.dim
        h = np.einsum("q,qk,ql,qab->kalb", self.w, dp, dp, m)
        return h.reshape(k * d, k * d)


def _constant_speed_line(a, b, metric, n_knots, segments):
    """Knots on the chord, spaced at equal Riemannian arclength."""
    line = straight_line(a, b, 2)
    t, speed = curve_speed(line, metric, max(segments, 4 * n_knots))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t))])
    if cum[-1] <= 0.0 or not np.isfinite(cum[-1]):
        return straight_line(a, b, n_knots).knots
    s = np.interp(np.linspace(0.0, cum[-1], n_knots), cum, t)
    knots = (1.0 - s)[:, None] * a + s[:, None] * b
    knots[0], knots[-1] = a, b
    return knots


def _descend(problem, interior, opts):
    energy, c, v, m = problem.energy(interior)
    if not np.isfinite(energy):
        raise NumericalDomainError("non-finite energy at initialisation")
    shape = interior.shape
    residual = np.inf
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        if interior.size == 0:
            converged, residual = True, 0.0
            break
        g = problem.gradient(interior, c, v, m).ravel()
        h = problem.preconditioner(m)
        try:
            p = np.linalg.solve(h + 1e-14 * np.trace(h) / h.shape[0] * np.eye(h.shape[0]), g)
        except np.linalg.LinAlgError:
            p = g
        slope = float(g @ p)
        if slope <= 0.0:
            p, slope = g, float(g @ g)
        if slope <= 1e-300:
            converged, residual = True, 0.0
            break
        step = 1.0
        accepted = False
        for _ in range(opts.max_halvings):
            cand = interior - step * p.reshape(shape)
            e_new, c_new, v_new, m_new = problem.energy(cand)
            if np.isfinite(e_new) and e_new <= energy - opts.armijo_c * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            residual = slope / max(energy, 1e-300)
            converged = residual < opts.tol
            break
        residual = (energy - e_new) / max(energy, 1e-300)
        interior, energy, c, v, m = cand, e_new, c_new, v_new, m_new
        if residual < opts.tol:
            converged = True
            break
    return interior, energy, converged, it, residual


def solve_geodesic_bvp(a, b, metric, opts=None, init=None):
    """Minimise the discretised energy over interior spline knots, endpoints fixed.

    The search direction is the gradient preconditioned by the metric-weighted
    spline stiffness matrix; steps follow Armijo backtracking halving from 1.
    ``init`` optionally supplies starting knots (any count, resampled).
    """
    opts = opts or BvpOptions()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (metric.dim,) or b.shape != (metric.dim,):
        raise ConfigurationError("endpoint dimension does not match metric dimension")
    n_knots = max(int(opts.n_knots), 2)
    segments = opts.resolved_segments()
    if np.array_equal(a, b):
        curve = Curve(np.repeat(a[None, :], n_knots, axis=0))
        return GeodesicSolution(curve, 0.0, 0.0, True, 0, 0.0)

    problem = _EnergyProblem(a, b, metric, n_knots, segments)
    starts = [_constant_speed_line(a, b, metric, n_knots, segments)]
    if init is not None:
        starts.insert(0, resample_by_arclength(init, n_knots))
    elif opts.graph_init is not None:
        from .graph import graph_shortest_path, spline_through

        path = graph_shortest_path(opts.graph_init, a, b, metric)
        dense = spline_through(path)(np.linspace(0.0, 1.0, 20 * len(path)))
        starts.insert(0, resample_by_arclength(dense, n_knots))

    best = None
    for idx, knots in enumerate(starts):
        interior, energy, converged, iters, residual = _descend(problem, knots[1:-1].copy(), opts)
        curve = Curve(problem.full_knots(interior))
        length = curve_length(curve, metric, segments)
        sol = GeodesicSolution(curve, length, energy, converged, iters, residual)
        if best is None or sol.length < best.length:
            best = sol
        # a seeded start that already beats the chord needs no second run
        if idx == 0 and len(starts) > 1:
            if sol.length <= curve_length(straight_line(a, b, 2), metric, segments):
                break
    return best


def _rk4(z, w, metric, opts):
    h = 1.0 / opts.steps
    z = z.copy()
    w = w.copy()

    def f(z_, w_):
        return w_, _geodesic_rhs_batch(z_[None], w_[None], metric)[0]

    for _ in range(opts.steps):
        k1z, k1w = f(z, w)
        k2z, k2w = f(z + 0.5 * h * k1z, w + 0.5 * h * k1w)
        k3z, k3w = f(z + 0.5 * h * k2z, w + 0.5 * h * k2w)
        k4z, k4w = f(z + h * k3z, w + h * k3w)
        z = z + h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
        w = w + h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(w))):
            raise NumericalDomainError("non-finite state while integrating the geodesic")
        if np.linalg.norm(z) > opts.bound:
            raise DomainEscapeError(f"geodesic left the ball of radius {opts.bound}")
    return z, w


def exp_map(x, v, metric, opts=None):
    """Endpoint at t=1 of the geodesic from ``x`` with initial velocity ``v`` (fixed-step RK4)."""
    opts = opts or ExpOptions()
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape or x.shape != (metric.dim,):
        raise ConfigurationError("point, velocity and metric dimensions differ")
    if not np.any(v):
        return x.copy()
    z, _ = _rk4(x, v, metric, opts)
    return z


def _shoot(x, y, v0, metric, opts):
    v = v0.copy()
    d = x.size
    for _ in range(opts.shoot_iters):
        try:
            r = exp_map(x, v, metric, opts.exp) - y
        except NumericalDomainError:
            return None
        if np.linalg.norm(r) <= opts.shoot_tol * max(1.0, np.linalg.norm(y)):
            return v
        jac = np.empty((d, d))
        scale = max(np.linalg.norm(v), 1e-12)
        for k in range(d):
            h = 1e-6 * scale
            dv = np.zeros(d)
            dv[k] = h
            jac[:, k] = (exp_map(x, v + dv, metric, opts.exp) - exp_map(x, v - dv, metric, opts.exp)) / (2 * h)
        try:
            v = v - np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            return None
    r = exp_map(x, v, metric, opts.exp) - y
    return v if np.linalg.norm(r) <= 1e-8 * max(1.0, np.linalg.norm(y - x)) else None


def log_map(x, y, metric, opts=None):
    """Initial velocity of the geodesic from ``x`` to ``y``.

    The velocity comes from the boundary-value solution and, when
    ``opts.shoot_refine`` is set, is polished by Newton shooting on
    ``exp_map``. With ``opts.normal`` the vector is rescaled to have
    Euclidean norm equal to the geodesic length (normal coordinates).
    """
    opts = opts or LogOptions()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        return TangentVector(x, np.zeros_like(x), True)
    sol = solve_geodesic_bvp(x, y, metric, opts.bvp)
    v = sol.curve.velocity(0.0)
    converged = sol.converged
    if opts.shoot_refine:
        refined = _shoot(x, y, v, metric, opts)
        if refined is not None:
            v = refined
            converged = True
    if opts.normal:
        nv = np.linalg.norm(v)
        if nv > 0:
            v = v * (sol.length / nv)
    return TangentVector(x, v, converged)
