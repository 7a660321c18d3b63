import numpy as np
import pytest
from conftest import warped_metric
from hypothesis import given, settings
from hypothesis import strategies as st

from latentgeo.curves import Curve, Reparametrized, straight_line
from latentgeo.errors import ConfigurationError, DomainEscapeError, NumericalDomainError
from latentgeo.generator import Paraboloid, PullbackMetric
from latentgeo.geometry import (
    BvpOptions,
    ExpOptions,
    LogOptions,
    TangentVector,
    curve_energy,
    curve_length,
    curve_speed,
    exp_map,
    geodesic_ode_rhs,
    log_map,
    solve_geodesic_bvp,
)
from latentgeo.metric import ConstantMetric, FunctionMetric, identity_metric, metric_derivative
from oracles import grid_oracle


# --------------------------------------------------------------------------- length and energy


def test_length_of_segment_is_euclidean_norm():
    line = straight_line([0, 0], [3, 4])
    assert abs(curve_length(line, identity_metric(2), 100) - 5.0) < 1e-9


def test_constant_curve_has_zero_length_and_energy():
    c = Curve([[1.0, 2.0], [1.0, 2.0]])
    m = warped_metric()
    assert curve_length(c, m, 50) == 0.0
    assert curve_energy(c, m, 50) == 0.0


def test_constant_metric_scales_length():
    line = straight_line([0, 0], [1, 0])
    assert abs(curve_length(line, ConstantMetric(np.diag([4.0, 1.0])), 100) - 2.0) < 1e-9


def test_energy_of_segment():
    line = straight_line([0, 0], [3, 4])
    assert abs(curve_energy(line, identity_metric(2), 100) - 12.5) < 1e-9


def test_energy_bounds_squared_length_on_random_splines():
    rng = np.random.default_rng(3)
    m = identity_metric(2)
    for _ in range(50):
        c = Curve(rng.normal(size=(3, 2)))
        length = curve_length(c, m, 200)
        assert curve_energy(c, m, 200) >= 0.5 * length**2 - 1e-12


def test_length_rejects_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        curve_length(straight_line([0, 0], [1, 1]), identity_metric(3))
    with pytest.raises(ConfigurationError):
        curve_length(straight_line([0, 0], [1, 1]), identity_metric(2), segments=0)


def test_non_finite_metric_reports_parameter():
    def fn(z):
        m = np.broadcast_to(np.eye(2), (len(z), 2, 2)).copy()
        m[z[:, 0] > 0.5] = np.nan
        return m

    with pytest.raises(NumericalDomainError) as info:
        curve_length(straight_line([0, 0], [1, 0]), FunctionMetric(2, fn), 10)
    assert info.value.t == pytest.approx(0.6)


# --------------------------------------------------------------------------- metric derivative


def test_metric_derivative_of_warped_metric_fd_path():
    m = FunctionMetric(2, warped_metric()._fn)  # no analytic derivative
    assert m.derivative_mode == "central-finite-difference"
    dvec = metric_derivative(m, np.array([2.0, 0.0]))
    assert dvec.shape == (4, 2)
    # vec index of M_22 is 3
    assert abs(dvec[3, 0] - 4.0) < 1e-6
    assert np.abs(np.delete(dvec.ravel(), 6)).max() < 1e-6


def test_constant_metric_derivative_is_zero():
    m = ConstantMetric([[2.0, 0.5], [0.5, 1.0]])
    assert np.all(metric_derivative(m, np.array([0.3, -1.0])) == 0.0)


def test_pullback_derivative_analytic_matches_fd(paraboloid_metric):
    rng = np.random.default_rng(0)
    z = rng.uniform(-3, 3, size=(10, 2))
    fd = PullbackMetric(Paraboloid(2, 0.3), identity_metric(3))
    fd._derivative = None
    assert paraboloid_metric.derivative_mode == "analytic"
    assert np.abs(paraboloid_metric.derivative(z) - fd.derivative(z)).max() < 1e-4


# --------------------------------------------------------------------------- geodesic equation


def test_rhs_vanishes_for_constant_metric():
    m = ConstantMetric([[3.0, 1.0], [1.0, 2.0]])
    assert np.all(geodesic_ode_rhs(np.array([0.4, 2.0]), np.array([1.0, -3.0]), m) == 0.0)


def _euler_lagrange_acceleration(metric, z, zdot, h=1e-5):
    """Solve M zddot = dL/dz - [d(M zdot)/dz] zdot with L = 0.5 zdot^T M zdot, all by differences."""
    d = len(z)

    def lag(p):
        return 0.5 * zdot @ metric(p) @ zdot

    dl = np.zeros(d)
    dmz = np.zeros((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        dl[k] = (lag(z + e) - lag(z - e)) / (2 * h)
        dmz[:, k] = (metric(z + e) @ zdot - metric(z - e) @ zdot) / (2 * h)
    return np.linalg.solve(metric(z), dl - dmz @ zdot)


def test_rhs_matches_euler_lagrange_oracle():
    m = warped_metric()
    z = np.array([1.0, 0.0])
    zdot = np.array([1.0, 1.0])
    oracle = _euler_lagrange_acceleration(m, z, zdot)
    assert np.abs(geodesic_ode_rhs(z, zdot, m) - oracle).max() < 1e-4


def test_rhs_matches_graph_surface_formula():
    # g(z) = [z, |z|^2]: geodesics satisfy zddot = -4 z |zdot|^2 / (1 + 4 |z|^2)
    metric = PullbackMetric(Paraboloid(2, 1.0), identity_metric(3))
    rng = np.random.default_rng(1)
    for _ in range(10):
        z, zdot = rng.normal(size=2), rng.normal(size=2)
        expected = -4.0 * z * (zdot @ zdot) / (1.0 + 4.0 * z @ z)
        assert np.abs(geodesic_ode_rhs(z, zdot, metric) - expected).max() < 1e-8


def test_rhs_singular_metric_raises():
    m = FunctionMetric(2, lambda z: np.zeros((len(z), 2, 2)))
    with pytest.raises(NumericalDomainError):
        geodesic_ode_rhs(np.zeros(2), np.ones(2), m)


# --------------------------------------------------------------------------- boundary value problem


def test_bvp_flat_metric_gives_chord():
    a, b = np.array([0.0, 0.0]), np.array([1.0, 2.0])
    sol = solve_geodesic_bvp(a, b, identity_metric(2))
    u = (b - a) / np.linalg.norm(b - a)
    rel = sol.curve.knots - a
    off_chord = rel - np.outer(rel @ u, u)
    assert np.abs(off_chord).max() < 1e-6
    assert np.all(np.diff(rel @ u) > 0)
    assert sol.converged


def test_bvp_degenerate_endpoints():
    a = np.array([0.3, -0.2])
    sol = solve_geodesic_bvp(a, a, warped_metric())
    assert sol.length == 0.0 and sol.converged and sol.iterations == 0
    assert np.all(sol.curve.knots == a)


def test_bvp_paraboloid_againstgrid_oracle(paraboloid_metric):
    a, b = np.array([-2.0, 0.0]), np.array([2.0, 0.0])
    sol = solve_geodesic_bvp(a, b, paraboloid_metric)
    oracle = grid_oracle(paraboloid_metric, a, b, lo=-3.0, hi=3.0, n=40)
    assert sol.length <= 1.02 * oracle
    assert sol.length <= curve_length(straight_line(a, b), paraboloid_metric, 160) + 1e-9


def test_solution_invariants(paraboloid_metric):
    rng = np.random.default_rng(5)
    for _ in range(5):
        a, b = rng.uniform(-3, 3, size=(2, 2))
        opts = BvpOptions()
        sol = solve_geodesic_bvp(a, b, paraboloid_metric, opts)
        assert sol.converged
        seg = opts.resolved_segments()
        assert abs(sol.length - curve_length(sol.curve, paraboloid_metric, seg)) <= 1e-10 * sol.length
        assert sol.energy >= 0.5 * sol.length**2 - 1e-6 * sol.energy
        assert sol.length <= curve_length(straight_line(a, b), paraboloid_metric, seg) + 1e-9
        _, speed = curve_speed(sol.curve, paraboloid_metric, seg)
        assert speed.std() / speed.mean() < 5e-2
        assert np.array_equal(sol.curve.start, a) and np.array_equal(sol.curve.end, b)


def test_bvp_nonconvergence_is_flagged_not_raised(paraboloid_metric):
    sol = solve_geodesic_bvp([-2.0, -2.0], [2.5, 1.0], paraboloid_metric, BvpOptions(max_iters=1, tol=1e-15))
    assert not sol.converged and sol.iterations == 1


def test_bvp_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        solve_geodesic_bvp([0, 0], [1, 1], identity_metric(3))


def test_bvp_custom_init_is_used(paraboloid_metric):
    a, b = np.array([-2.0, 0.0]), np.array([2.0, 0.0])
    detour = np.array([[-2.0, 0.0], [0.0, 2.5], [2.0, 0.0]])
    sol = solve_geodesic_bvp(a, b, paraboloid_metric, init=detour)
    ref = solve_geodesic_bvp(a, b, paraboloid_metric)
    assert sol.length <= ref.length * (1 + 1e-6)


# --------------------------------------------------------------------------- exp and log maps


def test_exp_flat_is_translation():
    x, v = np.array([0.5, -1.0, 2.0]), np.array([1.0, 2.0, -0.5])
    assert np.allclose(exp_map(x, v, identity_metric(3)), x + v, rtol=0, atol=1e-12)


def test_exp_zero_velocity():
    x = np.array([1.0, 2.0])
    assert np.array_equal(exp_map(x, np.zeros(2), warped_metric()), x)


def test_exp_accepts_tangent_vector(paraboloid_metric):
    x = np.array([0.1, 0.2])
    tv = TangentVector(x, [0.05, -0.02])
    assert np.array_equal(exp_map(x, tv, paraboloid_metric), exp_map(x, tv.components, paraboloid_metric))


def test_exp_domain_escape():
    with pytest.raises(DomainEscapeError):
        exp_map(np.array([1.0, 0.0]), np.array([50.0, 0.0]), identity_metric(2), ExpOptions(steps=50, bound=10.0))


def test_domain_escape_is_numerical_error():
    assert issubclass(DomainEscapeError, NumericalDomainError)


def test_log_flat():
    x, y = np.array([0.0, 1.0]), np.array([2.0, -1.0])
    v = log_map(x, y, identity_metric(2))
    assert np.allclose(v.components, y - x, atol=1e-6)
    assert np.array_equal(v.base, x)


def test_log_same_point_is_zero():
    x = np.array([0.4, 0.4])
    v = log_map(x, x, warped_metric())
    assert np.all(v.components == 0.0) and v.converged


def test_log_constant_metric_normal_coordinates():
    v = log_map(np.zeros(2), np.array([1.0, 0.0]), ConstantMetric(np.diag([4.0, 1.0])))
    assert abs(np.linalg.norm(v.components) - 2.0) < 1e-6
    assert v.components[0] > 0 and abs(v.components[1]) < 1e-6


def test_exp_log_duality_paraboloid(paraboloid_metric):
    rng = np.random.default_rng(11)
    opts = LogOptions(normal=False)
    for _ in range(5):
        x = rng.uniform(-2, 2, size=2)
        v = rng.normal(size=2)
        v *= rng.uniform(0.01, 0.1) / np.linalg.norm(v)
        y = exp_map(x, v, paraboloid_metric)
        back = log_map(x, y, paraboloid_metric, opts).components
        assert np.linalg.norm(back - v) <= 1e-3 * np.linalg.norm(v)


def test_exp_endpoint_lies_on_bvp_geodesic(paraboloid_metric):
    x, v = np.array([-1.0, 0.5]), np.array([1.2, 0.4])
    y = exp_map(x, v, paraboloid_metric, ExpOptions(steps=400))
    sol = solve_geodesic_bvp(x, y, paraboloid_metric, BvpOptions(n_knots=24))
    # the shooting trajectory has the BVP length to quadrature accuracy
    speed = np.sqrt(v @ paraboloid_metric(x) @ v)
    assert sol.length == pytest.approx(speed, rel=1e-3)


# --------------------------------------------------------------------------- properties


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), wiggle=st.floats(-0.9, 0.9), rate=st.floats(-3.0, 3.0))
def test_length_is_invariant_under_retiming(seed, wiggle, rate):
    rng = np.random.default_rng(seed)
    curve = Curve(rng.normal(size=(4, 2)))
    metric = warped_metric()
    base = curve_length(curve, metric, 1000)
    sine = Reparametrized(
        curve,
        lambda t: t + wiggle * np.sin(2 * np.pi * t) / (2 * np.pi),
        lambda t: 1 + wiggle * np.cos(2 * np.pi * t),
    )
    assert abs(curve_length(sine, metric, 1000) - base) <= 1e-4 * base
    if abs(rate) > 1e-3:
        expo = Reparametrized(
            curve,
            lambda t: np.expm1(rate * t) / np.expm1(rate),
            lambda t: rate * np.exp(rate * t) / np.expm1(rate),
        )
        assert abs(curve_length(expo, metric, 1000) - base) <= 1e-4 * base
