"""Acceptance criteria 1-12, one test per criterion.

Each test records a single ``PASS``/``FAIL`` line that is printed immediately
and repeated in the terminal summary.
"""

import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, warped_metric
from oracles import SIX_LABELS, SIX_POINTS, floyd_warshall, grid_oracle, lda_oracle
from scipy import stats
from scipy.spatial import cKDTree

from latentgeo.ambient import (
    SupportFunction,
    SupportMetric,
    SupportMetricParams,
    cost_rbf,
    fit_rbf_support,
    local_lda_statistics,
)
from latentgeo.curves import Curve, Reparametrized, straight_line
from latentgeo.data import make_synthetic_sine
from latentgeo.generator import (
    FeedforwardNet,
    Generator,
    Paraboloid,
    PullbackMetric,
    expected_pullback_metric,
    mc_expected_metric,
    pullback_metric,
)
from latentgeo.geometry import LogOptions, curve_length, exp_map, log_map, solve_geodesic_bvp
from latentgeo.graph import all_pairs_distances, build_latent_graph, graph_shortest_path, reference_prototypes, spline_through
from latentgeo.metric import ConstantMetric, identity_metric
from latentgeo.sampling import LatentDensity, McmcOptions, default_radius, make_rng, mcmc_sample, uniform_ball
from latentgeo.training import (
    Architecture,
    TrainConfig,
    attach_precision,
    fit_precision_rbf,
    residual_variances,
    train_autoencoder,
)


def report(number, ok, detail):
    line = f"acceptance {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def central_jacobian(fn, z, h=1e-5):
    cols = []
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        cols.append((fn(z + e) - fn(z - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def parabola():
    return PullbackMetric(Paraboloid(2, 0.3), identity_metric(3))


def test_01_flat_space_geodesic():
    rng = np.random.default_rng(101)
    worst = 0.0
    start = time.perf_counter()
    for i in range(50):
        d = 2 + i % 4
        a, b = rng.uniform(-3, 3, size=(2, d))
        knots = solve_geodesic_bvp(a, b, identity_metric(d)).curve.knots
        u = (b - a) / np.linalg.norm(b - a)
        rel = knots - a
        worst = max(worst, np.abs(rel - np.outer(rel @ u, u)).max())
    elapsed = time.perf_counter() - start
    report(1, worst < 1e-6 and elapsed < 5.0, f"max chord deviation {worst:.2e}, {elapsed:.2f} s")


def test_02_linear_pullback_exactness():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 5))
        a = rng.normal(size=(d + int(rng.integers(0, 4)), d))
        # unit columns for U and squared column norms for lambda give U diag(sqrt(lambda)) = a
        gen = Generator(U=a / np.linalg.norm(a, axis=0), eigenvalues=np.linalg.norm(a, axis=0) ** 2,
                        offset=rng.normal(size=a.shape[0]))
        m = pullback_metric(gen, identity_metric(a.shape[0]), rng.normal(size=d))
        worst = max(worst, np.linalg.norm(m - a.T @ a))
    report(2, worst < 1e-12, f"max Frobenius error {worst:.2e}")


def test_03_jacobian_correctness():
    rng = np.random.default_rng(103)
    worst = 0.0
    for i in range(100):
        d, big_d = int(rng.integers(1, 5)), int(rng.integers(2, 7))
        sizes = [d] + [int(s) for s in rng.integers(2, 9, size=rng.integers(1, 4))] + [big_d]
        net = FeedforwardNet.random(sizes, act=("tanh", "softplus")[i % 2], rng=rng)
        z = rng.normal(size=d)
        fd = central_jacobian(lambda u: net.forward(u)[0], z)
        jac = net.jacobian(z)[0]
        worst = max(worst, np.linalg.norm(jac - fd) / np.linalg.norm(fd))
    report(3, worst < 1e-5, f"max relative error {worst:.2e}")


def test_04_oracle_equivalence():
    metric = parabola()
    rng = np.random.default_rng(104)
    ratios, excess, elapsed = [], [], 0.0
    for _ in range(10):
        a, b = rng.uniform(-2.5, 2.5, size=(2, 2))
        start = time.perf_counter()
        sol = solve_geodesic_bvp(a, b, metric)
        elapsed += time.perf_counter() - start
        ratios.append(sol.length / grid_oracle(metric, a, b, lo=-3.0, hi=3.0, n=40))
        excess.append(sol.length - curve_length(straight_line(a, b), metric, 160))
    ok = max(ratios) <= 1.02 and max(excess) <= 1e-9 and elapsed < 60.0
    report(4, ok, f"BVP/grid ratio in [{min(ratios):.3f}, {max(ratios):.3f}], "
                  f"max excess over chord {max(excess):.1e}, {elapsed:.1f} s")


def sine_generator(noise):
    data = make_synthetic_sine(1000, noise=noise, seed=0)
    ae = train_autoencoder(data, Architecture(decoder_hidden=[16], encoder_hidden=[32]),
                           TrainConfig(epochs=1000, seed=0))
    codes = ae.encode(data.points)
    resid = data.points - ae.generator.forward(codes)
    prec = fit_precision_rbf(codes, residual_variances(codes, resid), 30)
    # cost ambient metric on three data points and their ten nearest neighbours
    _, nn = cKDTree(data.points).query(data.points[:3], k=10)
    ambient = SupportMetric(cost_rbf(data.points[nn.ravel()], 10.0, 0.5), SupportMetricParams(1.0, 1.0, "cost"))
    return attach_precision(ae.generator, prec), ambient, codes


def test_05_relaxation_validation():
    worst_gap, worst_rho = 0.0, 1.0
    for noise in (0.1, 0.2):
        gen, ambient, codes = sine_generator(noise)
        tree = cKDTree(codes)
        width = np.median(1.0 / np.sqrt(gen.precision.gamma))
        # rays leaving the code set, 20 points each, out to one kernel width
        for angle in np.arange(4) * np.pi / 2:
            u = np.array([np.cos(angle), np.sin(angle)])
            z = codes[np.argmax(codes @ u)] + np.linspace(0.0, width, 20)[:, None] * u
            gaps = []
            for zi in z:
                exact = expected_pullback_metric(gen, ambient, zi)
                mc = mc_expected_metric(gen, ambient, zi, n_draws=1000, rng=2, frozen=True)
                gaps.append(np.linalg.norm(mc - exact) / np.linalg.norm(exact))
            worst_gap = max(worst_gap, max(gaps))
            worst_rho = min(worst_rho, stats.spearmanr(tree.query(z)[0], gaps).statistic)
    report(5, worst_gap < 0.1 and worst_rho > 0.7,
           f"max relative gap {worst_gap:.3f}, min rank correlation with distance {worst_rho:.2f}")


def test_06_metric_bounds():
    rng = np.random.default_rng(106)
    violations = 0
    for alpha, eps in ((1e3, 1e-2), (1.0, 1e-3), (10.0, 0.5)):
        h = SupportFunction("positive-rbf", rng.uniform(-2, 2, (30, 3)), rng.uniform(0.1, 3.0, 30),
                            bandwidths=rng.uniform(0.5, 20.0, 30))
        x = rng.uniform(-4, 4, size=(100_000, 3))
        x[:50_000] = h.centers[rng.integers(0, 30, 50_000)] + 0.05 * rng.normal(size=(50_000, 3))
        m = SupportMetric(h, SupportMetricParams(alpha, eps))(x)
        diag = np.diagonal(m, axis1=1, axis2=2)
        violations += int(np.sum((diag < 1.0 / (alpha + eps)) | (diag > 1.0 / eps)))
    report(6, violations == 0, f"{violations} violations on 3 x 1e5 queries")


def test_07_cost_avoidance():
    rng = np.random.default_rng(107)
    t = np.linspace(0, 1, 1001)
    avoided, peaks = 0, []
    for _ in range(10):
        a = rng.uniform(-3, 3, 2)
        angle = rng.uniform(0, 2 * np.pi)
        u, n = np.array([np.cos(angle), np.sin(angle)]), np.array([-np.sin(angle), np.cos(angle)])
        b = a + rng.uniform(3, 5) * u
        h = cost_rbf([(a + b) / 2 + rng.uniform(-0.2, 0.2) * n], 10.0, 0.5)
        sol = solve_geodesic_bvp(a, b, SupportMetric(h, SupportMetricParams(10.0, 1.0, "cost")))
        on_path, on_chord = h(sol.curve(t)).max(), h(straight_line(a, b)(t)).max()
        avoided += on_path < on_chord
        peaks.append(on_path / on_chord)
    report(7, avoided == 10, f"{avoided}/10 configurations avoid the disc, worst peak ratio {max(peaks):.3f}")


def test_08_sampling_near_data(trained_paraboloid, paraboloid_data):
    gen = trained_paraboloid.generator
    codes = trained_paraboloid.encode(paraboloid_data.points)
    radius = default_radius(codes)
    ambient = SupportMetric(fit_rbf_support(paraboloid_data.points, 20, kappa=1.0), SupportMetricParams(1e3, 1e-2))
    dens = LatentDensity(PullbackMetric(gen, ambient), radius)
    q_samples = mcmc_sample(dens, 10_000, McmcOptions(seed=8)).samples
    prior = uniform_ball(make_rng(9), 10_000, 2, radius)
    tree = cKDTree(paraboloid_data.points)
    near = lambda z: np.mean(tree.query(gen.forward(z))[0] < 0.3)
    fq, fp = near(q_samples), near(prior)
    report(8, fq >= 1.5 * fp, f"near-data fraction q(z) {fq:.3f} vs prior {fp:.3f} (ratio {fq / fp:.2f})")


def test_09_reparametrization_invariance():
    rng = np.random.default_rng(109)
    spd = rng.normal(size=(2, 2))
    metrics = [warped_metric(), parabola(), ConstantMetric(spd @ spd.T + 0.1 * np.eye(2)),
               SupportMetric(cost_rbf([[0.3, -0.2]], 5.0, 0.7), SupportMetricParams(2.0, 0.5, "cost"))]
    worst = 0.0
    for i in range(20):
        curve = Curve(rng.uniform(-2, 2, size=(int(rng.integers(2, 7)), 2)))
        metric = metrics[i % 4]
        base = curve_length(curve, metric, 1000)
        wiggle, rate = rng.uniform(-0.9, 0.9), rng.choice([-1, 1]) * rng.uniform(0.1, 3.0)
        timings = [
            Reparametrized(curve, lambda t: t + wiggle * np.sin(2 * np.pi * t) / (2 * np.pi),
                           lambda t: 1 + wiggle * np.cos(2 * np.pi * t)),
            Reparametrized(curve, lambda t: np.expm1(rate * t) / np.expm1(rate),
                           lambda t: rate * np.exp(rate * t) / np.expm1(rate)),
        ]
        for retimed in timings:
            worst = max(worst, abs(curve_length(retimed, metric, 1000) - base) / base)
    report(9, worst < 1e-4, f"max relative length change {worst:.2e}")


def test_10_exp_log_duality():
    rng = np.random.default_rng(110)
    metrics = [warped_metric(), parabola()]
    opts = LogOptions(normal=False)
    worst = 0.0
    for i in range(50):
        metric = metrics[i % 2]
        x = rng.uniform(-2, 2, size=2)
        v = rng.normal(size=2)
        v *= rng.uniform(0.01, 0.1) / np.linalg.norm(v)
        back = log_map(x, exp_map(x, v, metric), metric, opts).components
        worst = max(worst, np.linalg.norm(back - v) / np.linalg.norm(v))
    report(10, worst <= 1e-3, f"max ||Log(Exp(v)) - v|| / ||v|| = {worst:.2e}")


def test_11_local_lda_brute_force():
    worst = 0.0
    eps = 1e-3
    for base in SIX_POINTS:
        for k in (4, 6):
            got = local_lda_statistics(SIX_POINTS, SIX_LABELS, base, np.eye(2), k, eps)
            within, between, means, priors, metric = lda_oracle(SIX_POINTS, SIX_LABELS, base, np.eye(2), k, eps)
            errs = [np.abs(got.within - within).max(), np.abs(got.between - between).max(),
                    np.abs(got.metric - metric).max() / np.abs(metric).max()]
            errs += [np.abs(got.class_means[c] - means[c]).max() for c in means]
            errs += [abs(got.priors[c] - priors[c]) for c in priors]
            worst = max(worst, max(errs))
    report(11, worst < 1e-12, f"max deviation from loop oracle {worst:.2e}")


def test_12_graph_pipeline():
    metric = parabola()
    graph = build_latent_graph(reference_prototypes(2, seed=0), 7, metric)
    dist = all_pairs_distances(graph)
    oracle = floyd_warshall(graph.weight_matrix())
    sub = np.random.default_rng(112).choice(len(dist), 20, replace=False)
    dist_err = np.abs(dist[np.ix_(sub, sub)] - oracle[np.ix_(sub, sub)]).max()
    pts = graph_shortest_path(graph, np.array([-2.0, 0.5]), np.array([1.5, -2.0]), metric)
    curve = spline_through(pts)
    knot_err = np.abs(curve(curve.times) - pts).max()
    report(12, dist_err <= 1e-12 and knot_err <= 1e-12,
           f"Dijkstra vs Floyd-Warshall {dist_err:.1e}, spline knot error {knot_err:.1e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
