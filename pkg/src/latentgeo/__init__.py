"""Riemannian geometry of generative-model latent spaces.

Metrics are pulled back through smooth generators from data-driven ambient
metrics. Geodesic solvers and latent sampling are built on top of them.
"""

from .ambient import (
    CombinedMetric,
    ConvexCombinationMetric,
    LocalDiagCovMetric,
    ProjectedMetric,
    SupportFunction,
    SupportMetric,
    SupportMetricParams,
    cost_rbf,
    fit_gmm_support,
    fit_local_lda,
    fit_rbf_support,
    metric_from_json,
    metric_to_json,
)
from .curves import Curve, straight_line
from .data import Dataset, make_synthetic_paraboloid, make_synthetic_sine, read_dataset_csv
from .errors import (
    ConfigurationError,
    DomainEscapeError,
    LatentGeoError,
    NumericalDomainError,
    SchemaError,
    TrainingError,
    UnreachableError,
)
from .generator import (
    ExpectedPullbackMetric,
    FeedforwardNet,
    Generator,
    Paraboloid,
    PositiveRbf,
    PullbackMetric,
    expected_pullback_metric,
    finite_diff_jacobian,
    fit_pca,
    pullback_metric,
    stochastic_pullback_metric,
)
from .geometry import (
    BvpOptions,
    ExpOptions,
    LogOptions,
    curve_energy,
    curve_length,
    exp_map,
    geodesic_ode_rhs,
    log_map,
    solve_geodesic_bvp,
)
from .graph import LatentGraph, build_latent_graph, graph_shortest_path, spline_through
from .metric import ConstantMetric, FunctionMetric, MetricField, identity_metric, sqrt_det
from .modelio import load_model, save_model
from .sampling import LatentDensity, McmcOptions, mcmc_sample, q_density_unnorm, rejection_sample
from .training import TrainConfig, fit_precision_rbf, train_autoencoder

__version__ = "0.1.0"
