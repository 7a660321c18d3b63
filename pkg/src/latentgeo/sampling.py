"""The metric-magnitude latent density ``q(z) ~ 1 / (1 + sqrt det M(z))`` on a ball, and samplers."""

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, NumericalDomainError
from .metric import _as_batch, sqrt_det


def make_rng(seed):
    """Counter-based (Philox) generator; the same seed always yields the same stream."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class LatentDensity:
    metric: object
    radius: float
    center: np.ndarray = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError("ball radius must be positive")
        self.center = np.zeros(self.metric.dim) if self.center is None else np.asarray(self.center, dtype=float)
        if self.center.shape != (self.metric.dim,):
            raise ConfigurationError("ball center dimension does not match the metric")

    @property
    def dim(self):
        return self.metric.dim

    def inside(self, z):
        z, _ = _as_batch(z, self.dim)
        return np.linalg.norm(z - self.center, axis=1) <= self.radius


def default_radius(codes, center=None, margin=0.1):
    """Radius of the ball around ``center`` covering every code, enlarged by ``margin``."""
    codes = np.atleast_2d(np.asarray(codes, dtype=float))
    center = np.zeros(codes.shape[1]) if center is None else np.asarray(center, dtype=float)
    return float((1.0 + margin) * np.max(np.linalg.norm(codes - center, axis=1)))


def q_density_unnorm(density, z):
    """``(1 + sqrt det M(z))^-1`` inside the ball and 0 outside."""
    single = np.ndim(z) == 1
    z, _ = _as_batch(z, density.dim)
    out = np.zeros(len(z))
    inside = density.inside(z)
    if np.any(inside):
        sd = sqrt_det(density.metric(z[inside]))
        if not np.all(np.isfinite(sd)):
            raise NumericalDomainError("non-finite metric determinant")
        out[inside] = 1.0 / (1.0 + sd)
    return out[0] if single else out


def uniform_ball(rng, n, dim, radius, center=None):
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    out = g * r[:, None]
    return out if center is None else out + center


@dataclass
class McmcOptions:
    step: float = None  # proposal stdev; defaults to 0.5 * radius / sqrt(d)
    burn: int = 1000
    thin: int = 5
    chains: int = 4
    seed: int = 0
    max_start_attempts: int = 100


@dataclass
class SampleResult:
    samples: np.ndarray
    acceptance_rate: float
    seed: int
    method: str
    options: dict

    def diagnostics(self):
        return {
            "method": self.method,
            "seed": int(self.seed),
            "acceptance_rate": float(self.acceptance_rate),
            "n": int(len(self.samples)),
            "options": self.options,
        }

    def write_csv(self, path):
        write_samples_csv(path, self.samples)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump({"samples": self.samples.tolist(), "dim": int(self.samples.shape[1])}, fh)

    def write_diagnostics(self, path):
        with open(path, "w") as fh:
            json.dump(self.diagnostics(), fh, indent=2)


def write_samples_csv(path, samples):
    samples = np.atleast_2d(samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z_{i + 1}" for i in range(samples.shape[1])])
        for row in samples:
            writer.writerow([repr(float(v)) for v in row])


def _initial_states(density, rng, chains, attempts):
    states = np.empty((chains, density.dim))
    for c in range(chains):
        for _ in range(attempts):
            z = uniform_ball(rng, 1, density.dim, density.radius, density.center)[0]
            if q_density_unnorm(density, z) > 0:
                states[c] = z
                break
        else:
            raise NumericalDomainError(f"no start with positive density after {attempts} draws")
    return states


def mcmc_sample(density, n, opts=None):
    """Random-walk Metropolis with Gaussian proposals, ``opts.chains`` chains advanced in lockstep."""
    opts = opts or McmcOptions()
    if n < 1:
        raise ConfigurationError("number of samples must be >= 1")
    if opts.chains < 1 or opts.thin < 1 or opts.burn < 0:
        raise ConfigurationError("chains and thin must be >= 1, burn >= 0")
    step = opts.step if opts.step is not None else 0.5 * density.radius / np.sqrt(density.dim)
    if not step > 0:
        raise ConfigurationError("proposal step must be positive")
    rng = make_rng(opts.seed)
    z = _initial_states(density, rng, opts.chains, opts.max_start_attempts)
    q = q_density_unnorm(density, z)
    per_chain = -(-n // opts.chains)
    total = opts.burn + per_chain * opts.thin
    kept = np.empty((per_chain, opts.chains, density.dim))
    accepted = 0
    proposed = 0
    for it in range(total):
        prop = z + step * rng.standard_normal(z.shape)
        q_prop = q_density_unnorm(density, prop)
        u = rng.random(opts.chains)
        take = u * q < q_prop
        z[take] = prop[take]
        q[take] = q_prop[take]
        if it >= opts.burn:
            accepted += int(take.sum())
            proposed += opts.chains
            j = it - opts.burn
            if (j + 1) % opts.thin == 0:
                kept[j // opts.thin] = z
    # interleave chains so truncation keeps them balanced
    samples = kept.reshape(-1, density.dim)[:n]
    options = asdict(opts)
    options["step"] = float(step)
    rate = accepted / proposed if proposed else 0.0
    return SampleResult(samples, rate, opts.seed, "mcmc", options)


def rejection_sample(density, n, seed=0, batch=None):
    """Exact samples: uniform proposals in the ball accepted with probability ``q(z) / 1``."""
    if n < 1:
        raise ConfigurationError("number of samples must be >= 1")
    rng = make_rng(seed)
    batch = batch or max(2 * n, 1024)
    out = []
    got = 0
    proposed = 0
    while got < n:
        z = uniform_ball(rng, batch, density.dim, density.radius, density.center)
        keep = rng.random(batch) < q_density_unnorm(density, z)
        proposed += batch
        out.append(z[keep])
        got += int(keep.sum())
    samples = np.vstack(out)
    # acceptance counted over every proposal drawn
    rate = got / proposed
    return SampleResult(samples[:n], rate, seed, "rejection", {"seed": int(seed), "batch": int(batch)})
