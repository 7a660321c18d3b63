"""Datasets: synthetic generators and CSV input/output."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SchemaError

PROVENANCES = ("synthetic-paraboloid", "synthetic-sine", "file")


@dataclass
class Dataset:
    points: np.ndarray
    labels: np.ndarray = None
    provenance: str = "file"
    latent: np.ndarray = None  # ground-truth latent codes for synthetic data

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.all(np.isfinite(self.points)):
            raise ConfigurationError("dataset points must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(int)
            if self.labels.shape != (len(self.points),):
                raise ConfigurationError("one label per point required")
            if np.any(self.labels < 0):
                raise ConfigurationError("labels must lie in [0, C)")
        if self.provenance not in PROVENANCES:
            raise ConfigurationError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def n_classes(self):
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = [f"x_{i + 1}" for i in range(self.dim)]
            if self.labels is not None:
                header.append("label")
            writer.writerow(header)
            for i, row in enumerate(self.points):
                vals = [repr(float(v)) for v in row]
                if self.labels is not None:
                    vals.append(str(int(self.labels[i])))
                writer.writerow(vals)


def read_dataset_csv(path, label_column=None):
    """Read a header-first CSV; a final column named ``label`` is taken as labels."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError("empty file", str(path))
    header = [h.strip() for h in rows[0]]
    if label_column is None:
        label_column = header[-1] == "label"
    body = [r for r in rows[1:] if r]
    try:
        table = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise SchemaError(f"non-numeric entry ({exc})", str(path)) from exc
    if table.ndim != 2 or table.shape[1] != len(header):
        raise SchemaError("every row needs one value per header column", str(path))
    if label_column:
        labels = table[:, -1]
        if np.any(labels != np.round(labels)):
            raise SchemaError("labels must be integers", f"{path}:label")
        return Dataset(table[:, :-1], labels.astype(int), "file")
    return Dataset(table, None, "file")


def paraboloid_centers(radius=3.0, n_ring=6):
    angles = 2.0 * np.pi * np.arange(n_ring) / n_ring
    ring = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    return np.vstack([ring, np.zeros(2)])


def make_synthetic_paraboloid(n_per_component=300, seed=0, noise=0.1, spread=0.2, coef=0.3):
    """Six Gaussian blobs on a radius-3 circle plus one at the origin, lifted to ``[z, 0.3|z|^2 + e]``.

    Labels are component indices; ``latent`` holds the ground-truth ``z``.
    """
    if n_per_component < 1:
        raise ConfigurationError("n_per_component must be >= 1")
    rng = np.random.default_rng(seed)
    centers = paraboloid_centers()
    z = np.vstack([c + spread * rng.standard_normal((n_per_component, 2)) for c in centers])
    labels = np.repeat(np.arange(len(centers)), n_per_component)
    height = coef * np.sum(z**2, axis=1) + noise * rng.standard_normal(len(z))
    return Dataset(np.column_stack([z, height]), labels, "synthetic-paraboloid", z.copy())


def make_synthetic_sine(n=1000, noise=0.1, seed=0, low=(-3.0, -3.0), high=(3.0, 3.0)):
    """Uniform ``(x1, x2)`` on a rectangle with third coordinate ``sin(x1)`` plus Gaussian noise."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if noise < 0:
        raise ConfigurationError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    xy = rng.uniform(low, high, size=(n, 2))
    third = np.sin(xy[:, 0]) + noise * rng.standard_normal(n)
    return Dataset(np.column_stack([xy, third]), None, "synthetic-sine", xy.copy())
