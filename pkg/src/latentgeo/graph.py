"""Approximate geodesics from a k-nearest-neighbour graph over latent prototypes."""

import heapq
import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .ambient import kmeans
from .curves import Curve
from .errors import ConfigurationError, NumericalDomainError, SchemaError, UnreachableError
from .sampling import make_rng, uniform_ball

DEFAULT_SEGMENTS = 20


def segment_lengths(starts, ends, metric, segments=DEFAULT_SEGMENTS):
    """Riemannian lengths of the straight segments ``starts[i] -> ends[i]``.

    Uses the same trapezoidal rule as ``curve_length`` on a uniform grid of
    ``segments`` steps; all metric evaluations are issued as one batch.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    if segments < 1:
        raise ConfigurationError("segments must be >= 1")
    n, d = starts.shape
    if n == 0:
        return np.zeros(0)
    t = np.linspace(0.0, 1.0, segments + 1)
    delta = ends - starts
    pts = starts[:, None, :] + t[None, :, None] * delta[:, None, :]
    m = metric(pts.reshape(-1, d)).reshape(n, segments + 1, d, d)
    q = np.einsum("ni,ntij,nj->nt", delta, m, delta)
    if not np.all(np.isfinite(q)):
        raise NumericalDomainError("non-finite metric evaluation on a graph edge")
    speed = np.sqrt(np.clip(q, 0.0, None))
    dt = np.diff(t)
    return np.sum(0.5 * (speed[:, 1:] + speed[:, :-1]) * dt, axis=1)


@dataclass
class LatentGraph:
    nodes: np.ndarray
    adjacency: list  # adjacency[i] = [(j, w), ...]
    k: int
    segments: int = DEFAULT_SEGMENTS

    @property
    def n_nodes(self):
        return len(self.nodes)

    def edges(self):
        """Undirected edge list ``(i, j, w)`` with ``i < j``."""
        return [(i, j, w) for i, nbrs in enumerate(self.adjacency) for j, w in nbrs if i < j]

    def weight_matrix(self):
        """Dense weights with ``inf`` for missing edges and 0 on the diagonal."""
        n = self.n_nodes
        out = np.full((n, n), np.inf)
        np.fill_diagonal(out, 0.0)
        for i, nbrs in enumerate(self.adjacency):
            for j, w in nbrs:
                out[i, j] = min(out[i, j], w)
        return out

    def components(self):
        """Connected-component label per node."""
        labels = -np.ones(self.n_nodes, dtype=int)
        current = 0
        for root in range(self.n_nodes):
            if labels[root] >= 0:
                continue
            stack = [root]
            labels[root] = current
            while stack:
                i = stack.pop()
                for j, _ in self.adjacency[i]:
                    if labels[j] < 0:
                        labels[j] = current
                        stack.append(j)
            current += 1
        return labels

    def to_json(self):
        return {
            "nodes": self.nodes.tolist(),
            "k": int(self.k),
            "segments": int(self.segments),
            "adjacency": [[[int(j), float(w)] for j, w in nbrs] for nbrs in self.adjacency],
        }

    @classmethod
    def from_json(cls, obj):
        for key in ("nodes", "k", "adjacency"):
            if key not in obj:
                raise SchemaError(f"missing key {key!r}", f"$.{key}")
        nodes = np.asarray(obj["nodes"], dtype=float)
        if nodes.ndim != 2:
            raise SchemaError("nodes must be a matrix", "$.nodes")
        if len(obj["adjacency"]) != len(nodes):
            raise SchemaError("one adjacency list per node required", "$.adjacency")
        adjacency = []
        for i, nbrs in enumerate(obj["adjacency"]):
            row = []
            for e, pair in enumerate(nbrs):
                if len(pair) != 2:
                    raise SchemaError("edges are [index, weight] pairs", f"$.adjacency[{i}][{e}]")
                row.append((int(pair[0]), float(pair[1])))
            adjacency.append(row)
        return cls(nodes, adjacency, int(obj["k"]), int(obj.get("segments", DEFAULT_SEGMENTS)))

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def reference_prototypes(dim, n_samples=10_000, radius=4.0, n_prototypes=100, seed=0, center=None):
    """k-means prototypes of uniform samples in a latent ball (the default graph layout)."""
    pts = uniform_ball(make_rng(seed), n_samples, dim, radius, center)
    protos, _ = kmeans(pts, n_prototypes, seed=seed)
    return protos


def build_latent_graph(prototypes, k, metric, segments=DEFAULT_SEGMENTS):
    """Symmetrised Euclidean kNN graph weighted by straight-segment Riemannian length."""
    nodes = np.atleast_2d(np.asarray(prototypes, dtype=float))
    n = len(nodes)
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    if nodes.shape[1] != metric.dim:
        raise ConfigurationError("prototype dimension does not match the metric")
    if n == 1:
        return LatentGraph(nodes, [[]], k, segments)
    kk = min(k, n - 1)
    _, idx = cKDTree(nodes).query(nodes, k=kk + 1)
    pairs = set()
    for i in range(n):
        # drop self; with duplicates the self index may not come first
        nbrs = [int(j) for j in idx[i] if j != i][:kk]
        for j in nbrs:
            pairs.add((min(i, j), max(i, j)))
    pairs = sorted(pairs)
    ii = np.array([p[0] for p in pairs])
    jj = np.array([p[1] for p in pairs])
    weights = segment_lengths(nodes[ii], nodes[jj], metric, segments)
    adjacency = [[] for _ in range(n)]
    for i, j, w in zip(ii, jj, weights):
        adjacency[i].append((int(j), float(w)))
        adjacency[j].append((int(i), float(w)))
    for row in adjacency:
        row.sort()
    return LatentGraph(nodes, adjacency, k, segments)


def dijkstra(graph, source, target=None):
    """Single-source shortest paths; returns ``(dist, predecessor)`` arrays."""
    n = graph.n_nodes
    dist = np.full(n, np.inf)
    pred = -np.ones(n, dtype=int)
    done = np.zeros(n, dtype=bool)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == target:
            break
        for v, w in graph.adjacency[u]:
            alt = du + w
            if alt < dist[v]:
                dist[v] = alt
                pred[v] = u
                heapq.heappush(heap, (alt, v))
    return dist, pred


def all_pairs_distances(graph, nodes=None):
    """Dijkstra from every node in ``nodes`` (default all); rows are sources."""
    nodes = range(graph.n_nodes) if nodes is None else nodes
    return np.array([dijkstra(graph, int(s))[0] for s in nodes])


def _attach(graph, point, metric):
    """Auxiliary node: the Euclidean-kNN node nearest ``point`` in straight-line Riemannian length."""
    kk = min(graph.k, graph.n_nodes)
    _, idx = cKDTree(graph.nodes).query(point, k=kk)
    idx = np.sort(np.atleast_1d(idx))
    lengths = segment_lengths(np.repeat(point[None], len(idx), axis=0), graph.nodes[idx], metric, graph.segments)
    best = int(np.argmin(lengths))  # first minimum, i.e. lowest node index
    return int(idx[best]), float(lengths[best])


@dataclass
class GraphPath:
    points: np.ndarray  # (m, d), a first and b last
    nodes: list  # node indices along the discrete path
    graph_length: float  # sum of edge weights between the auxiliary nodes
    length: float  # Riemannian polyline length of ``points``


def shortest_graph_path(graph, a, b, metric):
    """Full result of ``graph_shortest_path`` including lengths and node indices."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if graph.n_nodes == 0:
        raise ConfigurationError("graph has no nodes")
    src, _ = _attach(graph, a, metric)
    dst, _ = _attach(graph, b, metric)
    dist, pred = dijkstra(graph, src, dst)
    if not np.isfinite(dist[dst]):
        labels = graph.components()
        cs, ct = int(labels[src]), int(labels[dst])
        raise UnreachableError(f"no path between graph components {cs} and {ct}", cs, ct)
    route = [dst]
    while route[-1] != src:
        route.append(int(pred[route[-1]]))
    route.reverse()
    inner = graph.nodes[route[1:-1]]
    points = np.vstack([a, inner, b])
    length = float(np.sum(segment_lengths(points[:-1], points[1:], metric, graph.segments)))
    return GraphPath(points, route, float(dist[dst]), length)


def graph_shortest_path(graph, a, b, metric):
    """``[a, discrete path..., b]`` with the attachment nodes replaced by the query points."""
    return shortest_graph_path(graph, a, b, metric).points


def spline_through(points):
    """Natural cubic spline through ``points`` at uniform parameter values."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) < 2:
        raise ConfigurationError("a spline needs at least two points")
    return Curve(points)
