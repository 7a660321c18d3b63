"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np
from scipy.integrate import trapezoid
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as sp_dijkstra


def floyd_warshall(w):
    d = w.copy()
    for k in range(len(d)):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


def grid_oracle(metric, a, b, lo=-3.0, hi=3.0, n=40, quad=20):
    """8-neighbour grid shortest path with straight-edge lengths; endpoints snapped onto the grid."""
    xs = np.linspace(lo, hi, n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    rows, cols, w = [], [], []
    t = np.linspace(0, 1, quad + 1)
    for di, dj in [(1, 0), (0, 1), (1, 1), (1, -1)]:
        for i in range(n):
            for j in range(n):
                i2, j2 = i + di, j + dj
                if 0 <= i2 < n and 0 <= j2 < n:
                    p, q = pts[i * n + j], pts[i2 * n + j2]
                    seg = p + t[:, None] * (q - p)
                    sp = np.sqrt(np.einsum("i,nij,j->n", q - p, metric(seg), q - p))
                    rows.append(i * n + j)
                    cols.append(i2 * n + j2)
                    w.append(trapezoid(sp, t))
    graph = coo_matrix((w, (rows, cols)), shape=(n * n, n * n)).tocsr()
    ia = int(np.argmin(np.linalg.norm(pts - a, axis=1)))
    ib = int(np.argmin(np.linalg.norm(pts - b, axis=1)))
    return sp_dijkstra(graph, directed=False, indices=ia)[ib]


def lda_oracle(points, labels, base, metric, k, eps):
    """Neighbourhood LDA written out with explicit loops."""
    n = len(points)
    dist = [float(np.sqrt((points[i] - base) @ metric @ (points[i] - base))) for i in range(n)]
    knn = sorted(range(n), key=lambda i: (dist[i], i))[:k]
    sig = max(dist[i] for i in knn)
    w = {i: ((1 - (dist[i] / sig) ** 3) ** 3 if dist[i] < sig else 0.0) for i in knn}
    total = sum(w.values())
    classes = sorted({int(labels[i]) for i in knn})
    means, priors = {}, {}
    for c in classes:
        members = [i for i in knn if labels[i] == c]
        wc = sum(w[i] for i in members)
        if wc == 0:
            continue
        means[c] = sum(w[i] * points[i] for i in members) / wc
        priors[c] = wc / total
    dim = points.shape[1]
    within = np.zeros((dim, dim))
    for c in means:
        for i in knn:
            if labels[i] == c:
                r = points[i] - means[c]
                within += w[i] * np.outer(r, r)
    within /= total
    overall = sum(priors[c] * means[c] for c in means)
    between = sum(priors[c] * np.outer(means[c] - overall, means[c] - overall) for c in means)
    wd = np.diag(np.diag(within))
    winv = np.diag(1.0 / np.diag(wd))
    return wd, between, means, priors, winv @ between @ winv + eps * winv


SIX_POINTS = np.array([[0.0, 0.0], [0.4, 0.3], [-0.3, 0.5], [2.0, 0.1], [2.5, -0.4], [1.8, 0.6]])
SIX_LABELS = np.array([0, 0, 0, 1, 1, 1])
