"""Window coverings, overlap graphs and Laplacian regularisation of local sections.

Sections are stored as an ``N x r`` matrix whose row ``i`` belongs to window
``i``. Edges are unordered pairs stored as ``(i, j)`` with ``i < j`` and
oriented ``i -> j``; the coboundary of a section stack on that edge is
``s[j] - s[i]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument
from .numkernel import SparseSym, as_tensor, cg_solve


@dataclass(frozen=True)
class WindowCovering:
    T: int
    w: int
    stride: int
    windows: tuple

    @property
    def n_windows(self):
        return len(self.windows)

    def pool_matrix(self):
        """``N x T`` averaging matrix: row i is uniform over window i."""
        M = np.zeros((self.n_windows, self.T))
        for i, (a, b) in enumerate(self.windows):
            M[i, a:b] = 1.0 / (b - a)
        return M

    def multiplicity(self):
        """Number of windows covering each position."""
        m = np.zeros(self.T, dtype=np.int64)
        for a, b in self.windows:
            m[a:b] += 1
        return m


def make_covering(T, w, stride):
    if not 1 <= w <= T:
        raise InvalidArgument(f"window length must satisfy 1 <= w <= T, got w={w}, T={T}")
    if stride < 1:
        raise InvalidArgument(f"stride must be positive, got {stride}")
    if stride > w:
        raise InvalidArgument(f"stride {stride} > window {w} would leave uncovered positions")
    windows = []
    start = 0
    while start + w <= T:
        windows.append((start, start + w))
        start += stride
    if windows[-1][1] < T:
        windows.append((T - w, T))
    return WindowCovering(T, w, stride, tuple(windows))


@dataclass(frozen=True)
class OverlapGraph:
    n_vertices: int
    edges: np.ndarray  # E x 2, i < j
    weights: np.ndarray
    laplacian: SparseSym

    @property
    def n_edges(self):
        return int(self.edges.shape[0])

    def dense_laplacian(self):
        return self.laplacian.to_dense()


def graph_from_edges(n, edges, weights=None):
    """Graph on ``n`` vertices with ``L = D - A`` assembled from the edge list."""
    pairs = sorted({(min(i, j), max(i, j)) for i, j in edges})
    for i, j in pairs:
        if i == j or i < 0 or j >= n:
            raise InvalidArgument(f"invalid edge ({i}, {j}) for {n} vertices")
    E = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        wts = np.ones(len(pairs))
    else:
        lookup = {(min(i, j), max(i, j)): float(v) for (i, j), v in zip(edges, weights)}
        wts = np.asarray([lookup[p] for p in pairs])
    rows, cols, vals = [], [], []
    for (i, j), v in zip(pairs, wts):
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-v, -v, v, v]
    L = SparseSym.from_triplets(n, rows, cols, vals)
    return OverlapGraph(n, E, wts, L)


def overlap_graph(cov, weighted=False):
    """Edges join windows sharing at least one position.

    ``weighted=True`` uses ``|U_i n U_j| / w`` instead of unit weights.
    """
    edges, weights = [], []
    for i, j in combinations(range(cov.n_windows), 2):
        (a0, b0), (a1, b1) = cov.windows[i], cov.windows[j]
        shared = min(b0, b1) - max(a0, a1)
        if shared > 0:
            edges.append((i, j))
            weights.append(shared / cov.w if weighted else 1.0)
    return graph_from_edges(cov.n_windows, edges, weights)


def _check_sections(g, s):
    s = as_tensor(s, name="sections")
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2 or s.shape[0] != g.n_vertices:
        raise InvalidArgument(f"sections shape {s.shape} does not match {g.n_vertices} vertices")
    return s


def coboundary_matrix(g):
    """Dense ``E x N`` incidence matrix; row for edge (i, j) is ``e_j - e_i``."""
    D = np.zeros((g.n_edges, g.n_vertices))
    if g.n_edges:
        rows = np.arange(g.n_edges)
        D[rows, g.edges[:, 0]] = -1.0
        D[rows, g.edges[:, 1]] = 1.0
    return D


def coboundary(g, s):
    s = _check_sections(g, s)
    if not g.n_edges:
        return np.zeros((0, s.shape[1]))
    return s[g.edges[:, 1]] - s[g.edges[:, 0]]


def coboundary_energy(g, s):
    """Weighted ``sum_E w_ij |s_j - s_i|^2``, i.e. ``s^T (L x I) s``."""
    d = coboundary(g, s)
    return float(np.sum(g.weights[:, None] * d * d))


def coh_loss(g, s, lam):
    """``lam * sum_E |s_j - s_i|^2`` and its gradient ``2 lam L s``."""
    if lam < 0:
        raise InvalidArgument("lambda must be nonnegative")
    s = _check_sections(g, s)
    value = lam * coboundary_energy(g, s)
    grad = 2.0 * lam * g.laplacian.matvec(s)
    return value, grad


def coupling_loss(s, t, eta):
    """``eta * sum_i |s_i - t_i|^2`` and its gradient with respect to ``s``."""
    if eta < 0:
        raise InvalidArgument("eta must be nonnegative")
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if s.shape != t.shape:
        raise InvalidArgument(f"shape mismatch {s.shape} vs {t.shape}")
    diff = s - t
    return float(eta * np.sum(diff * diff)), 2.0 * eta * diff


def harmonize(s0, g, lam, eta=0.0, t=None, tol=1e-12):
    """Minimiser of ``|s - s0|^2 + lam s^T(L x I)s + eta |s - t|^2``.

    Solves ``((1 + eta) I + lam L) S = S0 + eta T`` column by column with CG.
    """
    if lam < 0 or eta < 0:
        raise InvalidArgument("lambda and eta must be nonnegative")
    s0 = _check_sections(g, s0)
    if t is None:
        if eta > 0:
            raise InvalidArgument("coupling targets are required when eta > 0")
        t = np.zeros_like(s0)
    t = _check_sections(g, t)
    if t.shape != s0.shape:
        raise InvalidArgument(f"target shape {t.shape} != section shape {s0.shape}")
    if lam == 0 and eta == 0:
        return s0.copy()
    rhs = s0 + eta * t if eta > 0 else s0.copy()
    if lam == 0 or g.n_edges == 0:
        return rhs / (1.0 + eta)
    A = SparseSym(g.laplacian.order, g.laplacian.indptr, g.laplacian.indices,
                  lam * g.laplacian.data)
    return cg_solve(A, rhs, tol=tol, shift=1.0 + eta).x


def harmonize_objective(s, s0, g, lam, eta=0.0, t=None):
    d = np.asarray(s) - s0
    val = float(np.sum(d * d)) + lam * coboundary_energy(g, s)
    if eta > 0:
        e = np.asarray(s) - t
        val += eta * float(np.sum(e * e))
    return val


def connected_components(g):
    """Component label per vertex, labelled in order of smallest vertex."""
    parent = list(range(g.n_vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in g.edges:
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = [find(v) for v in range(g.n_vertices)]
    relabel = {r: k for k, r in enumerate(sorted(set(roots)))}
    return np.asarray([relabel[r] for r in roots], dtype=np.int64)


def kernel_projection(g, s):
    """Orthogonal projection onto ``ker(L)``: each row becomes its component mean."""
    s = _check_sections(g, s)
    labels = connected_components(g)
    out = np.empty_like(s)
    for c in np.unique(labels):
        idx = labels == c
        out[idx] = s[idx].mean(axis=0)
    return out


# --------------------------------------------------------------------------
# Hodge decomposition of edge flows


class HodgeComponents(NamedTuple):
    gradient: np.ndarray
    curl: np.ndarray
    harmonic: np.ndarray


def triangles_of(g):
    """All 3-cliques ``(a, b, c)`` with ``a < b < c``."""
    adj = {v: set() for v in range(g.n_vertices)}
    for i, j in g.edges:
        adj[int(i)].add(int(j))
        adj[int(j)].add(int(i))
    tris = []
    for a, b in g.edges:
        a, b = int(a), int(b)
        for c in sorted(adj[a] & adj[b]):
            if c > b:
                tris.append((a, b, c))
    return sorted(tris)


def triangle_coboundary(g, triangles):
    """``T x E`` matrix mapping an edge flow to circulations ``a -> b -> c -> a``."""
    index = {(int(i), int(j)): k for k, (i, j) in enumerate(g.edges)}
    D1 = np.zeros((len(triangles), g.n_edges))
    for r, tri in enumerate(triangles):
        if len(tri) != 3 or len(set(tri)) != 3:
            raise InvalidArgument(f"triangle {tri} does not have three distinct vertices")
        for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(u, v), max(u, v))
            if key not in index:
                raise InvalidArgument(f"triangle {tri} is not a clique: missing edge {key}")
            D1[r, index[key]] += 1.0 if u < v else -1.0
    return D1


def _range_projection(M, f):
    """Orthogonal projection of ``f`` onto the column space of ``M``."""
    if M.size == 0:
        return np.zeros_like(f)
    coef, *_ = np.linalg.lstsq(M, f, rcond=None)
    return M @ coef


def hodge_edge_decomposition(g, f, triangles=None):
    """Split edge flow ``f`` into gradient, curl and harmonic parts.

    gradient lies in ``im(d0)``, curl in ``im(d1^T)`` for the given filled
    triangles (default: every 3-clique), harmonic is the remainder.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != g.n_edges:
        raise InvalidArgument(f"flow has {f.shape[0]} entries, graph has {g.n_edges} edges")
    if triangles is None:
        triangles = triangles_of(g)
    D0 = coboundary_matrix(g)
    D1 = triangle_coboundary(g, list(triangles))
    grad = _range_projection(D0, f)
    curl = _range_projection(D1.T, f) if len(triangles) else np.zeros_like(f)
    return HodgeComponents(grad, curl, f - grad - curl)
