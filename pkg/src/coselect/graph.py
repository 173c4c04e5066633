"""Similarity graphs, Laplacians and the consensus-graph update."""

import numpy as np
from scipy.spatial.distance import cdist


def knn_graph(X, k):
    """Row-stochastic k-nearest-neighbour affinity of the columns of ``X``.

    Uses the adaptive-neighbour allocation: with squared distances
    ``d_i1 <= ... <= d_ik <= d_i,k+1`` to the other instances,
    ``s_ij = (d_i,k+1 - d_ij) / sum_h (d_i,k+1 - d_ih)`` over the k
    nearest and zero elsewhere. Rows whose allocation degenerates
    (all k+1 distances tied, or no (k+1)-th neighbour) get 1/k on the
    k nearest.

    Parameters
    ----------
    X : ndarray, shape (d, n)
    k : int, 1 <= k < n

    Returns
    -------
    S : ndarray, shape (n, n)
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[1]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n={n}, got {k}")
    D = cdist(X.T, X.T, "sqeuclidean")
    np.fill_diagonal(D, np.inf)
    order = np.argsort(D, axis=1, kind="stable")
    S = np.zeros((n, n))
    for i in range(n):
        nb = order[i, :k]
        d = D[i, nb]
        if k + 1 <= n - 1:
            gaps = D[i, order[i, k]] - d
            total = gaps.sum()
        else:
            total = 0.0
        if total > 0:
            S[i, nb] = gaps / total
        else:
            S[i, nb] = 1.0 / k
    return S


def laplacian(M):
    """``D - A`` with ``A = (M + M^T)/2`` and ``D`` the row sums of ``A``."""
    M = np.asarray(M, dtype=np.float64)
    A = 0.5 * (M + M.T)
    return np.diag(A.sum(axis=1)) - A


def complement_laplacian(S):
    """Laplacian of the graph with weights ``1 - s_ij`` (self-loops dropped)."""
    C = 1.0 - np.asarray(S, dtype=np.float64)
    np.fill_diagonal(C, 0.0)
    return laplacian(C)


def pairwise_sq_dists(B):
    """``a_ij = ||B_i. - B_j.||^2`` for the rows of ``B``."""
    sq = np.einsum("ij,ij->i", B, B)
    A = sq[:, None] + sq[None, :] - 2.0 * (B @ B.T)
    np.maximum(A, 0.0, out=A)
    np.fill_diagonal(A, 0.0)
    return A


def _root_fn(phi, q):
    return np.maximum(phi - q, 0.0).sum() / q.size - phi


def newton_simplex_root(q, max_steps=100, tol=1e-12):
    """Root of ``(1/n) sum_j (phi - q_j)_+ - phi = 0`` for a row with ``sum(q) = 1``.

    The function is convex, piecewise linear and non-increasing with
    ``f(0) >= 0`` and ``f(max q) = -1/n``, so Newton from
    ``mean(q) - 1/n`` walks monotonically onto the root. Bisection on
    ``[min(0, lo), max(q)]`` takes over if Newton stalls.
    """
    q = np.asarray(q, dtype=np.float64)
    n = q.size
    phi = q.mean() - 1.0 / n
    for _ in range(max_steps):
        f = _root_fn(phi, q)
        if abs(f) < tol:
            return phi
        slope = np.count_nonzero(q < phi) / n - 1.0
        if slope == 0.0:
            break
        step = phi - f / slope
        if step == phi:
            return phi
        phi = step

    # bisection fallback; f is non-increasing
    lo, hi = min(0.0, q.min()) - 1.0, q.max()
    while _root_fn(lo, q) < 0:
        lo = 2 * lo - 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = _root_fn(mid, q)
        if abs(f) < tol or hi - lo < 1e-15:
            return mid
        if f > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def project_row(q):
    """Shift ``q`` to unit sum, then clip at the Newton root."""
    q = np.asarray(q, dtype=np.float64)
    q = q + (1.0 - q.sum()) / q.size
    phi = newton_simplex_root(q)
    return np.maximum(q - phi, 0.0)


def update_consensus_graph(S_views, B, alpha, gamma, r, average="weighted", eps=1e-8):
    """Re-solve the consensus graph row by row.

    Each view contributes the target ``P_v = S_v + alpha / (4 V gamma_v^r) A``
    where ``a_ij = ||B_i. - B_j.||^2``. ``average="uniform"`` projects the
    plain mean of the targets onto the simplex; ``"weighted"`` weights
    target v by ``gamma_v^r``, which is the exact minimiser of
    ``sum_v gamma_v^r ||S - S_v||^2 - alpha/2 sum_ij a_ij s_ij`` and never
    divides by a vanishing view weight.
    """
    V = len(S_views)
    A = pairwise_sq_dists(np.asarray(B, dtype=np.float64))
    g = np.asarray(gamma, dtype=np.float64) ** r
    if average == "weighted":
        if g.sum() <= 0:
            g = np.ones(V)
        Pbar = (sum(gv * Sv for gv, Sv in zip(g, S_views)) + 0.25 * alpha * A) / g.sum()
    elif average == "uniform":
        g = np.maximum(g, eps**r)
        Pbar = sum(Sv + alpha / (4 * V * gv) * A for gv, Sv in zip(g, S_views)) / V
    else:
        raise ValueError(f"unknown averaging {average!r}")
    return np.vstack([project_row(row) for row in Pbar])
