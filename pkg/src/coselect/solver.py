"""Alternating optimiser for joint feature/instance self-representation.

Blocks, in cycle order: per-view projections ``W[v]`` -> consistent
representation ``B`` -> view-specific representations ``B_v[v]`` ->
consensus graph ``S`` -> view weights ``(lam, eta, gam)``. Every block
is a closed-form (or exactly solved) minimiser of a reweighted surrogate,
so the full objective is non-increasing across cycles.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dataset import Hyperparams
from .graph import (
    complement_laplacian,
    knn_graph,
    laplacian,
    pairwise_sq_dists,
    update_consensus_graph,
)

log = logging.getLogger(__name__)

VARIANTS = ("full", "no-graph", "no-consensus")
TERMS = (
    "reconstruction",
    "penalty_W",
    "penalty_B",
    "penalty_Bv",
    "diversity",
    "view_graph",
    "graph_fit",
)


class SolverError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


# -- small pieces -----------------------------------------------------------

def l21_norm(M):
    """Sum of the Euclidean norms of the rows of ``M``."""
    return float(np.linalg.norm(np.asarray(M, dtype=np.float64), axis=1).sum())


def row_weight_diag(M, eps):
    """Diagonal of the l2,1 reweighting matrix, ``1 / (2 ||M_i.|| + eps)``.

    Returned as a 1-D array; use ``np.diag`` for the matrix form.
    """
    return 1.0 / (2.0 * np.linalg.norm(np.asarray(M, dtype=np.float64), axis=1) + eps)


def _fix_signs(V):
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def smallest_eigvecs(H, c):
    """The ``c`` eigenvectors of symmetric ``H`` with smallest eigenvalues."""
    H = 0.5 * (H + H.T)
    _, vecs = np.linalg.eigh(H)
    return _fix_signs(vecs[:, :c])


def _spd_solve(A, b):
    # tiny view weights make some systems badly conditioned; the solution is
    # still the one the descent argument needs, so the warning is noise
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        try:
            return linalg.solve(A, b, assume_a="pos")
        except (linalg.LinAlgError, np.linalg.LinAlgError):
            return linalg.solve(A, b)


# -- block updates ----------------------------------------------------------

def update_W(X, B, B_v, lam, r, c, D_v1, eps=1e-8, method="constrained", path="auto"):
    """Update one view's projection matrix.

    Both methods share the reweighted problem
    ``min Tr(W^T X H X^T W) + lam^r Tr(W^T diag(D_v1) W)`` with
    ``H = (I - B - B_v)(I - B - B_v)^T``.

    ``method="regression"`` returns ``(X X^T + lam^r D)^{-1} X Y`` with
    ``Y`` the ``c`` bottom eigenvectors of ``H``. ``method="constrained"``
    minimises the problem exactly under ``W^T X X^T W = I``: with
    ``M = X H X^T + lam^r D`` and ``K = X^T M^{-1} X``, the minimiser is
    ``M^{-1} X Z diag(1/kappa)`` for the top-``c`` eigenpairs
    ``(kappa, Z)`` of ``K``.

    ``path`` chooses how the d x d system is handled: ``"direct"`` solves
    it, ``"woodbury"`` goes through an n x n system instead, ``"auto"``
    picks the smaller.
    """
    X = np.asarray(X, dtype=np.float64)
    d, n = X.shape
    if path == "auto":
        path = "direct" if d <= n else "woodbury"
    if path not in ("direct", "woodbury"):
        raise ValueError(f"unknown path {path!r}")
    lr = max(float(lam), eps) ** r
    D_v1 = np.asarray(D_v1, dtype=np.float64)
    N = np.eye(n) - B - B_v

    if method == "regression":
        Y = smallest_eigvecs(N @ N.T, c)
        XY = X @ Y
        if path == "direct":
            return _spd_solve(X @ X.T + np.diag(lr * D_v1), XY)
        # (XX^T + lr D)^{-1} = lr^{-1} R,  R = D^-1 - lr^-1 D^-1 X O X^T D^-1
        Dinv = 1.0 / D_v1
        DX = Dinv[:, None] * X
        O = np.linalg.inv(np.eye(n) + (X.T @ DX) / lr)
        RXY = Dinv[:, None] * XY - DX @ (O @ (DX.T @ XY)) / lr
        return RXY / lr

    if method != "constrained":
        raise ValueError(f"unknown method {method!r}")
    dd = lr * D_v1
    U = X @ N
    if path == "direct":
        MX = _spd_solve(U @ U.T + np.diag(dd), X)
    else:
        Dinv = 1.0 / dd
        DU = Dinv[:, None] * U
        DX = Dinv[:, None] * X
        core = np.eye(n) + U.T @ DU
        MX = DX - DU @ _spd_solve(core, U.T @ DX)
    K = X.T @ MX
    K = 0.5 * (K + K.T)
    vals, vecs = np.linalg.eigh(K)
    kappa = vals[::-1][:c]
    Z = _fix_signs(vecs[:, ::-1][:, :c])
    floor = max(kappa[0], 0.0) * 1e-12
    good = kappa > floor
    if not np.all(good):
        log.debug("view has rank < c; %d projection columns set to zero", int((~good).sum()))
    scale = np.where(good, 1.0 / np.where(good, kappa, 1.0), 0.0)
    return (MX @ Z) * scale


def _gram(X, W):
    P = W.T @ X
    return P.T @ P


def update_B(X_all, W_all, B_v_all, L_Sbar, alpha, theta, D_B):
    """Consistent representation: solve
    ``(sum_v Z_v + alpha L_Sbar + theta D_B) B = sum_v Z_v (I - B_v)``
    with ``Z_v = X_v^T W_v W_v^T X_v``.
    """
    n = B_v_all[0].shape[0]
    I = np.eye(n)
    Zs = [_gram(X, W) for X, W in zip(X_all, W_all)]
    G = sum(Zs) + alpha * np.asarray(L_Sbar) + theta * np.diag(D_B)
    rhs = sum(Z @ (I - Bv) for Z, Bv in zip(Zs, B_v_all))
    return _spd_solve(G, rhs)


def update_B_v(X, W, B, L_Sv, alpha, eta, r, D_v2, eps=1e-8):
    """View-specific representation: solve
    ``(Z + alpha L_Sv + eta^r D_v2) B_v = Z (I - B)`` with ``Z = X^T W W^T X``.
    """
    n = B.shape[0]
    Z = _gram(X, W)
    er = max(float(eta), eps) ** r
    G = Z + alpha * np.asarray(L_Sv) + er * np.diag(D_v2)
    return _spd_solve(G, Z @ (np.eye(n) - B))


def simplex_weights(values, r, eps=1e-8):
    """``w_v proportional to values_v ** (1/(1-r))``, normalised to sum 1.

    Values are floored at ``eps``; computed in log space so large ``1/(r-1)``
    cannot overflow.
    """
    v = np.maximum(np.asarray(values, dtype=np.float64), eps)
    logs = np.log(v) / (1.0 - r)
    w = np.exp(logs - logs.max())
    return w / w.sum()


def update_weights(W_all, B_v_all, S, S_views, r, eps=1e-8):
    """Closed-form adaptive weights ``(lam, eta, gam)``, one simplex per family."""
    lam = simplex_weights([l21_norm(W) for W in W_all], r, eps)
    eta = simplex_weights([l21_norm(Bv) for Bv in B_v_all], r, eps)
    gam = simplex_weights([float(np.sum((S - Sv) ** 2)) for Sv in S_views], r, eps)
    return lam, eta, gam


# -- state and trace --------------------------------------------------------

@dataclass
class ModelState:
    W: list
    B: np.ndarray
    B_v: list
    S: np.ndarray
    S_views: list
    lam: np.ndarray
    eta: np.ndarray
    gam: np.ndarray
    variant: str = "full"

    @property
    def n(self):
        return self.B.shape[0]

    def orthogonality_gaps(self, views):
        """``||W^T X X^T W - I||_F`` per view (reported, not enforced)."""
        out = []
        for X, W in zip(views, self.W):
            P = W.T @ X
            out.append(float(np.linalg.norm(P @ P.T - np.eye(W.shape[1]))))
        return out

    def summary(self, views=None):
        s = {
            "variant": self.variant,
            "n": int(self.n),
            "view_dims": [int(W.shape[0]) for W in self.W],
            "c": int(self.W[0].shape[1]),
            "lambda": [float(x) for x in self.lam],
            "eta": [float(x) for x in self.eta],
            "gamma": [float(x) for x in self.gam],
            "l21_W": [l21_norm(W) for W in self.W],
            "l21_B": l21_norm(self.B),
            "l21_B_v": [l21_norm(Bv) for Bv in self.B_v],
            "consensus_row_sum_max_err": float(np.abs(self.S.sum(axis=1) - 1).max()),
        }
        if views is not None:
            s["orthogonality_gap"] = self.orthogonality_gaps(views)
        return s

    def arrays(self):
        out = {"B": self.B, "S": self.S, "lam": self.lam, "eta": self.eta, "gam": self.gam}
        for v, (W, Bv, Sv) in enumerate(zip(self.W, self.B_v, self.S_views)):
            out[f"W{v}"] = W
            out[f"B_v{v}"] = Bv
            out[f"S_view{v}"] = Sv
        return out

    @classmethod
    def from_arrays(cls, arrs, variant="full"):
        V = sum(1 for k in arrs if k.startswith("W"))
        return cls(
            W=[np.asarray(arrs[f"W{v}"]) for v in range(V)],
            B=np.asarray(arrs["B"]),
            B_v=[np.asarray(arrs[f"B_v{v}"]) for v in range(V)],
            S=np.asarray(arrs["S"]),
            S_views=[np.asarray(arrs[f"S_view{v}"]) for v in range(V)],
            lam=np.asarray(arrs["lam"]),
            eta=np.asarray(arrs["eta"]),
            gam=np.asarray(arrs["gam"]),
            variant=variant,
        )


@dataclass
class ConvergenceTrace:
    records: list = field(default_factory=list)
    converged: bool = False

    COLUMNS = ("iteration", "objective", *TERMS, "rel_change")

    def append(self, total, terms, eps):
        if self.records:
            prev = self.records[-1]["objective"]
            rel = abs(total - prev) / max(abs(prev), eps)
        else:
            rel = math.nan
        rec = {"iteration": len(self.records) + 1, "objective": total, **terms, "rel_change": rel}
        self.records.append(rec)
        return rec

    @property
    def objectives(self):
        return np.array([r["objective"] for r in self.records])

    @property
    def n_iter(self):
        return len(self.records)

    def rows(self):
        return [[rec[c] for c in self.COLUMNS] for rec in self.records]


# -- objective --------------------------------------------------------------

def objective(state, views, hp, variant=None):
    """Value of the full objective at ``state`` and its per-term breakdown.

    Uses the true l2,1 norms and pairwise-distance sums, not the reweighted
    surrogates. Terms absent from an ablation variant are reported as 0.
    """
    variant = variant or state.variant
    r, n = hp.r, state.n
    I = np.eye(n)
    B = state.B if variant != "no-consensus" else np.zeros((n, n))
    t = dict.fromkeys(TERMS, 0.0)
    for v, X in enumerate(views):
        P = state.W[v].T @ X
        t["reconstruction"] += float(np.sum((P @ (I - B - state.B_v[v])) ** 2))
        t["penalty_W"] += state.lam[v] ** r * l21_norm(state.W[v])
        t["penalty_Bv"] += state.eta[v] ** r * l21_norm(state.B_v[v])
        if variant != "no-graph":
            t["view_graph"] += 0.5 * hp.alpha * float(np.sum(pairwise_sq_dists(state.B_v[v]) * state.S_views[v]))
    if variant != "no-consensus":
        t["penalty_B"] = hp.theta * l21_norm(B)
    if variant == "full":
        comp = 1.0 - state.S
        np.fill_diagonal(comp, 0.0)
        t["diversity"] = 0.5 * hp.alpha * float(np.sum(pairwise_sq_dists(B) * comp))
        t["graph_fit"] = float(sum(g ** r * np.sum((state.S - Sv) ** 2) for g, Sv in zip(state.gam, state.S_views)))
    t = {k: float(x) for k, x in t.items()}
    return math.fsum(t.values()), t


# -- driver -----------------------------------------------------------------

def _views_of(data):
    # the solver only touches the view matrices, never labels
    views = getattr(data, "views", data)
    return [np.asarray(X, dtype=np.float64) for X in views]


def fit_variant(data, hp=None, variant="full", callback=None):
    """Run the alternating optimiser.

    Parameters
    ----------
    data : MultiViewDataset or sequence of (d_v, n) arrays
    hp : Hyperparams
    variant : {"full", "no-graph", "no-consensus"}
        ``"no-graph"`` drops every alpha term and the consensus graph;
        ``"no-consensus"`` drops ``B`` and everything attached to it.
    callback : callable(iteration, state, record), optional

    Returns
    -------
    (ModelState, ConvergenceTrace)
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    hp = hp or Hyperparams()
    views = _views_of(data)
    V, n = len(views), views[0].shape[1]
    hp = hp.resolve(n, [X.shape[0] for X in views])
    eps, r, c = hp.epsilon, hp.r, hp.c
    use_graph = variant != "no-graph"
    use_B = variant != "no-consensus"
    alpha = hp.alpha if use_graph else 0.0

    rng = np.random.default_rng(hp.seed)
    B = rng.uniform(0.0, 1.0 / n, size=(n, n))
    B_v = [rng.uniform(0.0, 1.0 / n, size=(n, n)) for _ in range(V)]
    if not use_B:
        B = np.zeros((n, n))
    S_views = [knn_graph(X, hp.k) for X in views]
    L_views = [laplacian(Sv) for Sv in S_views]
    S = sum(S_views) / V
    lam = eta = gam = np.full(V, 1.0 / V)
    W = [None] * V
    state = ModelState(W, B, B_v, S, S_views, lam, eta, gam, variant)
    trace = ConvergenceTrace()

    for it in range(1, hp.max_iter + 1):
        for v, X in enumerate(views):
            D1 = np.ones(X.shape[0]) if W[v] is None else row_weight_diag(W[v], eps)
            W[v] = update_W(X, B, B_v[v], lam[v], r, c, D1, eps, method=hp.w_step)
        if use_B:
            L_bar = complement_laplacian(S) if use_graph else 0.0
            B = update_B(views, W, B_v, L_bar, alpha, hp.theta, row_weight_diag(B, eps))
        for v, X in enumerate(views):
            L = L_views[v] if use_graph else 0.0
            B_v[v] = update_B_v(X, W[v], B, L, alpha, eta[v], r, row_weight_diag(B_v[v], eps), eps)
        if variant == "full":
            S = update_consensus_graph(S_views, B, alpha, gam, r, average=hp.consensus, eps=eps)
        lam_new, eta_new, gam_new = update_weights(W, B_v, S, S_views, r, eps)
        lam, eta = lam_new, eta_new
        if variant == "full":
            gam = gam_new

        state = ModelState(list(W), B, list(B_v), S, S_views, lam, eta, gam, variant)
        total, terms = objective(state, views, hp)
        rec = trace.append(total, terms, eps)
        if not math.isfinite(total):
            raise SolverError(f"non-finite objective at iteration {it}", trace)
        log.debug("iter %d objective %.10g rel %.3g", it, total, rec["rel_change"])
        if callback is not None:
            callback(it, state, rec)
        if it > 1 and rec["rel_change"] < hp.tol:
            trace.converged = True
            break
    return state, trace


def fit(data, hp=None):
    """Fit the full model; see :func:`fit_variant`."""
    return fit_variant(data, hp, "full")
