import numpy as np
import pytest
from scipy import linalg

from coselect.dataset import Hyperparams, normalize_views, synthesize
from coselect.graph import complement_laplacian, knn_graph, laplacian
from coselect.solver import (
    SolverError,
    fit,
    fit_variant,
    l21_norm,
    objective,
    row_weight_diag,
    simplex_weights,
    smallest_eigvecs,
    update_B,
    update_B_v,
    update_W,
    update_weights,
)


def random_block(rng, d, n, c):
    X = rng.normal(size=(d, n))
    B = rng.uniform(0, 1 / n, size=(n, n))
    Bv = rng.uniform(0, 1 / n, size=(n, n))
    D = rng.uniform(0.1, 2.0, size=d)
    return X, B, Bv, D


def w_surrogate(X, W, B, Bv, lr, D):
    N = np.eye(X.shape[1]) - B - Bv
    return np.sum((W.T @ X @ N) ** 2) + lr * np.sum(D[:, None] * W**2)


def naive_objective(state, views, hp, variant):
    """Loop-level evaluation of every term, independent of the vectorised code."""
    n, r, a = state.n, hp.r, hp.alpha
    B = state.B if variant != "no-consensus" else np.zeros((n, n))
    total = 0.0
    for v, X in enumerate(views):
        W, Bv = state.W[v], state.B_v[v]
        R = W.T @ X - W.T @ X @ B - W.T @ X @ Bv
        total += (R**2).sum()
        total += state.lam[v] ** r * sum(np.sqrt((W[i] ** 2).sum()) for i in range(W.shape[0]))
        total += state.eta[v] ** r * sum(np.sqrt((Bv[i] ** 2).sum()) for i in range(n))
        if variant != "no-graph":
            for i in range(n):
                for j in range(n):
                    total += a / 2 * ((Bv[i] - Bv[j]) ** 2).sum() * state.S_views[v][i, j]
    if variant != "no-consensus":
        total += hp.theta * sum(np.sqrt((B[i] ** 2).sum()) for i in range(n))
    if variant == "full":
        for i in range(n):
            for j in range(n):
                if i != j:
                    total += a / 2 * ((B[i] - B[j]) ** 2).sum() * (1 - state.S[i, j])
        for v in range(len(views)):
            total += state.gam[v] ** r * ((state.S - state.S_views[v]) ** 2).sum()
    return total


def small_data(seed=0, n=30, dims=(8, 12), noise=0.5):
    return normalize_views(synthesize(n, list(dims), 3, noise, seed=seed), "zscore")


class TestSmallPieces:
    def test_l21_norm(self):
        M = np.array([[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]])
        assert l21_norm(M) == 6.0

    def test_row_weight_diag_zero_row(self):
        d = row_weight_diag(np.zeros((2, 3)), 1e-8)
        np.testing.assert_allclose(d, 1e8)

    def test_smallest_eigvecs(self):
        H = np.diag([3.0, 1.0, 2.0, 5.0])
        Y = smallest_eigvecs(H, 2)
        np.testing.assert_allclose(np.abs(Y), np.eye(4)[:, [1, 2]])

    def test_simplex_weights_closed_form(self):
        w = simplex_weights([1.0, 4.0], 2.0)
        # w ∝ h^{-1}: (1, 1/4) -> (0.8, 0.2)
        np.testing.assert_allclose(w, [0.8, 0.2])

    def test_simplex_weights_no_overflow(self):
        w = simplex_weights([1e-300, 1.0, 1e300], 1.0001)
        assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1)

    @pytest.mark.parametrize("r", [2.0, 3.0, 4.0])
    def test_weights_beat_random_candidates(self, r):
        rng = np.random.default_rng(int(r))
        for _ in range(20):
            h = rng.uniform(0.01, 10, size=rng.integers(2, 5))
            w = simplex_weights(h, r)
            cand = rng.dirichlet(np.ones(h.size), size=2000)
            assert (w**r) @ h <= ((cand**r) @ h).min() + 1e-12


class TestUpdateW:
    @pytest.mark.parametrize("d,n", [(25, 10), (6, 14)])
    @pytest.mark.parametrize("method", ["constrained", "regression"])
    def test_woodbury_matches_direct(self, d, n, method):
        rng = np.random.default_rng(d * n)
        X, B, Bv, D = random_block(rng, d, n, 3)
        direct = update_W(X, B, Bv, 0.6, 2.0, 3, D, method=method, path="direct")
        wood = update_W(X, B, Bv, 0.6, 2.0, 3, D, method=method, path="woodbury")
        np.testing.assert_allclose(wood, direct, rtol=1e-7, atol=1e-9 * np.abs(direct).max())

    def test_constrained_is_feasible(self):
        rng = np.random.default_rng(1)
        X, B, Bv, D = random_block(rng, 10, 20, 3)
        W = update_W(X, B, Bv, 0.5, 2.0, 3, D)
        P = W.T @ X
        np.testing.assert_allclose(P @ P.T, np.eye(3), atol=1e-9)

    def test_constrained_beats_other_feasible_points(self):
        rng = np.random.default_rng(2)
        X, B, Bv, D = random_block(rng, 12, 18, 3)
        lr = 0.5**2
        W = update_W(X, B, Bv, 0.5, 2.0, 3, D)
        best = w_surrogate(X, W, B, Bv, lr, D)
        G = X @ X.T
        for _ in range(200):
            Q = rng.normal(size=(12, 3))
            # re-orthonormalise in the X X^T metric
            L = np.linalg.cholesky(Q.T @ G @ Q)
            Q = Q @ np.linalg.inv(L).T
            assert best <= w_surrogate(X, Q, B, Bv, lr, D) + 1e-10

    def test_regression_stationarity(self):
        rng = np.random.default_rng(3)
        X, B, Bv, D = random_block(rng, 9, 15, 2)
        W = update_W(X, B, Bv, 0.7, 3.0, 2, D, method="regression")
        N = np.eye(15) - B - Bv
        Y = smallest_eigvecs(N @ N.T, 2)
        lhs = (X @ X.T + np.diag(0.7**3 * D)) @ W
        np.testing.assert_allclose(lhs, X @ Y, atol=1e-10)

    def test_rank_deficient_view(self):
        rng = np.random.default_rng(4)
        X = np.outer(rng.normal(size=6), rng.normal(size=10))
        W = update_W(X, np.zeros((10, 10)), np.zeros((10, 10)), 0.5, 2.0, 3, np.ones(6))
        assert np.all(np.isfinite(W))
        assert np.count_nonzero(np.linalg.norm(W, axis=0) > 0) == 1

    def test_bad_path(self):
        with pytest.raises(ValueError):
            update_W(np.eye(3), np.zeros((3, 3)), np.zeros((3, 3)), 0.5, 2.0, 1, np.ones(3), path="lu")


class TestStationarity:
    @pytest.mark.parametrize("seed", range(10))
    def test_update_B(self, seed):
        rng = np.random.default_rng(seed)
        n, V = rng.integers(3, 15), 2
        views = [rng.normal(size=(rng.integers(3, 10), n)) for _ in range(V)]
        Ws = [rng.normal(size=(X.shape[0], 2)) for X in views]
        Bvs = [rng.uniform(0, 1 / n, size=(n, n)) for _ in range(V)]
        S = np.vstack([rng.dirichlet(np.ones(n)) for _ in range(n)])
        L = complement_laplacian(S)
        D = rng.uniform(0.1, 3, size=n)
        B = update_B(views, Ws, Bvs, L, 0.3, 0.2, D)
        I = np.eye(n)
        res = sum(X.T @ W @ W.T @ X @ (B + Bv - I) for X, W, Bv in zip(views, Ws, Bvs))
        res += 0.3 * L @ B + 0.2 * np.diag(D) @ B
        assert np.abs(res).max() < 1e-8

    @pytest.mark.parametrize("seed", range(10))
    def test_update_B_v(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = rng.integers(3, 15)
        X = rng.normal(size=(rng.integers(3, 10), n))
        W = rng.normal(size=(X.shape[0], 2))
        B = rng.uniform(0, 1 / n, size=(n, n))
        L = laplacian(knn_graph(X, min(3, n - 1)))
        D = rng.uniform(0.1, 3, size=n)
        Bv = update_B_v(X, W, B, L, 0.3, 0.6, 2.0, D)
        Z = X.T @ W @ W.T @ X
        res = Z @ (B + Bv - np.eye(n)) + 0.3 * L @ Bv + 0.36 * np.diag(D) @ Bv
        assert np.abs(res).max() < 1e-8


class TestObjective:
    @pytest.mark.parametrize("variant", ["full", "no-graph", "no-consensus"])
    def test_matches_naive_evaluator(self, variant):
        ds = small_data(n=12, dims=(5, 7))
        hp = Hyperparams(c=2, k=3, max_iter=3)
        state, _ = fit_variant(ds, hp, variant)
        total, terms = objective(state, ds.views, hp)
        np.testing.assert_allclose(total, naive_objective(state, ds.views, hp, variant), rtol=1e-10)
        if variant == "no-graph":
            assert terms["diversity"] == terms["view_graph"] == terms["graph_fit"] == 0.0
        if variant == "no-consensus":
            assert terms["penalty_B"] == terms["diversity"] == 0.0


class TestFit:
    @pytest.mark.parametrize("variant", ["full", "no-graph", "no-consensus"])
    @pytest.mark.parametrize("seed", [0, 1])
    def test_monotone_descent(self, variant, seed):
        ds = small_data(seed=seed)
        _, trace = fit_variant(ds, Hyperparams(c=3, seed=seed, max_iter=40), variant)
        obj = trace.objectives
        assert np.all(np.diff(obj) <= 1e-6 * np.abs(obj[:-1]))

    def test_trace_layout(self):
        _, trace = fit(small_data(), Hyperparams(c=3, max_iter=5))
        assert trace.n_iter <= 5
        assert np.isnan(trace.records[0]["rel_change"])
        assert [r["iteration"] for r in trace.records] == list(range(1, trace.n_iter + 1))

    def test_stops_on_tolerance(self):
        _, trace = fit(small_data(), Hyperparams(c=3, tol=0.05, max_iter=100))
        assert trace.converged
        assert trace.records[-1]["rel_change"] < 0.05

    def test_deterministic_and_seeded(self):
        ds = small_data()
        a, _ = fit(ds, Hyperparams(c=3, max_iter=5, seed=3))
        b, _ = fit(ds, Hyperparams(c=3, max_iter=5, seed=3))
        c, _ = fit(ds, Hyperparams(c=3, max_iter=5, seed=4))
        np.testing.assert_array_equal(a.B, b.B)
        assert not np.array_equal(a.B, c.B)

    def test_state_shapes_and_weights(self):
        ds = small_data()
        state, _ = fit(ds, Hyperparams(c=3, max_iter=5))
        assert [W.shape for W in state.W] == [(8, 3), (12, 3)]
        for w in (state.lam, state.eta, state.gam):
            assert w.sum() == pytest.approx(1) and np.all(w >= 0)
        np.testing.assert_allclose(state.S.sum(axis=1), 1)

    def test_no_consensus_keeps_B_zero(self):
        state, _ = fit_variant(small_data(), Hyperparams(c=3, max_iter=4), "no-consensus")
        assert not state.B.any()

    def test_input_not_mutated(self):
        views = [np.random.default_rng(0).normal(size=(6, 20)) for _ in range(2)]
        copies = [v.copy() for v in views]
        fit(views, Hyperparams(c=2, max_iter=3))
        for v, c in zip(views, copies):
            np.testing.assert_array_equal(v, c)

    def test_zero_view_stays_finite(self):
        rng = np.random.default_rng(0)
        views = [rng.normal(size=(5, 15)), np.zeros((4, 15))]
        state, trace = fit(views, Hyperparams(c=2, max_iter=5))
        assert np.all(np.isfinite(trace.objectives))
        assert all(np.all(np.isfinite(W)) for W in state.W)

    def test_weight_update_family_shapes(self):
        state, _ = fit(small_data(), Hyperparams(c=3, max_iter=2))
        lam, eta, gam = update_weights(state.W, state.B_v, state.S, state.S_views, 2.0)
        assert lam.shape == eta.shape == gam.shape == (2,)

    def test_non_finite_raises_with_trace(self, monkeypatch):
        import coselect.solver as solver

        monkeypatch.setattr(solver, "objective", lambda *a, **k: (float("nan"), {}))
        with pytest.raises(SolverError) as info:
            fit(small_data(), Hyperparams(c=3, max_iter=3))
        assert info.value.trace.n_iter == 1

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            fit_variant(small_data(), Hyperparams(), "half")
