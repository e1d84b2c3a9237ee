import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from shapemetric.coding import Standardization, ViewFeatures, assemble_view
from shapemetric.mfamml import (
    MetricModel,
    MultiViewMetricLearner,
    TrainConfig,
    assemble_pv,
    build_graphs,
    centering_matrix,
    constraint_matrix,
    fused_distance,
    fused_distance_matrix,
    hsic,
    inner_product_kernel,
    joint_objective,
    load_model,
    mfa_init,
    ratio_objective,
    save_model,
    trace_ratio_solve,
    train_alternating,
)


def make_view(matrix, labels, name="v"):
    """View from an (n_dims, N) matrix without re-standardizing."""
    feats = [matrix[:, i] for i in range(matrix.shape[1])]
    return assemble_view(feats, labels, name=name)


def gaussian_views(seed=0, n_per_class=12, n_classes=3, dim=6, n_views=2):
    """Rotated copies of the same separated Gaussian classes."""
    rng = np.random.default_rng(seed)
    centers = 6.0 * rng.normal(size=(n_classes, dim))
    base = []
    labels = []
    for c in range(n_classes):
        base.append(centers[c] + rng.normal(size=(n_per_class, dim)))
        labels += [f"c{c}"] * n_per_class
    base = np.concatenate(base, axis=0)  # (N, dim)

    views = []
    for v in range(n_views):
        rot, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        views.append(make_view((base @ rot.T).T, labels, name=f"view{v}"))
    return views


def random_psd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T


def random_orthonormal_frame(rng, C, d):
    """Random W with W^T C W = I."""
    chol = np.linalg.cholesky(C)
    q, _ = np.linalg.qr(rng.normal(size=(C.shape[0], d)))
    return np.linalg.solve(chol.T, q)


# --- graphs -------------------------------------------------------------------


def test_build_graphs_two_by_two():
    X = np.array([[0.0, 0.1, 5.0, 5.1]])
    view = make_view(X, ["a", "a", "b", "b"])
    g = build_graphs(view, k1=1, k2=1)
    expected = np.zeros((4, 4))
    expected[0, 1] = expected[1, 0] = 1
    expected[2, 3] = expected[3, 2] = 1
    np.testing.assert_array_equal(g.intrinsic, expected)
    np.testing.assert_allclose(g.intrinsic_laplacian.sum(axis=1), 0.0, atol=1e-14)


def test_build_graphs_complete_within_class():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(3, 9))
    labels = ["a"] * 4 + ["b"] * 5
    g = build_graphs(make_view(X, labels), k1=8, k2=2)
    same = np.array(labels)[:, None] == np.array(labels)[None, :]
    np.fill_diagonal(same, False)
    np.testing.assert_array_equal(g.intrinsic, same.astype(float))


def test_build_graphs_penalty_shortest_pair():
    X = np.array([[0.0, 1.0, 10.0, 11.0]])
    view = make_view(X, ["a", "a", "b", "b"])
    g = build_graphs(view, k1=1, k2=1)
    expected = np.zeros((4, 4))
    expected[1, 2] = expected[2, 1] = 1  # the 1 <-> 10 pair
    np.testing.assert_array_equal(g.penalty, expected)


def test_build_graphs_label_coherence():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(4, 20))
    labels = rng.choice(["a", "b", "c"], size=20).tolist()
    while min(labels.count(c) for c in "abc") < 2:
        labels = rng.choice(["a", "b", "c"], size=20).tolist()
    g = build_graphs(make_view(X, labels), k1=3, k2=5)
    lab = np.array(labels)
    same = lab[:, None] == lab[None, :]
    assert np.all(g.intrinsic[~same] == 0)
    assert np.all(g.penalty[same] == 0)
    assert np.all(np.diag(g.intrinsic) == 0) and np.all(np.diag(g.penalty) == 0)
    np.testing.assert_array_equal(g.intrinsic, g.intrinsic.T)
    np.testing.assert_array_equal(g.penalty, g.penalty.T)


def test_graph_laplacians_psd():
    views = gaussian_views(seed=5)
    g = build_graphs(views[0], k1=3, k2=4)
    for L in (g.intrinsic_laplacian, g.penalty_laplacian):
        eigs = np.linalg.eigvalsh(L)
        assert eigs.min() >= -1e-10 * max(eigs.max(), 1.0)
        np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-12)


def test_build_graphs_rejects_singletons():
    X = np.zeros((2, 3)) + np.arange(3)
    with pytest.raises(ValueError):
        view = make_view(X, ["a", "a", "b"])  # ViewFeatures already rejects
        build_graphs(view, 1, 1)


# --- hsic ---------------------------------------------------------------------


def test_hsic_zero_kernel():
    rng = np.random.default_rng(0)
    K = random_psd(rng, 6)
    assert hsic(K, np.zeros((6, 6))) == 0.0


def test_hsic_identity_two_samples():
    assert hsic(np.eye(2), np.eye(2)) == pytest.approx(1.0, abs=1e-15)


def test_hsic_self_nonnegative_and_symmetric():
    rng = np.random.default_rng(7)
    for _ in range(10):
        Ka, Kb = random_psd(rng, 8), random_psd(rng, 8)
        assert hsic(Ka, Ka) >= 0.0
        assert hsic(Ka, Kb) == hsic(Kb, Ka)  # exact, by construction


def test_hsic_size_mismatch():
    with pytest.raises(ValueError):
        hsic(np.eye(3), np.eye(4))
    with pytest.raises(ValueError):
        hsic(np.eye(1), np.eye(1))


def test_centering_annihilates_constants():
    for n in (2, 5, 17):
        H = centering_matrix(n)
        assert np.abs(H @ np.ones(n)).max() <= 1e-14


def test_hsic_invariant_to_constant_shift():
    rng = np.random.default_rng(8)
    Ka, Kb = random_psd(rng, 7), random_psd(rng, 7)
    base = hsic(Ka, Kb)
    for c in rng.normal(size=3):
        shifted = hsic(Ka + c * np.ones((7, 7)), Kb)
        assert shifted == pytest.approx(base, rel=1e-10, abs=1e-10)


# --- per-view solves ------------------------------------------------------------


def raw_view(matrix, labels, name="v"):
    """ViewFeatures without z-scoring (identity standardization)."""
    matrix = np.asarray(matrix, dtype=float)
    std = Standardization(np.zeros(matrix.shape[0]), np.ones(matrix.shape[0]))
    return ViewFeatures(matrix, name, np.asarray(labels), std)


def test_mfa_init_aligns_with_class_mean_difference():
    rng = np.random.default_rng(1)
    mean_a, mean_b = np.array([0.0, 0.0]), np.array([10.0, 4.0])
    pts = np.concatenate([
        mean_a + 0.2 * rng.normal(size=(30, 2)),
        mean_b + 0.2 * rng.normal(size=(30, 2)),
    ])
    labels = ["a"] * 30 + ["b"] * 30
    view = raw_view(pts.T, labels)
    g = build_graphs(view, k1=5, k2=20)
    w = mfa_init(view, g, d=1, ridge=1e-6)[:, 0]

    # independent oracle: plain eigensolve of inv(constraint) @ target
    X = view.matrix
    C = X @ g.intrinsic_laplacian @ X.T + 1e-6 * np.eye(2)
    B = X @ g.penalty_laplacian @ X.T
    eigvals, eigvecs = np.linalg.eig(np.linalg.inv(C) @ B)
    oracle = np.real(eigvecs[:, np.argmax(np.real(eigvals))])
    cos_oracle = np.abs(w @ oracle) / (np.linalg.norm(w) * np.linalg.norm(oracle))
    assert cos_oracle == pytest.approx(1.0, abs=1e-8)

    diff = mean_b - mean_a
    cos = np.abs(w @ diff) / (np.linalg.norm(w) * np.linalg.norm(diff))
    assert np.degrees(np.arccos(min(cos, 1.0))) < 5.0


def test_mfa_init_alignment_on_circle_classes():
    # identical point rings make the within-class cycle scatter exactly
    # isotropic, so the learned direction must track the mean difference
    mean_a, mean_b = np.array([0.0, 0.0]), np.array([10.0, 4.0])
    theta = 2 * np.pi * np.arange(24) / 24
    circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    pts = np.concatenate([mean_a + circle, mean_b + circle])
    labels = ["a"] * 24 + ["b"] * 24
    view = raw_view(pts.T, labels)
    g = build_graphs(view, k1=2, k2=6)
    w = mfa_init(view, g, d=1, ridge=1e-6)[:, 0]
    diff = mean_b - mean_a
    cos = np.abs(w @ diff) / (np.linalg.norm(w) * np.linalg.norm(diff))
    assert np.degrees(np.arccos(min(cos, 1.0))) < 5.0


def test_mfa_init_finite_with_ridge():
    views = gaussian_views(seed=11, n_per_class=4, dim=10)
    g = build_graphs(views[0], k1=2, k2=3)
    w = mfa_init(views[0], g, d=4, ridge=1e-6)
    assert np.all(np.isfinite(w))


def test_mfa_init_rejects_large_d():
    views = gaussian_views(seed=12, dim=5)
    g = build_graphs(views[0], k1=2, k2=3)
    with pytest.raises(ValueError, match="exceeds"):
        mfa_init(views[0], g, d=6, ridge=1e-6)


def test_assemble_pv_lambda_zero():
    views = gaussian_views(seed=13)
    graphs = [build_graphs(v, 3, 4) for v in views]
    W = [mfa_init(v, g, 2, 1e-6) for v, g in zip(views, graphs)]
    P = assemble_pv(views, W, graphs, 0, lam=0.0)
    X = views[0].matrix
    expected = X @ graphs[0].penalty_laplacian @ X.T
    np.testing.assert_allclose(P, 0.5 * (expected + expected.T), atol=0, rtol=0)


def test_assemble_pv_single_view_has_no_coupling():
    views = gaussian_views(seed=14, n_views=1)
    graphs = [build_graphs(views[0], 3, 4)]
    W = [mfa_init(views[0], graphs[0], 2, 1e-6)]
    P0 = assemble_pv(views, W, graphs, 0, lam=0.0)
    P1 = assemble_pv(views, W, graphs, 0, lam=5.0)
    np.testing.assert_array_equal(P0, P1)


def test_assemble_pv_matches_term_oracle():
    views = gaussian_views(seed=15, n_views=3, dim=5)
    graphs = [build_graphs(v, 2, 3) for v in views]
    W = [mfa_init(v, g, 2, 1e-6) for v, g in zip(views, graphs)]
    lam = 0.7
    for v in range(3):
        P = assemble_pv(views, W, graphs, v, lam)
        X = views[v].matrix
        n = X.shape[1]
        H = np.eye(n) - np.ones((n, n)) / n
        expected = X @ graphs[v].penalty_laplacian @ X.T
        for w in range(3):
            if w == v:
                continue
            Kw = views[w].matrix.T @ W[w] @ W[w].T @ views[w].matrix
            expected = expected + lam * (X @ H @ Kw @ H @ X.T)
        expected = 0.5 * (expected + expected.T)
        np.testing.assert_allclose(P, expected, atol=1e-10)


def test_trace_ratio_solve_2x2():
    W = trace_ratio_solve(np.diag([2.0, 1.0]), np.eye(2), d=1)
    np.testing.assert_allclose(np.abs(W), [[1.0], [0.0]], atol=1e-12)
    assert ratio_objective(W, np.diag([2.0, 1.0]), np.eye(2)) == pytest.approx(2.0)


def test_trace_ratio_solve_p_equals_c():
    rng = np.random.default_rng(16)
    C = random_psd(rng, 5) + 5 * np.eye(5)
    W = trace_ratio_solve(C.copy(), C, d=2)
    assert ratio_objective(W, C, C) == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(W.T @ C @ W, np.eye(2), atol=1e-10)


def test_trace_ratio_solve_beats_random_frames():
    rng = np.random.default_rng(17)
    for _ in range(10):
        n = int(rng.integers(3, 12))
        d = int(rng.integers(1, min(4, n) + 1))
        P = random_psd(rng, n)
        C = random_psd(rng, n) + n * np.eye(n)
        W = trace_ratio_solve(P, C, d)
        best = ratio_objective(W, P, C)
        for _ in range(200):
            R = random_orthonormal_frame(rng, C, d)
            assert ratio_objective(R, P, C) <= best + 1e-10


def test_trace_ratio_solve_rejects_indefinite_constraint():
    with pytest.raises(ValueError):
        trace_ratio_solve(np.eye(2), np.diag([1.0, -1.0]), d=1)


# --- training --------------------------------------------------------------------


def test_train_single_view_is_mfa_init():
    views = gaussian_views(seed=20, n_views=1)
    cfg = TrainConfig(d=2, lam=1.0, k1=3, k2=4)
    model = train_alternating(views, cfg)
    g = build_graphs(views[0], 3, 4)
    expected = mfa_init(views[0], g, 2, cfg.ridge)
    np.testing.assert_array_equal(model.projections[0], expected)
    assert len(model.history) == 1 and model.converged


def test_train_lambda_zero_decouples():
    views = gaussian_views(seed=21, n_views=3)
    cfg = TrainConfig(d=2, lam=0.0, k1=3, k2=4)
    model = train_alternating(views, cfg)
    assert len(model.history) == 1 and model.converged
    for v, view in enumerate(views):
        g = build_graphs(view, 3, 4)
        np.testing.assert_array_equal(
            model.projections[v], mfa_init(view, g, 2, cfg.ridge)
        )


def test_train_rotated_views_converge():
    views = gaussian_views(seed=22, n_views=2)
    cfg = TrainConfig(d=3, lam=1.0, k1=3, k2=6, max_iters=50, tol=1e-4)
    model = train_alternating(views, cfg)
    assert model.converged
    assert len(model.history) <= 50


def test_train_update_improves_ratio():
    views = gaussian_views(seed=23, n_views=2)
    cfg = TrainConfig(d=3, lam=1.0, k1=3, k2=6)
    deltas = []
    train_alternating(views, cfg,
                      update_callback=lambda s, v, b, a: deltas.append(a - b))
    assert deltas and all(delta >= -1e-10 for delta in deltas)


def test_train_metrics_psd():
    views = gaussian_views(seed=24, n_views=2)
    model = train_alternating(views, TrainConfig(d=3, lam=1.0, k1=3, k2=6))
    for v in range(model.n_views):
        eigs = np.linalg.eigvalsh(model.metric(v))
        assert eigs.min() >= -1e-10 * eigs.max()


def test_train_deterministic():
    views = gaussian_views(seed=25, n_views=2)
    cfg = TrainConfig(d=2, lam=1.0, k1=3, k2=5)
    m1 = train_alternating(views, cfg)
    m2 = train_alternating(views, cfg)
    for a, b in zip(m1.projections, m2.projections):
        np.testing.assert_array_equal(a, b)
    assert m1.history == m2.history


def test_train_rejects_misaligned_views():
    views = gaussian_views(seed=26, n_views=2)
    bad = make_view(views[1].matrix[:, :-2], list(views[1].labels[:-2]), name="bad")
    with pytest.raises(ValueError, match="sample count"):
        train_alternating([views[0], bad], TrainConfig(d=2))


def test_joint_objective_matches_handmade():
    views = gaussian_views(seed=27, n_views=2, dim=4)
    graphs = [build_graphs(v, 2, 3) for v in views]
    W = [mfa_init(v, g, 2, 1e-6) for v, g in zip(views, graphs)]
    lam = 0.5
    total = 0.0
    n = views[0].n_samples
    H = np.eye(n) - np.ones((n, n)) / n
    for v in range(2):
        X = views[v].matrix
        total += np.trace(W[v].T @ X @ graphs[v].penalty_laplacian @ X.T @ W[v])
        for w in range(2):
            if w != v:
                Kw = inner_product_kernel(views[w].matrix, W[w])
                total += lam * np.trace(W[v].T @ X @ H @ Kw @ H @ X.T @ W[v])
    assert joint_objective(views, W, graphs, lam) == pytest.approx(total, rel=1e-12)


# --- fused distance ---------------------------------------------------------------


def identity_model(dim=2):
    return MetricModel(
        projections=(np.eye(dim),),
        view_names=("v0",),
        config=TrainConfig(d=dim),
        standardizations=(Standardization(np.zeros(dim), np.ones(dim)),),
        history=(0.0,),
    )


def test_fused_distance_identity_is_sq_euclidean():
    model = identity_model(2)
    assert fused_distance(model, [np.array([1.0, 0.0])], [np.array([0.0, 1.0])]) == 2.0


def test_fused_distance_self_zero_symmetric_nonnegative():
    views = gaussian_views(seed=30, n_views=2)
    model = train_alternating(views, TrainConfig(d=2, lam=1.0, k1=3, k2=5))
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = [rng.normal(size=v.n_dims) for v in views]
        b = [rng.normal(size=v.n_dims) for v in views]
        assert fused_distance(model, a, a) == 0.0
        d_ab = fused_distance(model, a, b)
        assert d_ab >= 0.0
        assert d_ab == fused_distance(model, b, a)


def test_fused_distance_matrix_matches_scalar():
    views = gaussian_views(seed=31, n_views=2)
    model = train_alternating(views, TrainConfig(d=2, lam=1.0, k1=3, k2=5))
    mats = [v.matrix[:, :5] for v in views]
    D = fused_distance_matrix(model, mats, mats)
    for i in range(5):
        for j in range(5):
            a = [m[:, i] for m in mats]
            b = [m[:, j] for m in mats]
            assert D[i, j] == pytest.approx(fused_distance(model, a, b), abs=1e-9)


def test_fused_distance_missing_view():
    model = identity_model(2)
    with pytest.raises(ValueError, match="views"):
        fused_distance(model, [], [np.zeros(2)])


# --- persistence and estimator ------------------------------------------------------


def test_model_roundtrip(tmp_path):
    views = gaussian_views(seed=32, n_views=2)
    model = train_alternating(views, TrainConfig(d=2, lam=0.5, k1=3, k2=5))
    save_model(model, tmp_path / "model")
    again = load_model(tmp_path / "model")
    assert again.view_names == model.view_names
    assert again.config == model.config
    assert again.history == model.history
    assert again.converged == model.converged
    for a, b in zip(again.projections, model.projections):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(again.standardizations, model.standardizations):
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.scale, b.scale)


def test_estimator_fit_transform_roundtrip():
    rng = np.random.default_rng(33)
    X1 = np.concatenate([rng.normal(size=(10, 4)), 5 + rng.normal(size=(10, 4))])
    X2 = np.concatenate([rng.normal(size=(10, 6)), -5 + rng.normal(size=(10, 6))])
    y = ["a"] * 10 + ["b"] * 10
    est = MultiViewMetricLearner(n_components=2, lam=1.0, k1=3, k2=4)
    est.fit([X1, X2], y)
    Z = est.transform([X1, X2])
    assert Z.shape == (20, 4)
    D = est.pairwise_distance([X1, X2])
    assert D.shape == (20, 20)
    np.testing.assert_allclose(D, D.T, atol=1e-9)
    assert np.all(np.diag(D) <= 1e-9)


def test_estimator_not_fitted():
    est = MultiViewMetricLearner()
    with pytest.raises(NotFittedError):
        est.transform([np.zeros((3, 2))])


def test_estimator_sklearn_clone():
    est = MultiViewMetricLearner(n_components=7, lam=0.3)
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(d=0)
    with pytest.raises(ValueError):
        TrainConfig(lam=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(tol=0.0)
