import numpy as np
import pytest

from phonalign.align import (AlignConfig, AlignmentDiverged, ProjectedSet, TransformPair, align_grad,
                             align_loss, build_projected_sets, decode_knn, decode_knn_batch, load_transform,
                             save_transform, select_seeds, train_alignment)
from phonalign.numkit import ShapeError

from conftest import central_diff, rel_err


def _set(labels, vecs):
    return ProjectedSet(list(labels), np.asarray(vecs, dtype=float), None)


def test_identical_inputs_give_identical_sets(rng):
    V = rng.normal(size=(20, 6))
    A, B = build_projected_sets(V, list("abcdefghijklmnopqrst"), V, list("abcdefghijklmnopqrst"), 3)
    np.testing.assert_allclose(np.abs(A.vectors), np.abs(B.vectors), atol=1e-12)
    np.testing.assert_allclose(A.vectors.mean(axis=0), 0.0, atol=1e-9)


def test_planar_points_preserve_distances(rng):
    pts = rng.normal(size=(3, 2))
    A, _ = build_projected_sets(pts, list("abc"), pts, list("abc"), 2)
    z = (pts - pts.mean(0)) / pts.std(0)
    dz = np.linalg.norm(z[:, None] - z[None], axis=-1)
    dp = np.linalg.norm(A.vectors[:, None] - A.vectors[None], axis=-1)
    np.testing.assert_allclose(dp, dz, atol=1e-8)


def test_k_too_large(rng):
    with pytest.raises(ValueError):
        build_projected_sets(rng.normal(size=(5, 4)), list("abcde"), rng.normal(size=(5, 4)), list("abcde"), 5)


def test_select_seeds_by_frequency():
    labels = ["a"] * 5 + ["b"] * 3 + ["c"]
    s = select_seeds(labels, 2, seed=0)
    assert s.words == ["a", "b"] and labels[s.a_index[0]] == "a" and labels[s.a_index[1]] == "b"
    assert select_seeds(["b", "a", "b", "a"], 1).words == ["a"]
    full = select_seeds(labels, 3, text_labels=["c", "b", "a"])
    assert sorted(full.words) == ["a", "b", "c"] and list(full.b_index) == [2, 1, 0]
    with pytest.raises(ValueError):
        select_seeds(labels, 4)


def test_select_seeds_warns_when_most_tokens_are_seeds():
    with pytest.warns(UserWarning):
        select_seeds(list("abc"), 2)


def test_align_loss_examples():
    I = TransformPair.identity(2)
    A = np.array([[1.0, 0.0]])
    B = np.array([[0.0, 1.0]])
    assert align_loss(I, A, B, 0.5) == 4.0
    X = np.random.default_rng(0).normal(size=(5, 2))
    assert align_loss(I, X, X, 0.5) == 0.0
    T = TransformPair(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))
    fwd = np.sum((B - A @ T.T_ab.T) ** 2) + np.sum((A - B @ T.T_ba.T) ** 2)
    assert align_loss(T, A, B, 0.0) == fwd
    with pytest.raises(ShapeError):
        align_loss(I, np.zeros((2, 3)), np.zeros((2, 3)), 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_align_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    Tab, Tba = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    lam = float(rng.uniform(0, 2))
    d_ab, d_ba = align_grad(TransformPair(Tab, Tba), A, B, lam)
    assert rel_err(d_ab, central_diff(lambda M: align_loss(TransformPair(M, Tba), A, B, lam), Tab)) < 1e-4
    assert rel_err(d_ba, central_diff(lambda M: align_loss(TransformPair(Tab, M), A, B, lam), Tba)) < 1e-4


def test_training_from_optimum_stays_put(rng):
    A = rng.normal(size=(10, 4))
    T, trace = train_alignment(A, A, AlignConfig(k=4, iterations=200))
    assert max(trace) < 1e-20
    assert np.max(np.abs(T.T_ab - np.eye(4))) < 1e-6


def test_training_loss_decreases(rng):
    A, B = rng.normal(size=(20, 5)), rng.normal(size=(20, 5))
    _, trace = train_alignment(A, B, AlignConfig(k=5, iterations=1001))
    assert trace[1000] <= trace[0]


def test_divergence_is_reported(rng):
    A = rng.normal(size=(5, 3)) * 1e200
    with pytest.raises(AlignmentDiverged, match="learning rate"):
        train_alignment(A, -A, AlignConfig(k=3, iterations=3, lr=1e10))


def test_decode_cosine_example():
    B = _set(["cat", "dog"], [[1.0, 0.0], [0.0, 1.0]])
    (res,) = decode_knn(np.array([0.9, 0.1]), TransformPair.identity(2), B, 1)
    assert res[0] == "cat" and res[1] == pytest.approx(0.9 / np.sqrt(0.82), abs=1e-12)
    assert abs(res[1] - 0.99388) < 1e-5


def test_decode_exact_match_and_full_ranking(rng):
    vecs = rng.normal(size=(6, 3))
    B = _set([f"w{i}" for i in range(6)], vecs)
    top = decode_knn(vecs[3], TransformPair.identity(3), B, 1)[0]
    assert top[0] == "w3" and top[1] == pytest.approx(1.0)
    full = decode_knn(rng.normal(size=3), TransformPair.identity(3), B, 6)
    assert sorted(w for w, _ in full) == sorted(B.labels)
    assert all(a[1] >= b[1] for a, b in zip(full, full[1:]))


def test_decode_ties_break_lexicographically():
    B = _set(["b", "a", "c"], [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert [w for w, _ in decode_knn(np.array([1.0, 0.0]), TransformPair.identity(2), B, 2)] == ["a", "b"]


def test_decode_errors():
    B = _set(["a"], [[1.0, 0.0]])
    with pytest.raises(ValueError, match="zero norm"):
        decode_knn(np.zeros(2), TransformPair.identity(2), B, 1)
    with pytest.raises(ValueError):
        decode_knn(np.ones(2), TransformPair.identity(2), B, 2)
    with pytest.raises(ShapeError):
        decode_knn_batch(np.ones((1, 3)), TransformPair.identity(2), B, 1)


def test_transform_round_trip(tmp_path, rng):
    T = TransformPair(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    save_transform(tmp_path / "t.txt", T, 0.5, 10)
    back = load_transform(tmp_path / "t.txt")
    assert np.array_equal(back.T_ab, T.T_ab) and np.array_equal(back.T_ba, T.T_ba)
