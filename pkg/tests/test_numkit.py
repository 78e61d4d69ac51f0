import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonalign import _kernels
from phonalign._kernels import _gru_py
from phonalign.numkit import (AdamState, ContractError, GRUParams, ShapeError, Tape, adam_step,
                              gru_forward, init_gru, load_tsv, pca_fit, pca_project, pca_reconstruct,
                              read_blocks, save_tsv, write_blocks, zero_gru)
from phonalign.numkit import tape as tp
from phonalign.numkit.gru import bigru_final, pad_batch

from conftest import central_diff, rel_err


# ---- GRU -------------------------------------------------------------------

def test_gru_zero_weights_is_zero_fixed_point(rng):
    p = zero_gru(5, 4)
    out = gru_forward(p, rng.normal(size=(7, 5)), np.zeros(4))
    assert out.shape == (7, 4)
    assert np.all(out == 0.0)


def test_gru_empty_sequence_keeps_h0(rng):
    p = init_gru(rng, 3, 4)
    h0 = rng.normal(size=4)
    t = Tape()
    out, hs = gru_forward(p, np.zeros((0, 3)), h0, tape=t)
    assert out.shape == (0, 4)
    np.testing.assert_array_equal(hs.value[-1, 0], h0)


def test_gru_shape_errors(rng):
    p = init_gru(rng, 3, 4)
    with pytest.raises(ShapeError):
        gru_forward(p, np.zeros((2, 5)), np.zeros(4))
    with pytest.raises(ShapeError):
        gru_forward(p, np.zeros((2, 3)), np.zeros(5))


def test_gru_matches_explicit_cell_equations(rng):
    p = init_gru(rng, 3, 4, scale=0.5)
    x = rng.normal(size=(5, 3))
    h = rng.normal(size=4)
    out = gru_forward(p, x, h)
    H = 4
    sig = lambda a: 1 / (1 + np.exp(-a))
    for t in range(5):
        z = sig(x[t] @ p.W[:, :H] + h @ p.U[:, :H] + p.b[:H])
        r = sig(x[t] @ p.W[:, H:2 * H] + h @ p.U[:, H:2 * H] + p.b[H:2 * H])
        c = np.tanh(x[t] @ p.W[:, 2 * H:] + (r * h) @ p.U[:, 2 * H:] + p.b[2 * H:])
        h = (1 - z) * h + z * c
        np.testing.assert_allclose(out[t], h, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gru_input_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = init_gru(rng, 3, 5, scale=0.5)
    x0 = rng.normal(size=(6, 3))
    h0 = rng.normal(size=5)
    w = rng.normal(size=(6, 5))

    def f(x):
        return float(np.sum(w * gru_forward(p, x, h0)))

    t = Tape()
    xv = t.param("x", x0[:, None, :])
    hs = tp.gru_sequence(xv, h0[None], p.W, p.U, p.b)
    loss = tp.weighted_sum(hs[1:, 0, :], w)
    g = t.backward(loss)["x"][:, 0, :]
    assert rel_err(g, central_diff(f, x0)) < 1e-4


def test_gru_weight_gradients_with_mask_match_finite_differences(rng):
    D, H = 3, 4
    p = init_gru(rng, D, H, scale=0.5)
    seqs = [rng.normal(size=(n, D)) for n in (4, 2, 3)]
    x, mask, lengths = pad_batch(seqs)
    w = rng.normal(size=(3, 2 * H))

    def loss_of(weights):
        t = Tape()
        pv = t.params(weights)
        fwd = {"W": pv["f.W"], "U": pv["f.U"], "b": pv["f.b"]}
        bwd = {"W": pv["b.W"], "U": pv["b.U"], "b": pv["b.b"]}
        out = bigru_final(t.const(x), mask, lengths, fwd, bwd)
        return t, tp.weighted_sum(out, w)

    weights = {}
    weights.update(p.as_dict("f"))
    weights.update(init_gru(rng, D, H, scale=0.5).as_dict("b"))
    t, loss = loss_of(weights)
    grads = t.backward(loss)
    for name in ("f.U", "b.W", "b.b"):
        def f(arr, name=name):
            ww = dict(weights)
            ww[name] = arr
            return float(loss_of(ww)[1].value)
        assert rel_err(grads[name], central_diff(f, weights[name])) < 1e-4, name


def test_bigru_padding_does_not_change_embedding(rng):
    D, H = 3, 4
    wf, wb = init_gru(rng, D, H, 0.5), init_gru(rng, D, H, 0.5)
    s = rng.normal(size=(3, D))

    def emb(seqs):
        t = Tape()
        x, m, L = pad_batch(seqs)
        f = {"W": t.const(wf.W), "U": t.const(wf.U), "b": t.const(wf.b)}
        b = {"W": t.const(wb.W), "U": t.const(wb.U), "b": t.const(wb.b)}
        return bigru_final(t.const(x), m, L, f, b).value

    alone = emb([s])[0]
    padded = emb([s, rng.normal(size=(7, D))])[0]
    np.testing.assert_allclose(alone, padded, atol=1e-14)
    # backward half equals a forward pass over the reversed sequence
    np.testing.assert_allclose(alone[H:], gru_forward(wb, s[::-1], np.zeros(H))[-1], atol=1e-14)


def test_compiled_and_numpy_kernels_agree(rng):
    T, B, H = 6, 4, 5
    xw = rng.normal(size=(T, B, 3 * H)) * 2
    mask = (rng.random((T, B)) > 0.3).astype(float)
    h0 = rng.normal(size=(B, H))
    U = rng.normal(size=(H, 3 * H)) * 0.4
    ref = _gru_py.gru_seq_forward(xw, mask, h0, U)
    got = _kernels.gru_seq_forward(xw, mask, h0, U)
    for a, b in zip(ref, got):
        np.testing.assert_allclose(a, b, atol=1e-13)
    d = rng.normal(size=(T + 1, B, H))
    for a, b in zip(_gru_py.gru_seq_backward(d, mask, *ref, U), _kernels.gru_seq_backward(d, mask, *got, U)):
        np.testing.assert_allclose(a, b, atol=1e-12)


# ---- tape ----------------------------------------------------------------------

def test_backward_sum_gives_ones(rng):
    t = Tape()
    v = t.param("v", rng.normal(size=6))
    g = t.backward(tp.total(v))
    np.testing.assert_array_equal(g["v"], np.ones(6))


@pytest.mark.parametrize("seed", range(3))
def test_backward_quadratic_form_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    W0, x = rng.normal(size=(4, 3)), rng.normal(size=(3, 1))

    def f(W):
        return float(np.sum((W @ x) ** 2))

    t = Tape()
    W = t.param("W", W0)
    loss = tp.total(tp.square(tp.matmul(W, x)))
    assert rel_err(t.backward(loss)["W"], central_diff(f, W0)) < 1e-4


def test_unused_parameter_gets_exact_zero(rng):
    t = Tape()
    a = t.param("a", rng.normal(size=3))
    t.param("unused", rng.normal(size=(2, 2)))
    g = t.backward(tp.total(tp.square(a)))
    assert np.all(g["unused"] == 0.0) and g["unused"].shape == (2, 2)


def test_non_scalar_loss_is_contract_error(rng):
    t = Tape()
    a = t.param("a", rng.normal(size=3))
    with pytest.raises(ContractError):
        t.backward(tp.square(a))


def test_composite_ops_gradient(rng):
    X0 = rng.normal(size=(5, 4))
    W0 = rng.normal(size=(4, 3))
    b0 = rng.normal(size=3)
    tgt = rng.random((5, 1))

    def build(X, W, b):
        t = Tape()
        Xv, Wv, bv = t.param("X", X), t.param("W", W), t.param("b", b)
        h = tp.tanh(tp.linear(Xv, Wv, bv))
        h2 = tp.concat([tp.sigmoid(h), tp.absolute(h[1:3])], axis=0)
        d = tp.row_distance(h2[:3], h2[4:7])
        logit = tp.reshape(tp.total(tp.relu(h)) * d, (3, 1))
        loss = tp.add(tp.bce_with_logits(logit, tgt[:3]), tp.masked_mse(h, np.ones((5, 3)), tgt))
        return t, loss

    t, loss = build(X0, W0, b0)
    g = t.backward(loss)
    for name, arr, fn in (("X", X0, lambda v: build(v, W0, b0)), ("W", W0, lambda v: build(X0, v, b0)),
                          ("b", b0, lambda v: build(X0, W0, v))):
        num = central_diff(lambda v: float(fn(v)[1].value), arr)
        assert rel_err(g[name], num) < 1e-4, name


def test_tape_replays_in_reverse_order():
    t = Tape()
    a = t.param("a", np.array(2.0))
    b = tp.mul(a, a)
    c = tp.mul(b, a)
    g = t.backward(c)
    assert g["a"] == pytest.approx(12.0)


# ---- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    st_ = AdamState()
    p = {"w": np.array([1.0, -2.0])}
    st_.m["w"] = np.array([0.5, 0.5])
    st_.v["w"] = np.array([1.0, 1.0])
    new, st_ = adam_step(p, {"w": np.zeros(2)}, st_)
    # moments decay; a non-zero first moment still moves the parameter
    np.testing.assert_allclose(st_.m["w"], [0.45, 0.45])
    np.testing.assert_allclose(st_.v["w"], [0.999, 0.999])
    fresh, _ = adam_step(p, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(fresh["w"], p["w"])


def test_adam_first_step_moves_by_lr():
    new, st_ = adam_step({"w": np.array(0.0)}, {"w": np.array(1.0)}, AdamState())
    # m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
    assert abs(float(new["w"]) - (-1e-4)) < 1e-7
    assert st_.step == 1


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState())


def test_adam_is_deterministic(rng):
    g = [rng.normal(size=(3, 3)) for _ in range(5)]

    def run():
        p, s = {"w": np.ones((3, 3))}, AdamState(lr=0.01)
        for gi in g:
            p, s = adam_step(p, {"w": gi}, s)
        return p["w"]

    assert np.array_equal(run(), run())


# ---- PCA ----------------------------------------------------------------------

def test_pca_diagonal_example():
    m = pca_fit(np.array([[1.0, 1.0], [-1.0, -1.0], [2.0, 2.0]]), 1)
    np.testing.assert_allclose(np.abs(m.components[0]), [1 / np.sqrt(2)] * 2, atol=1e-12)
    full = pca_fit(np.array([[1.0, 1.0], [-1.0, -1.0], [2.0, 2.0]]), 2)
    assert full.explained_variance[1] == pytest.approx(0.0, abs=1e-12)


def test_pca_axis_aligned_is_signed_permutation():
    # points +-sqrt(d) on each axis: zero mean, unit variance, exactly diagonal covariance
    d = 4
    data = np.vstack([np.sqrt(d) * np.eye(d), -np.sqrt(d) * np.eye(d)])
    m = pca_fit(data, d)
    np.testing.assert_allclose(m.mean, 0.0, atol=1e-15)
    np.testing.assert_allclose(m.std, 1.0)
    # brute-force oracle: eigen-solve of the covariance
    w, _ = np.linalg.eigh(data.T @ data / len(data))
    np.testing.assert_allclose(m.explained_variance, w[::-1], atol=1e-12)
    P = m.components
    assert np.array_equal(np.abs(P), np.abs(np.round(P)))
    np.testing.assert_array_equal(np.abs(P).sum(axis=0), np.ones(d))
    np.testing.assert_array_equal(np.abs(P).sum(axis=1), np.ones(d))
    v = np.arange(1.0, d + 1)
    np.testing.assert_allclose(np.sort(np.abs(pca_project(m, v))), v)


def test_pca_full_rank_round_trip_is_lossless(rng):
    data = rng.normal(size=(30, 5)) @ rng.normal(size=(5, 5))
    m = pca_fit(data, 5)
    z = (data - m.mean) / m.std
    np.testing.assert_allclose(pca_reconstruct(m, pca_project(m, data)), z, atol=1e-8)


def test_pca_errors(rng):
    with pytest.raises(ValueError):
        pca_fit(rng.normal(size=(5, 3)), 4)
    with pytest.raises(ValueError):
        pca_fit(rng.normal(size=(5, 3)), 0)
    with pytest.raises(ValueError):
        pca_fit(rng.normal(size=(1, 3)), 1)


def test_pca_zero_variance_dimension_gets_unit_std(rng):
    data = np.column_stack([rng.normal(size=10), np.full(10, 3.0)])
    m = pca_fit(data, 1)
    assert m.std[1] == 1.0
    assert np.all(np.isfinite(pca_project(m, data)))


def test_pca_project_mean_is_zero(rng):
    data = rng.normal(size=(20, 4))
    m = pca_fit(data, 3)
    np.testing.assert_allclose(pca_project(m, m.mean), 0.0, atol=1e-12)


def test_pca_projection_variance_equals_explained_variance(rng):
    data = rng.normal(size=(50, 6)) @ rng.normal(size=(6, 6))
    m = pca_fit(data, 4)
    proj = pca_project(m, data)
    np.testing.assert_allclose(proj.var(axis=0), m.explained_variance, atol=1e-6)


def test_pca_identity_model_is_identity(rng):
    from phonalign.numkit import PCAModel
    m = PCAModel(np.zeros(3), np.ones(3), np.eye(3), np.ones(3))
    v = rng.normal(size=3)
    np.testing.assert_array_equal(pca_project(m, v), v)
    with pytest.raises(ShapeError):
        pca_project(m, np.zeros(4))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 30), d=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_pca_invariants(n, d, seed):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(n, d)) * rng.uniform(0.1, 5, size=d)
    k = int(rng.integers(1, d + 1))
    m = pca_fit(data, k)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(k), atol=1e-8)
    assert np.all(m.explained_variance >= 0)
    assert np.all(np.diff(m.explained_variance) <= 1e-12)
    assert np.all(np.isfinite(pca_project(m, data)))


# ---- TSV ------------------------------------------------------------------------

def test_tsv_round_trip_is_exact(tmp_path, rng):
    m = rng.normal(size=(4, 3)) * 10.0 ** rng.integers(-20, 20, size=(4, 3))
    save_tsv(tmp_path / "m.tsv", m)
    assert np.array_equal(load_tsv(tmp_path / "m.tsv"), m)


def test_blocks_round_trip(tmp_path, rng):
    arrays = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=5), "c": np.array(1.5)}
    with open(tmp_path / "x", "w") as f:
        write_blocks(f, arrays)
    with open(tmp_path / "x") as f:
        back = read_blocks(f.readlines())
    for k in arrays:
        assert np.array_equal(back[k], arrays[k]) and back[k].shape == arrays[k].shape
