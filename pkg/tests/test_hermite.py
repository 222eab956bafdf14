import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from nilspec.dual import block_form, sample_lambda0, zeta
from nilspec.hermite import (HermiteTruncation, QuadratureError, RepOperator, group_element_defects,
                             hermite_functions, mode_matrices, op_group_element, op_P, op_Q,
                             op_sublaplacian, op_vector, op_W, op_Wbar, spectral_projection,
                             t_operator_check, truncated_spectrum, zeta_diagonal)
from nilspec.lie import GroupPoint, builtin_algebra, dilate

H1 = builtin_algebra("h1")
QUAT = builtin_algebra("quaternionic")
FREE3 = builtin_algebra("free3")


def dense(op):
    return op.toarray() if isinstance(op, RepOperator) else np.asarray(op.todense())


def test_truncation_indexing():
    tr = HermiteTruncation(2, 4)
    assert tr.dim == 16 and tr.index((1, 2)) == 6 and tuple(tr.multi_index(6)) == (1, 2)
    assert tr.alphas().shape == (16, 2)
    assert tr.interior_mask(1).sum() == 9 and tr.interior_mask(2).sum() == 4


def test_hermite_functions_orthonormal():
    x, w = np.polynomial.hermite.hermgauss(80)
    H = hermite_functions(30, x) * np.exp(0.5 * x * x)[:, None]
    G = (H * w[:, None]).T @ H
    assert np.allclose(G, np.eye(30), atol=1e-12)


def test_Q_matrix_element_example():
    bf = block_form(H1, [2.0])
    Q = dense(op_Q(bf, HermiteTruncation(1, 3), 0))
    assert np.isclose(Q[0, 1], 1j)
    # quadrature oracle: <h0, i sqrt(eta) xi h1>
    x, w = np.polynomial.hermite.hermgauss(40)
    h = hermite_functions(3, x) * np.exp(0.5 * x * x)[:, None]
    assert np.isclose(np.sum(w * h[:, 0] * 1j * np.sqrt(2) * x * h[:, 1]), Q[0, 1])


def test_P_parity_and_commutator():
    bf = block_form(H1, [1.7])
    tr = HermiteTruncation(1, 12)
    P, Q = dense(op_P(bf, tr, 0)), dense(op_Q(bf, tr, 0))
    assert P[0, 0] == 0
    C = P @ Q - Q @ P
    idx = np.flatnonzero(tr.interior_mask(1))
    assert np.allclose(C[np.ix_(idx, idx)], 1j * 1.7 * np.eye(idx.size), atol=1e-13)


def test_ladder_examples():
    bf = block_form(H1, [2.0])
    tr = HermiteTruncation(1, 5)
    W = dense(op_W(bf, tr, 0))
    assert np.isclose(W[0, 1], 1.0)
    assert np.allclose(W[:, 0], 0)
    assert np.allclose(W, 0.5 * (dense(op_P(bf, tr, 0)) - 1j * dense(op_Q(bf, tr, 0))), atol=1e-15)
    Wb = dense(op_Wbar(bf, tr, 0))
    assert np.isclose(Wb[1, 0], -1.0)
    with pytest.raises(IndexError):
        op_W(bf, tr, 1)


def test_sublaplacian_examples():
    bf = block_form(H1, [2.0])
    assert np.allclose(dense(op_sublaplacian(bf, None, HermiteTruncation(1, 4))).diagonal(),
                       [2, 6, 10, 14])
    bq = block_form(builtin_algebra("h1xh1"), [1.0, 3.0])
    tr = HermiteTruncation(2, 4)
    assert np.isclose(dense(op_sublaplacian(bq, None, tr))[tr.index((1, 2)), tr.index((1, 2))], 18)
    bfree = block_form(FREE3, [1.0, 0.5, -0.3])
    tr1 = HermiteTruncation(1, 6)
    base = dense(op_sublaplacian(bfree, [0.0], tr1)).diagonal()
    shifted = dense(op_sublaplacian(bfree, [1.0], tr1)).diagonal()
    assert np.allclose(shifted - base, 1.0)
    with pytest.raises(ValueError):
        op_sublaplacian(bfree, [1.0, 2.0], tr1)


@pytest.mark.parametrize("name", ["h1", "free3", "quaternionic", "h1xh1", "random42"])
def test_sublaplacian_from_ladders(name, rng):
    alg = builtin_algebra(name)
    bf = block_form(alg, rng.standard_normal(alg.p))
    nu = rng.standard_normal(bf.k)
    tr = HermiteTruncation(bf.d, 6)
    frame = -sum(dense(op_vector(bf, nu, tr, e)) @ dense(op_vector(bf, nu, tr, e))
                 for e in np.eye(alg.q))
    idx = np.flatnonzero(tr.interior_mask(1))
    ref = dense(op_sublaplacian(bf, nu, tr))
    assert np.allclose(frame[np.ix_(idx, idx)], ref[np.ix_(idx, idx)], atol=1e-12)
    assert np.allclose(zeta_diagonal(bf, tr), [zeta(bf, a) for a in tr.alphas()], rtol=1e-14)


def test_ladder_commutator_relation(rng):
    alg = builtin_algebra("random42")
    lam = sample_lambda0(alg, 1, seed=2)[0]
    bf = block_form(alg, lam)
    tr = HermiteTruncation(bf.d, 8)
    L = dense(op_sublaplacian(bf, None, tr))
    idx = np.flatnonzero(tr.interior_mask(1))
    for j in range(bf.d):
        W = dense(op_W(bf, tr, j))
        R = W @ L - L @ W - 2 * bf.eta[j] * W
        assert np.abs(R[np.ix_(idx, idx)]).max() <= 1e-12


def test_spectral_projection_examples():
    bf = block_form(H1, [1.0])
    tr = HermiteTruncation(1, 6)
    P3 = dense(spectral_projection(bf, tr, 3.0))
    assert np.allclose(P3, np.diag([0, 1, 0, 0, 0, 0]))
    assert not dense(spectral_projection(bf, tr, 2.0)).any()
    bq = block_form(QUAT, [1.0, 0, 0])
    trq = HermiteTruncation(2, 4)
    P4 = dense(spectral_projection(bq, trq, 4.0))
    sel = sorted(np.flatnonzero(P4.diagonal()))
    assert sel == sorted([trq.index((0, 1)), trq.index((1, 0))])
    assert np.array_equal(P4 @ P4, P4) and np.array_equal(P4, P4.conj().T)


def test_truncated_spectrum_complete_eigenspaces():
    bq = block_form(QUAT, [0.0, 1.0, 0.0])
    tr = HermiteTruncation(2, 5)
    for z, idx in truncated_spectrum(bq, tr, depth=1):
        assert np.all(tr.interior_mask(1)[idx])
        assert np.allclose(zeta_diagonal(bq, tr)[idx], z)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.3, 2))
def test_mode_matrices_unitary_interior(p, q, eta):
    M = mode_matrices(eta, p, q, 60)
    cols = M[:, :10]
    assert np.allclose(cols.conj().T @ cols, np.eye(10), atol=1e-9)


def test_group_element_examples():
    bf = block_form(H1, [1.3])
    tr = HermiteTruncation(1, 8)
    e = op_group_element(H1, bf, None, tr, GroupPoint.identity(H1)).toarray()
    assert np.allclose(e, np.eye(8), atol=1e-12)
    c = op_group_element(H1, bf, None, tr, GroupPoint([0, 0], [0.7])).toarray()
    assert np.allclose(c, np.exp(1j * 1.3 * 0.7) * np.eye(8), atol=1e-12)


def test_group_element_dilation_compatibility(rng):
    lam, r = 1.1, 0.6
    tr = HermiteTruncation(1, 10)
    bf, bfr = block_form(H1, [lam]), block_form(H1, [r * r * lam])
    for _ in range(3):
        x = GroupPoint(rng.standard_normal(2), rng.standard_normal(1))
        a = op_group_element(H1, bf, None, tr, dilate(H1, r, x)).toarray()
        b = op_group_element(H1, bfr, None, tr, x).toarray()
        assert np.allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("name", ["h1", "free3", "quaternionic"])
def test_group_element_defects(name, rng):
    alg = builtin_algebra(name)
    bf = block_form(alg, rng.standard_normal(alg.p))
    nu = rng.standard_normal(bf.k)
    tr = HermiteTruncation(bf.d, 6 if bf.d == 1 else 3)
    scale = 0.6 if bf.d == 1 else 0.25
    for _ in range(2):
        x = GroupPoint(scale * rng.standard_normal(alg.q), rng.standard_normal(alg.p))
        y = GroupPoint(scale * rng.standard_normal(alg.q), rng.standard_normal(alg.p))
        d = group_element_defects(alg, bf, nu, tr, x, y)
        assert d["unitarity"] <= 1e-8 and d["homomorphism"] <= 1e-6


def test_group_element_quadrature_error():
    bf = block_form(H1, [1.0])
    with pytest.raises((QuadratureError, ValueError)):
        op_group_element(H1, bf, None, HermiteTruncation(1, 10), GroupPoint([3.0, 3.0], [0]),
                         quad_order=12)


def test_t_operator_examples():
    bf = block_form(H1, [1.0])
    rep = t_operator_check(H1, bf, HermiteTruncation(1, 12), [0.7], 12)
    assert rep["commutator"] <= 1e-10
    assert rep["sandwich"] <= 1e-10 and rep["corollary"] <= 1e-10
    assert rep["sandwich_checked"] > 0


def test_t_operator_requires_omega0():
    bf = block_form(FREE3, [1.0, 0.2, 0.3])
    with pytest.raises(ValueError, match="Omega_0"):
        t_operator_check(FREE3, bf, HermiteTruncation(1, 6), [1.0, 0, 0], 6)


def test_rep_operator_shape_check():
    with pytest.raises(ValueError):
        RepOperator(sp.identity(3, format="csr"), HermiteTruncation(1, 4))
