"""Hermite-basis matrices for the Schroedinger-type representations pi^{lambda, nu}.

The representation space is L^2(R^d) with the orthonormal Hermite basis
``h_alpha``, truncated to ``alpha in {0..N-1}^d`` in lexicographic order (the
first mode is the slowest index).  For a block form ``(eta, P, Q, R)`` the
generators act as

    pi(P_j) = sqrt(eta_j) d/dxi_j,   pi(Q_j) = i sqrt(eta_j) xi_j,
    pi(R_l) = i nu_l,                pi(Z)   = i lambda(Z).

Ladder-type operators are assembled in closed form as sparse matrices.
Group elements are computed by Gauss-Hermite quadrature and come back dense.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_hermite

from .dual import BlockForm, b_matrix, block_form, grad_eta_bracket, grad_eta_fd
from .lie import GroupPoint, StepTwoAlgebra

__all__ = [
    "HermiteTruncation",
    "RepOperator",
    "QuadratureError",
    "hermite_functions",
    "op_P",
    "op_Q",
    "op_W",
    "op_Wbar",
    "op_vector",
    "op_sublaplacian",
    "zeta_diagonal",
    "spectral_projection",
    "truncated_spectrum",
    "mode_matrices",
    "op_group_element",
    "group_element_defects",
    "t_operator_check",
]


class QuadratureError(RuntimeError):
    """Quadrature too coarse: the measured unitarity defect exceeds the threshold."""

    def __init__(self, defect: float, threshold: float, order: int):
        super().__init__(
            f"unitarity defect {defect:.3e} exceeds {threshold:.1e} at quadrature order {order}"
        )
        self.defect = defect
        self.threshold = threshold
        self.order = order


@dataclass(frozen=True)
class HermiteTruncation:
    d: int
    N: int

    def __post_init__(self):
        if self.d < 0 or self.N < 1:
            raise ValueError(f"invalid truncation d={self.d}, N={self.N}")

    @property
    def dim(self) -> int:
        return self.N ** self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    def index(self, alpha) -> int:
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.d:
            raise ValueError(f"multi-index must have length {self.d}")
        return int(np.ravel_multi_index(alpha, self.shape)) if self.d else 0

    def multi_index(self, i: int) -> tuple[int, ...]:
        if not 0 <= i < self.dim:
            raise IndexError(f"flat index {i} outside [0, {self.dim})")
        return tuple(int(a) for a in np.unravel_index(i, self.shape)) if self.d else ()

    def alphas(self) -> np.ndarray:
        """All multi-indices, shape ``(dim, d)``, in basis order."""
        if self.d == 0:
            return np.zeros((1, 0), dtype=int)
        grids = np.indices(self.shape).reshape(self.d, -1)
        return grids.T.copy()

    def interior_mask(self, depth: int = 1) -> np.ndarray:
        """Basis vectors at least ``depth`` ladder steps away from the cut."""
        return np.all(self.alphas() <= self.N - 1 - depth, axis=1)


@dataclass(frozen=True)
class RepOperator:
    """A truncated operator together with its basis and interior mask.

    ``matrix`` is either a dense ndarray or a scipy sparse matrix.
    """

    matrix: object
    trunc: HermiteTruncation
    interior_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.trunc.dim
        if self.matrix.shape != (n, n):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match dimension {n}")
        if self.interior_mask is None:
            object.__setattr__(self, "interior_mask", self.trunc.interior_mask(1))

    def toarray(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    def interior(self, depth: int | None = None) -> np.ndarray:
        mask = self.interior_mask if depth is None else self.trunc.interior_mask(depth)
        idx = np.flatnonzero(mask)
        m = self.matrix
        if sp.issparse(m):
            return m.tocsr()[idx][:, idx].toarray()
        return np.asarray(m)[np.ix_(idx, idx)]

    def __matmul__(self, other: "RepOperator") -> "RepOperator":
        return RepOperator(self.matrix @ other.matrix, self.trunc,
                           self.interior_mask & other.interior_mask)


# ---------------------------------------------------------------------------
# One-mode building blocks


def _lowering(N: int) -> sp.csr_matrix:
    """a h_n = sqrt(n) h_{n-1}."""
    return sp.diags(np.sqrt(np.arange(1, N, dtype=float)), 1, shape=(N, N), format="csr")


def _embed(trunc: HermiteTruncation, j: int, A) -> sp.csr_matrix:
    """``I x .. x A (slot j) x .. x I`` in lexicographic order."""
    out = sp.identity(1, format="csr")
    for m in range(trunc.d):
        out = sp.kron(out, A if m == j else sp.identity(trunc.N, format="csr"), format="csr")
    return out


def _check_mode(bf: BlockForm, trunc: HermiteTruncation, j: int) -> None:
    if trunc.d != bf.d:
        raise ValueError(f"truncation has d={trunc.d} modes but the block form has d={bf.d}")
    if not 0 <= j < bf.d:
        raise IndexError(f"mode index {j} outside [0, {bf.d})")


def op_P(bf: BlockForm, trunc: HermiteTruncation, j: int) -> RepOperator:
    """pi(P_j) = sqrt(eta_j) d/dxi_j  (mode index ``j`` is zero-based)."""
    _check_mode(bf, trunc, j)
    a = _lowering(trunc.N)
    D = (a - a.T) / np.sqrt(2.0)
    return RepOperator((np.sqrt(bf.eta[j]) * _embed(trunc, j, D)).astype(complex), trunc)


def op_Q(bf: BlockForm, trunc: HermiteTruncation, j: int) -> RepOperator:
    """pi(Q_j) = i sqrt(eta_j) xi_j."""
    _check_mode(bf, trunc, j)
    a = _lowering(trunc.N)
    X = (a + a.T) / np.sqrt(2.0)
    return RepOperator(1j * np.sqrt(bf.eta[j]) * _embed(trunc, j, X), trunc)


def op_W(bf: BlockForm, trunc: HermiteTruncation, j: int) -> RepOperator:
    """pi(W_j) h_alpha = sqrt(eta_j / 2) sqrt(alpha_j) h_{alpha - 1_j}."""
    _check_mode(bf, trunc, j)
    A = np.sqrt(bf.eta[j] / 2.0) * _lowering(trunc.N)
    return RepOperator(_embed(trunc, j, A).astype(complex), trunc)


def op_Wbar(bf: BlockForm, trunc: HermiteTruncation, j: int) -> RepOperator:
    """pi(Wbar_j) h_alpha = -sqrt(eta_j / 2) sqrt(alpha_j + 1) h_{alpha + 1_j}."""
    _check_mode(bf, trunc, j)
    A = -np.sqrt(bf.eta[j] / 2.0) * _lowering(trunc.N).T
    return RepOperator(_embed(trunc, j, A.tocsr()).astype(complex), trunc)


def op_vector(bf: BlockForm, nu, trunc: HermiteTruncation, v) -> RepOperator:
    """pi(V) for a first-stratum vector ``v`` given in the ambient orthonormal basis."""
    v = np.asarray(v, dtype=float)
    nu = np.zeros(bf.k) if nu is None else np.asarray(nu, dtype=float)
    if nu.shape != (bf.k,):
        raise ValueError(f"nu must have length k={bf.k}")
    p, q, r = bf.P.T @ v, bf.Q.T @ v, bf.R.T @ v
    m = 1j * float(nu @ r) * sp.identity(trunc.dim, format="csr", dtype=complex)
    for j in range(bf.d):
        m = m + p[j] * op_P(bf, trunc, j).matrix + q[j] * op_Q(bf, trunc, j).matrix
    return RepOperator(m.tocsr(), trunc)


def zeta_diagonal(bf: BlockForm, trunc: HermiteTruncation) -> np.ndarray:
    """zeta(alpha, lambda) for every basis vector, in basis order."""
    if trunc.d != bf.d:
        raise ValueError(f"truncation has d={trunc.d} modes but the block form has d={bf.d}")
    return (2 * trunc.alphas() + 1) @ bf.eta


def op_sublaplacian(bf: BlockForm, nu, trunc: HermiteTruncation) -> RepOperator:
    """pi(-L) = H(lambda) + |nu|^2, diagonal in the Hermite basis."""
    nu = np.zeros(bf.k) if nu is None else np.asarray(nu, dtype=float)
    if nu.shape != (bf.k,):
        raise ValueError(f"nu has length {nu.size}, expected k={bf.k}")
    diag = zeta_diagonal(bf, trunc) + float(nu @ nu)
    return RepOperator(sp.diags(diag.astype(complex), format="csr"), trunc)


def spectral_projection(bf: BlockForm, trunc: HermiteTruncation, zeta: float,
                        tol: float = 1e-9) -> RepOperator:
    """Diagonal 0/1 projection onto span{h_alpha : zeta(alpha) = zeta}."""
    diag = zeta_diagonal(bf, trunc)
    sel = np.abs(diag - zeta) <= tol * max(1.0, abs(zeta))
    return RepOperator(sp.diags(sel.astype(complex), format="csr"), trunc)


def truncated_spectrum(bf: BlockForm, trunc: HermiteTruncation, depth: int = 0,
                       tol: float = 1e-9) -> list[tuple[float, np.ndarray]]:
    """Distinct zeta values among basis vectors with interior depth ``depth``.

    Each entry is ``(zeta, flat indices of the full eigenspace inside the truncation)``.
    Only eigenvalues whose complete eigenspace lies in the interior are returned.
    """
    diag = zeta_diagonal(bf, trunc)
    inner = trunc.interior_mask(depth)
    out = []
    for z in np.unique(np.round(diag[inner], 12)):
        sel = np.flatnonzero(np.abs(diag - z) <= tol * max(1.0, abs(z)))
        if np.all(inner[sel]):
            out.append((float(diag[sel[0]]), sel))
    return out


# ---------------------------------------------------------------------------
# Group elements


def hermite_functions(n: int, x) -> np.ndarray:
    """Normalised Hermite functions ``h_0..h_{n-1}`` at ``x``, shape ``x.shape + (n,)``."""
    x = np.asarray(x, dtype=float)
    return _hermite_polys(n, x) * np.exp(-0.5 * x * x)[..., None]


def _hermite_polys(n: int, x: np.ndarray) -> np.ndarray:
    """``h_m(x) e^{x^2/2}`` by the normalised three-term recurrence."""
    out = np.empty(x.shape + (n,))
    out[..., 0] = np.pi ** -0.25
    if n > 1:
        out[..., 1] = np.sqrt(2.0) * x * out[..., 0]
    for m in range(1, n - 1):
        out[..., m + 1] = (np.sqrt(2.0 / (m + 1)) * x * out[..., m]
                           - np.sqrt(m / (m + 1)) * out[..., m - 1])
    return out


@lru_cache(maxsize=64)
def _gh(order: int):
    x, w = roots_hermite(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def default_quad_order(n: int, s, kappa) -> int:
    reach = float(np.max(np.abs(s), initial=0.0) + np.max(np.abs(kappa), initial=0.0))
    return int(n + 24 + np.ceil(2.0 * reach * np.sqrt(n) + reach**2))


def mode_matrices(eta: float, p, q, n: int, quad_order: int | None = None) -> np.ndarray:
    """One-mode matrices ``M[b, a] = <h_b, U h_a>`` with
    ``U phi(xi) = exp(i eta p q / 2 + i sqrt(eta) q xi) phi(xi + sqrt(eta) p)``.

    ``p`` and ``q`` are arrays of equal shape ``S``; returns shape ``S + (n, n)``.
    The Gaussian weight is factored out around the midpoint ``u = xi + s/2`` so
    that the integrand is polynomial times ``exp(-u^2)`` times a bounded phase.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    s = np.sqrt(eta) * p
    kap = np.sqrt(eta) * q
    if quad_order is None:
        quad_order = default_quad_order(n, s, kap)
    x, w = _gh(int(quad_order))
    lo = _hermite_polys(n, x - 0.5 * s[..., None])        # S + (Q, n)
    hi = _hermite_polys(n, x + 0.5 * s[..., None])
    phase = np.exp(1j * kap[..., None] * (x - 0.5 * s[..., None])) * w   # S + (Q,)
    M = np.matmul(np.swapaxes(lo * phase[..., None], -1, -2), hi)
    pre = np.exp(-0.25 * s * s + 0.5j * eta * p * q)
    return M * pre[..., None, None]


def _pad(n: int, s: float, kap: float) -> int:
    beta2 = 0.5 * (s * s + kap * kap)
    return int(np.ceil(beta2 + 8.0 * np.sqrt(beta2 * (n + beta2)) + 20))


def _coordinates(alg: StepTwoAlgebra, bf: BlockForm, lam, x: GroupPoint):
    v = np.asarray(x.v, dtype=float)
    return bf.P.T @ v, bf.Q.T @ v, bf.R.T @ v, float(np.asarray(lam) @ x.z)


def op_group_element(alg: StepTwoAlgebra, bf: BlockForm, nu, trunc: HermiteTruncation,
                     x: GroupPoint, quad_order: int | None = None,
                     threshold: float = 1e-8) -> RepOperator:
    """Matrix of pi^{lambda, nu}(x) in the truncated Hermite basis.

    The representation is realised as

        pi(x) phi(xi) = exp(i [lambda(z) + nu(r) + sum_j sqrt(eta_j) q_j xi_j
                               + 1/2 sum_j eta_j p_j q_j]) phi(xi + D^{1/2} p)

    with ``p = P^T v``, ``q = Q^T v``, ``r = R^T v``.  This is the exponential
    of the generator assignment above and so is unitary and multiplicative.
    The operator is a tensor product over modes; each factor is computed in a
    padded basis so that the interior unitarity defect can be measured, and a
    ``QuadratureError`` is raised when it exceeds ``threshold``.
    """
    if trunc.d != bf.d:
        raise ValueError(f"truncation has d={trunc.d} modes but the block form has d={bf.d}")
    nu = np.zeros(bf.k) if nu is None else np.asarray(nu, dtype=float)
    if nu.shape != (bf.k,):
        raise ValueError(f"nu must have length k={bf.k}")
    p, q, r, lz = _coordinates(alg, bf, bf.lam, x)
    N = trunc.N
    out = np.ones((1, 1), dtype=complex)
    for j in range(bf.d):
        s, kap = np.sqrt(bf.eta[j]) * p[j], np.sqrt(bf.eta[j]) * q[j]
        big = N + _pad(N, s, kap)
        order = quad_order if quad_order is not None else default_quad_order(big, s, kap)
        if order < big:
            raise ValueError(f"quadrature order {order} below padded basis size {big}")
        M = mode_matrices(bf.eta[j], p[j], q[j], big, order)
        cols = M[:, : max(N - 1, 1)]
        defect = float(np.max(np.abs(cols.conj().T @ cols - np.eye(cols.shape[1]))))
        if defect > threshold:
            raise QuadratureError(defect, threshold, order)
        out = np.kron(out, M[:N, :N])
    out *= np.exp(1j * (lz + float(nu @ r)))
    return RepOperator(out, trunc)


def group_element_defects(alg: StepTwoAlgebra, bf: BlockForm, nu, trunc: HermiteTruncation,
                          x: GroupPoint, y: GroupPoint) -> dict:
    """Interior unitarity and homomorphism defects for a pair of points.

    Products are formed in a padded basis and then cut back to the interior
    of ``trunc`` so that truncation leakage does not pollute the comparison.
    """
    from .lie import group_product

    pads = []
    for pt in (x, y, group_product(alg, x, y)):
        p, q, _, _ = _coordinates(alg, bf, bf.lam, pt)
        pads.extend(_pad(trunc.N, np.sqrt(e) * a, np.sqrt(e) * b)
                    for e, a, b in zip(bf.eta, p, q))
    big = HermiteTruncation(trunc.d, trunc.N + max(pads, default=0))
    A = op_group_element(alg, bf, nu, big, x).toarray()
    Bm = op_group_element(alg, bf, nu, big, y).toarray()
    C = op_group_element(alg, bf, nu, big, group_product(alg, x, y)).toarray()
    # indices of the small interior inside the big basis
    small = np.array([big.index(a) for a in trunc.alphas()[trunc.interior_mask(1)]])
    U = A[:, small]
    unit = np.max(np.abs(U.conj().T @ U - np.eye(small.size)))
    hom = np.max(np.abs((A @ Bm)[np.ix_(small, small)] - C[np.ix_(small, small)]))
    return {"unitarity": float(unit), "homomorphism": float(hom)}


# ---------------------------------------------------------------------------
# Tensor-product identities


def _frob(m) -> float:
    if sp.issparse(m):
        return float(spla.norm(m)) if m.nnz else 0.0
    return float(np.linalg.norm(m))


def t_operator_check(alg: StepTwoAlgebra, bf: BlockForm, trunc: HermiteTruncation,
                     lam_prime, N_prime: int, zeta_tol: float = 1e-9) -> dict:
    """Residuals of the commutator and sandwich identities for T.

    The first tensor leg is pi' = pi^{lambda'} on its own truncation of size
    ``N_prime`` per mode; the second leg is pi^{lambda} on ``trunc``.  With
    ``T = (i/2) (B(lambda)^{-1} V) . pi(V)`` the report contains

    ``T_routes``
        difference between T assembled from ``B(lambda)^{-1}`` directly and
        from the ladder form ``sum_j (Wbar_j x pi(W_j) - W_j x pi(Wbar_j)) / eta_j``;
    ``commutator``
        ``[T, id x pi(-L)] - V . pi(V)``;
    ``sandwich``
        worst residual over zeta of
        ``P_zeta (V . pi(V)) T P_zeta - 1/4 L' - 1/4 sum (2 alpha_j + 1) lambda'([P_j, Q_j])``;
    ``corollary``
        the same with ``lambda'(grad zeta)`` taken from finite differences of eta.

    Residuals are Frobenius norms on interior blocks (an upper bound for the
    operator norm).  The sandwich identities are evaluated only for zeta whose
    eigenspace is a single multi-index; ``sandwich_skipped`` counts the others.
    """
    if bf.k != 0:
        raise ValueError(f"lambda must lie in Omega_0 (B(lambda) invertible); radical has dim {bf.k}")
    lam_prime = np.asarray(lam_prime, dtype=float)
    bfp = block_form(alg, lam_prime)
    tp = HermiteTruncation(bfp.d, N_prime)
    n1, n2 = tp.dim, trunc.dim
    I1 = sp.identity(n1, format="csr", dtype=complex)
    I2 = sp.identity(n2, format="csr", dtype=complex)
    basis = np.eye(alg.q)
    first = [op_vector(bfp, np.zeros(bfp.k), tp, e).matrix for e in basis]
    second = [op_vector(bf, None, trunc, e).matrix for e in basis]

    VpiV = sum(sp.kron(a, b, format="csr") for a, b in zip(first, second))

    Binv = np.linalg.inv(b_matrix(alg, bf.lam))
    T_direct = 0.5j * sum(Binv[b, a] * sp.kron(first[b], second[a], format="csr")
                          for a in range(alg.q) for b in range(alg.q) if Binv[b, a] != 0.0)
    T = None
    for j in range(bf.d):
        Pj, Qj = bf.P[:, j], bf.Q[:, j]
        Wp = 0.5 * (op_vector(bfp, np.zeros(bfp.k), tp, Pj).matrix
                    - 1j * op_vector(bfp, np.zeros(bfp.k), tp, Qj).matrix)
        Wbp = 0.5 * (op_vector(bfp, np.zeros(bfp.k), tp, Pj).matrix
                     + 1j * op_vector(bfp, np.zeros(bfp.k), tp, Qj).matrix)
        term = (sp.kron(Wbp, op_W(bf, trunc, j).matrix)
                - sp.kron(Wp, op_Wbar(bf, trunc, j).matrix)) / bf.eta[j]
        T = term if T is None else T + term
    T = T.tocsr()

    def block(mask1, idx2):
        rows = (np.flatnonzero(mask1)[:, None] * n2 + np.asarray(idx2)[None, :]).ravel()
        return rows

    in1 = tp.interior_mask(2)
    in2 = np.flatnonzero(trunc.interior_mask(2))
    sel = block(in1, in2)

    report = {"T_routes": _frob((T - T_direct).tocsr()[sel][:, sel])}

    L2 = sp.kron(I1, op_sublaplacian(bf, None, trunc).matrix, format="csr")
    comm = (T @ L2 - L2 @ T - VpiV).tocsr()
    report["commutator"] = _frob(comm[sel][:, sel])

    Lp = sum(m @ m for m in first)
    M = (VpiV @ T).tocsr()
    brackets = lam_prime @ grad_eta_bracket(alg, bf)
    grad_fd = grad_eta_fd(alg, bf.lam, h=1e-3, richardson=True)
    gz_prime = lam_prime @ grad_fd
    alphas = trunc.alphas()
    worst_s, worst_c, used, skipped = 0.0, 0.0, 0, 0
    for z, idx in truncated_spectrum(bf, trunc, depth=2, tol=zeta_tol):
        if idx.size != 1:
            skipped += 1
            continue
        used += 1
        a = alphas[idx[0]]
        w = 2 * a + 1
        s = block(in1, idx)
        lhs = M[s][:, s]
        base = 0.25 * Lp.tocsr()[np.flatnonzero(in1)][:, np.flatnonzero(in1)]
        eye = sp.identity(int(in1.sum()), format="csr")
        rhs_s = base + 0.25 * float(w @ brackets) * eye
        rhs_c = base + 0.25 * float(w @ gz_prime) * eye
        worst_s = max(worst_s, _frob((lhs - rhs_s).tocsr()))
        worst_c = max(worst_c, _frob((lhs - rhs_c).tocsr()))
    report.update(sandwich=worst_s, corollary=worst_c,
                  sandwich_checked=used, sandwich_skipped=skipped)
    return report

