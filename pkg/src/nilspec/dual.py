"""Geometry of the dual of the centre: the skew forms B(lambda) and their block form.

For ``lam`` in the dual of z, ``B(lam)`` is the q x q skew matrix with entries
``lam([V_i, V_j])``.  Its canonical form is an orthonormal basis
``P_1..P_d, Q_1..Q_d, R_1..R_k`` of v with

    B Q_j = eta_j P_j,   B P_j = -eta_j Q_j,   B R_l = 0,

and ``0 < eta_1 <= ... <= eta_d``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lie import StepTwoAlgebra, bracket

__all__ = [
    "BlockForm",
    "Classification",
    "StratumError",
    "b_matrix",
    "block_form",
    "radical_dim",
    "classify_lambda",
    "estimate_generic_strata",
    "cluster_sizes",
    "smooth_frame",
    "grad_eta_bracket",
    "grad_eta_fd",
    "zeta",
    "grad_zeta",
    "minors_rank",
    "sample_lambda0",
]

KERNEL_TOL = 1e-9
CLUSTER_TOL = 1e-6


class StratumError(ValueError):
    """A computation left the stratum (radical dimension or eta multiplicities changed)."""


@dataclass(frozen=True)
class BlockForm:
    lam: np.ndarray
    k: int
    d: int
    eta: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    @property
    def basis(self) -> np.ndarray:
        """Columns ``[P | Q | R]``."""
        return np.hstack([self.P, self.Q, self.R])

    @property
    def multiplicities(self) -> tuple[int, ...]:
        return cluster_sizes(self.eta)

    def clusters(self) -> list[np.ndarray]:
        """Index arrays of the eta clusters, in ascending order of eta."""
        out, start = [], 0
        for m in self.multiplicities:
            out.append(np.arange(start, start + m))
            start += m
        return out

    def residuals(self, alg: StepTwoAlgebra) -> dict:
        B = b_matrix(alg, self.lam)
        basis = self.basis
        return {
            "BQ-etaP": float(np.max(np.abs(B @ self.Q - self.P * self.eta), initial=0.0)),
            "BP+etaQ": float(np.max(np.abs(B @ self.P + self.Q * self.eta), initial=0.0)),
            "BR": float(np.max(np.abs(B @ self.R), initial=0.0)),
            "gram": float(np.max(np.abs(basis.T @ basis - np.eye(alg.q)))),
        }


def b_matrix(alg: StepTwoAlgebra, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1:] != (alg.p,):
        raise ValueError(f"lambda must have length p={alg.p}")
    return np.einsum("...l,lij->...ij", lam, alg.c)


def cluster_sizes(eta, rel_tol: float = CLUSTER_TOL) -> tuple[int, ...]:
    """Sizes of runs of (sorted) values separated by relative gaps above ``rel_tol``."""
    eta = np.asarray(eta, dtype=float)
    if eta.size == 0:
        return ()
    sizes, run = [], 1
    for a, b in zip(eta[:-1], eta[1:]):
        if b - a <= rel_tol * max(abs(b), abs(a)):
            run += 1
        else:
            sizes.append(run)
            run = 1
    sizes.append(run)
    return tuple(sizes)


def _kernel_split(B: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases of the range and kernel of the skew matrix ``B``."""
    _, s, vt = np.linalg.svd(B)
    if s[0] == 0.0:
        return np.zeros((B.shape[0], 0)), np.eye(B.shape[0])
    rank = int(np.sum(s > tol * s[0]))
    if rank % 2:
        raise RuntimeError(f"numerical rank {rank} of a skew matrix is odd; tolerance {tol} is unusable")
    return vt[:rank].T, vt[rank:].T


def _fix_sign(vec: np.ndarray, tol: float = 1e-12) -> float:
    for c in vec:
        if abs(c) > tol:
            return 1.0 if c > 0 else -1.0
    return 1.0


def block_form(alg: StepTwoAlgebra, lam, tol: float = KERNEL_TOL) -> BlockForm:
    """Canonical block form of ``B(lam)``.

    The radical comes from the singular value decomposition (relative cutoff
    ``tol``); the ``eta_j**2`` are eigenvalues of the symmetric matrix ``-B**2``
    restricted to the range.  Inside each eigenspace ``P`` is chosen as the
    normalised projection of the coordinate axis that the eigenspace captures
    best, with first nonzero coordinate positive, and ``Q = -B P / eta``.
    """
    lam = np.asarray(lam, dtype=float)
    B = b_matrix(alg, lam)
    if not np.any(lam):
        raise ValueError("block form is undefined at lambda = 0")
    if not np.any(B):
        raise ValueError("B(lambda) vanishes identically; the algebra bracket is degenerate here")
    rng, ker = _kernel_split(B, tol)
    S = rng.T @ (-(B @ B)) @ rng
    S = 0.5 * (S + S.T)
    w, u = np.linalg.eigh(S)
    w = np.clip(w, 0.0, None)
    vecs = rng @ u  # eigenvectors of -B^2 in v
    eta2_sizes = cluster_sizes(w)
    P_cols, Q_cols, etas = [], [], []
    start = 0
    for size in eta2_sizes:
        if size % 2:
            raise RuntimeError("eigenvalue cluster of -B^2 has odd size; increase the clustering tolerance")
        E = vecs[:, start:start + size]
        eta = float(np.sqrt(np.mean(w[start:start + size])))
        start += size
        remaining = E.copy()
        for _ in range(size // 2):
            proj = remaining @ remaining.T
            norms = np.linalg.norm(proj, axis=0)
            i = int(np.argmax(norms > norms.max() * (1 - 1e-12)))
            p = proj[:, i] / norms[i]
            p = p * _fix_sign(p)
            qv = -(B @ p) / eta
            qv /= np.linalg.norm(qv)
            P_cols.append(p)
            Q_cols.append(qv)
            etas.append(eta)
            pair = np.stack([p, qv], axis=1)
            remaining = remaining - pair @ (pair.T @ remaining)
            # re-orthonormalise the complement
            uu, ss, _ = np.linalg.svd(remaining, full_matrices=False)
            remaining = uu[:, ss > 0.5]
    d = len(etas)
    order = np.argsort(etas, kind="stable")
    P = np.array(P_cols).T[:, order] if d else np.zeros((alg.q, 0))
    Q = np.array(Q_cols).T[:, order] if d else np.zeros((alg.q, 0))
    eta = np.array(etas)[order] if d else np.zeros(0)
    R = ker.copy()
    if R.shape[1]:
        R = np.linalg.qr(R)[0]
        R = R * np.array([_fix_sign(R[:, i]) for i in range(R.shape[1])])
    bf = BlockForm(lam.copy(), ker.shape[1], d, eta, P, Q, R)
    res = bf.residuals(alg)
    scale = max(1.0, float(np.max(np.abs(B))))
    if res["gram"] > 1e-8 or max(res["BQ-etaP"], res["BP+etaQ"]) > 1e-8 * scale:
        raise RuntimeError(f"orthonormalisation of the block form failed: {res}")
    return bf


def radical_dim(alg: StepTwoAlgebra, lam, tol: float = KERNEL_TOL) -> int:
    lam = np.asarray(lam, dtype=float)
    if not np.any(lam):
        raise ValueError("radical dimension is undefined at lambda = 0")
    B = b_matrix(alg, lam)
    s = np.linalg.svd(B, compute_uv=False)
    if s[0] == 0.0:
        return alg.q
    return int(alg.q - np.sum(s > tol * s[0]))


def _random_unit(rng, p: int, n: int) -> np.ndarray:
    x = rng.standard_normal((n, p))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def estimate_generic_strata(alg: StepTwoAlgebra, samples: int = 256, seed: int = 0,
                            tol: float = KERNEL_TOL) -> tuple[int, int]:
    """Sample-based estimate of ``k_0`` and of the maximal number of distinct etas on it.

    Heuristic: both numbers are extrema over random unit ``lam``.
    """
    rng = np.random.default_rng(seed)
    lams = _random_unit(rng, alg.p, samples)
    B = b_matrix(alg, lams)
    s = np.linalg.svd(B, compute_uv=False)
    ks = alg.q - np.sum(s > tol * s[:, :1], axis=1)
    k0 = int(ks.min())
    best = 0
    for row, k in zip(s, ks):
        if k == k0:
            eta = np.sort(row[: alg.q - k0][::2])
            best = max(best, len(cluster_sizes(eta)))
    return k0, best


@dataclass(frozen=True)
class Classification:
    k: int
    in_lambda0: bool
    multiplicities: tuple[int, ...]
    k0_estimate: int
    heuristic: bool = True


def classify_lambda(alg: StepTwoAlgebra, lam, tol: float = KERNEL_TOL,
                    cluster_tol: float = CLUSTER_TOL, samples: int = 256,
                    seed: int = 0) -> Classification:
    """Stratum data of ``lam``; membership of Lambda_0 uses sampled extrema."""
    bf = block_form(alg, lam, tol)
    mult = cluster_sizes(bf.eta, cluster_tol)
    k0, nmax = estimate_generic_strata(alg, samples, seed, tol)
    return Classification(bf.k, bf.k == k0 and len(mult) == nmax, mult, k0)


def minors_rank(alg: StepTwoAlgebra, lam, tol: float = 1e-9) -> int:
    """Largest order of a non-vanishing minor of B(lam) (diagnostic, brute force)."""
    from itertools import combinations

    B = b_matrix(alg, lam)
    scale = max(1.0, float(np.max(np.abs(B))))
    for r in range(alg.q, 0, -1):
        for rows in combinations(range(alg.q), r):
            for cols in combinations(range(alg.q), r):
                if abs(np.linalg.det(B[np.ix_(rows, cols)])) > tol * scale**r:
                    return r
    return 0


def _align(prev: BlockForm, cur: BlockForm, alg: StepTwoAlgebra) -> BlockForm:
    """Rotate ``cur``'s frame inside each eta cluster to best match ``prev``."""
    B = b_matrix(alg, cur.lam)
    P, Q = cur.P.copy(), cur.Q.copy()
    for idx in cur.clusters():
        # complex coordinates w.r.t. the complex structure J = -B/eta (J P = Q)
        C = cur.P[:, idx].T @ prev.P[:, idx] + 1j * (cur.Q[:, idx].T @ prev.P[:, idx])
        W, _, Vh = np.linalg.svd(C)
        U = W @ Vh
        newP = cur.P[:, idx] @ U.real + cur.Q[:, idx] @ U.imag
        eta = cur.eta[idx]
        newQ = -(B @ newP) / eta
        P[:, idx], Q[:, idx] = newP, newQ
    R = cur.R
    if cur.k:
        W, _, Vh = np.linalg.svd(cur.R.T @ prev.R)
        R = cur.R @ (W @ Vh)
    return BlockForm(cur.lam, cur.k, cur.d, cur.eta, P, Q, R)


def smooth_frame(alg: StepTwoAlgebra, path, tol: float = KERNEL_TOL,
                 cluster_tol: float = CLUSTER_TOL) -> list[BlockForm]:
    """Block forms along a path of lambdas with continuously varying frames."""
    path = [np.asarray(l, dtype=float) for l in path]
    if not path:
        return []
    forms = [block_form(alg, path[0], tol)]
    ref = (forms[0].k, cluster_sizes(forms[0].eta, cluster_tol))
    for i, lam in enumerate(path[1:], start=1):
        cur = block_form(alg, lam, tol)
        here = (cur.k, cluster_sizes(cur.eta, cluster_tol))
        if here != ref:
            raise StratumError(
                f"stratum changes on segment {i - 1}->{i}: (k, multiplicities) {ref} -> {here}"
            )
        forms.append(_align(forms[-1], cur, alg))
    return forms


def grad_eta_bracket(alg: StepTwoAlgebra, bf: BlockForm) -> np.ndarray:
    """Columns ``[P_j, Q_j]`` in z, shape ``(p, d)``."""
    if bf.d == 0:
        return np.zeros((alg.p, 0))
    return bracket(alg, bf.P.T, bf.Q.T).T


def _sorted_eta(alg, lam, tol):
    B = b_matrix(alg, lam)
    s = np.linalg.svd(B, compute_uv=False)
    k = alg.q - int(np.sum(s > tol * s[0]))
    eta = np.sort(s[: alg.q - k][::2])
    return k, eta


def grad_eta_fd(alg: StepTwoAlgebra, lam, h: float = 1e-4, tol: float = KERNEL_TOL,
                cluster_tol: float = CLUSTER_TOL, richardson: bool = False) -> np.ndarray:
    """Central differences of the sorted etas along each dual coordinate, shape ``(p, d)``.

    With ``richardson=True`` the steps ``h`` and ``h/2`` are combined to cancel
    the leading ``O(h^2)`` error term.
    """
    lam = np.asarray(lam, dtype=float)
    k, eta = _sorted_eta(alg, lam, tol)
    ref = (k, cluster_sizes(eta, cluster_tol))

    def central(step):
        grad = np.zeros((alg.p, eta.size))
        for l in range(alg.p):
            e = np.zeros(alg.p)
            e[l] = step
            kp, ep = _sorted_eta(alg, lam + e, tol)
            km, em = _sorted_eta(alg, lam - e, tol)
            for tag, kk, ee in (("+", kp, ep), ("-", km, em)):
                if (kk, cluster_sizes(ee, cluster_tol)) != ref:
                    raise StratumError(
                        f"finite-difference stencil point lam{tag}h*e_{l} leaves the stratum")
            grad[l] = (ep - em) / (2 * step)
        return grad

    if not richardson:
        return central(h)
    return (4.0 * central(h / 2) - central(h)) / 3.0


def zeta(bf: BlockForm, alpha) -> float:
    alpha = np.asarray(alpha)
    if alpha.shape != (bf.d,):
        raise ValueError(f"alpha must have length d={bf.d}")
    if np.any(alpha < 0):
        raise ValueError("alpha must be nonnegative")
    return float(np.sum((2 * alpha + 1) * bf.eta))


def grad_zeta(alg: StepTwoAlgebra, bf: BlockForm, alpha) -> np.ndarray:
    alpha = np.asarray(alpha)
    if alpha.shape != (bf.d,):
        raise ValueError(f"alpha must have length d={bf.d}")
    return grad_eta_bracket(alg, bf) @ (2 * alpha + 1).astype(float)


def sample_lambda0(alg: StepTwoAlgebra, n: int, seed: int = 0, h: float = 1e-4,
                   margin: float = 1e-3, max_tries: int = 100000) -> np.ndarray:
    """Random lambdas (Gaussian radius, uniform direction) in Lambda_0.

    Points whose clusters are closer than ``margin`` (relative) or whose
    finite-difference stencil leaves the stratum are rejected.
    """
    rng = np.random.default_rng(seed)
    k0, nmax = estimate_generic_strata(alg, seed=seed)
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not sample enough points of Lambda_0")
        lam = rng.standard_normal(alg.p) * rng.uniform(0.5, 2.0)
        k, eta = _sorted_eta(alg, lam, KERNEL_TOL)
        sizes = cluster_sizes(eta)
        if k != k0 or len(sizes) != nmax:
            continue
        # distinct clusters must be well separated
        reps = np.array([eta[sum(sizes[:i])] for i in range(len(sizes))])
        if len(reps) > 1 and np.min(np.diff(reps) / reps[1:]) < margin:
            continue
        try:
            grad_eta_fd(alg, lam, h)
        except StratumError:
            continue
        out.append(lam)
    return np.array(out)
