"""Finitely supported operator-valued measures on ``M x G^``.

An atom sits at a point ``x`` of the nilmanifold (exponential coordinates of
a representative) and at either a character ``omega`` or a Schrodinger-type
representation ``(lambda, nu)`` truncated to ``N`` Hermite levels per mode.
It carries a weight ``gamma >= 0`` and a positive semidefinite matrix
``Gamma`` (``1 x 1`` for characters).

Atoms are canonicalized to ``Tr Gamma = 1`` with the trace folded into the
weight, which picks one representative of ``(Gamma, gamma) ~ (Gamma / f, f gamma)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

from .dual import BlockForm, StratumError, block_form, classify_lambda, grad_eta_bracket
from .hermite import HermiteTruncation, op_sublaplacian, spectral_projection, zeta_diagonal
from .lie import LatticeSpec, StepTwoAlgebra, builtin_algebra, product_coords

__all__ = [
    "MeasureAtom",
    "OperatorValuedMeasure",
    "character_atom",
    "schrodinger_atom",
    "pair",
    "total_variation",
    "canonicalize",
    "project_zeta",
    "measure_zeta_values",
    "split_g1_ginf",
    "omega_v_generator",
    "nu_r_generator",
    "grad_zeta_generator",
    "natural_generator",
    "flow_pushforward",
    "invariance_residual",
    "localization_residual",
    "xy_template_points",
    "polar_omegas",
    "character_template",
    "fit_measure",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1
PSD_TOL = 1e-10


@dataclass(frozen=True)
class MeasureAtom:
    """One atom ``gamma delta_(x, pi)`` with operator weight ``Gamma``.

    Exactly one of ``omega`` (character) or ``lam`` (infinite-dimensional
    representation, with ``nu`` and per-mode truncation ``N``) is set.
    """

    x: np.ndarray
    weight: float
    Gamma: np.ndarray
    omega: np.ndarray | None = None
    lam: np.ndarray | None = None
    nu: np.ndarray | None = None
    N: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "Gamma", np.atleast_2d(np.asarray(self.Gamma, dtype=complex)))
        if (self.omega is None) == (self.lam is None):
            raise ValueError("an atom carries either a character omega or a lambda")
        if self.weight < 0 or not np.isfinite(self.weight):
            raise ValueError(f"atom weight must be finite and >= 0, got {self.weight}")
        G = self.Gamma
        if G.shape[0] != G.shape[1]:
            raise ValueError("Gamma must be square")
        if self.omega is not None:
            object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
            if G.shape != (1, 1):
                raise ValueError("character atoms carry a 1x1 Gamma")
        else:
            object.__setattr__(self, "lam", np.atleast_1d(np.asarray(self.lam, dtype=float)))
            if self.N is None:
                raise ValueError("infinite-dimensional atoms need a truncation level N")
        scale = max(1.0, float(np.max(np.abs(G))))
        if np.max(np.abs(G - G.conj().T)) > PSD_TOL * scale:
            raise ValueError("Gamma must be Hermitian")
        if np.min(np.linalg.eigvalsh(G)) < -PSD_TOL * scale:
            raise ValueError("Gamma must be positive semidefinite")

    @property
    def is_character(self) -> bool:
        return self.omega is not None

    def trace(self) -> float:
        return float(np.trace(self.Gamma).real)

    def trace_norm(self) -> float:
        return float(np.sum(np.abs(np.linalg.eigvalsh(self.Gamma))))


def character_atom(x, omega, weight: float = 1.0) -> MeasureAtom:
    return MeasureAtom(x, float(weight), np.ones((1, 1)), omega=omega)


def schrodinger_atom(x, lam, Gamma, N: int, weight: float = 1.0, nu=None) -> MeasureAtom:
    return MeasureAtom(x, float(weight), Gamma, lam=lam, nu=nu, N=int(N))


@dataclass(frozen=True)
class OperatorValuedMeasure:
    alg: StepTwoAlgebra
    atoms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        for a in self.atoms:
            if a.x.shape != (self.alg.dim,):
                raise ValueError(f"atom point has shape {a.x.shape}, expected ({self.alg.dim},)")
            if a.omega is not None and a.omega.shape != (self.alg.q,):
                raise ValueError("character frequency must lie in the dual of the first stratum")
            if a.lam is not None and a.lam.shape != (self.alg.p,):
                raise ValueError("lambda must lie in the dual of the centre")

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def _forms(self) -> dict:
        return {}

    def block_form(self, atom: MeasureAtom) -> BlockForm:
        key = tuple(atom.lam)
        if key not in self._forms:
            self._forms[key] = block_form(self.alg, atom.lam)
        return self._forms[key]

    def truncation(self, atom: MeasureAtom) -> HermiteTruncation:
        return HermiteTruncation(self.block_form(atom).d, atom.N)

    def nu(self, atom: MeasureAtom) -> np.ndarray:
        k = self.block_form(atom).k
        return np.zeros(k) if atom.nu is None else np.asarray(atom.nu, dtype=float)

    def symbol_point(self, atom: MeasureAtom) -> np.ndarray:
        """Point passed to symbol fields: the polarized chart on H1, exponential coordinates otherwise."""
        if self.alg.q == 2 and self.alg.p == 1:
            return LatticeSpec.to_polarized(atom.x)
        return atom.x

    def trace_marginal(self, phi: Callable) -> float:
        """``sum weight Tr(Gamma) phi(x)`` for ``phi`` on polarized coordinates ``(X, Y, T)``."""
        total = 0.0
        for a in self.atoms:
            total += a.weight * a.trace() * complex(phi(*self.symbol_point(a))).real
        return float(total)

    def with_atoms(self, atoms) -> "OperatorValuedMeasure":
        return OperatorValuedMeasure(self.alg, tuple(atoms))

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        out = []
        for a in self.atoms:
            d = {"x": a.x.tolist(), "weight": a.weight}
            if a.is_character:
                d["rep"] = {"kind": "character", "omega": a.omega.tolist()}
            else:
                d["rep"] = {"kind": "schrodinger", "lambda": a.lam.tolist(),
                            "nu": None if a.nu is None else np.asarray(a.nu).tolist(), "N": a.N}
                d["Gamma"] = {"re": a.Gamma.real.tolist(), "im": a.Gamma.imag.tolist()}
            out.append(d)
        return {"schema_version": SCHEMA_VERSION, "algebra": self.alg.name, "atoms": out}

    @classmethod
    def from_json(cls, data: dict, alg: StepTwoAlgebra | None = None) -> "OperatorValuedMeasure":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported measure schema {data.get('schema_version')!r}")
        if alg is None:
            alg = builtin_algebra(data.get("algebra") or "h1")
        atoms = []
        for d in data["atoms"]:
            rep = d["rep"]
            if rep["kind"] == "character":
                atoms.append(character_atom(d["x"], rep["omega"], d["weight"]))
            elif rep["kind"] == "schrodinger":
                G = np.asarray(d["Gamma"]["re"]) + 1j * np.asarray(d["Gamma"]["im"])
                atoms.append(schrodinger_atom(d["x"], rep["lambda"], G, rep["N"], d["weight"],
                                              rep.get("nu")))
            else:
                raise ValueError(f"unknown representation kind {rep['kind']!r}")
        return cls(alg, tuple(atoms))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ---------------------------------------------------------------------------
# Pairing and norms


def pair(measure: OperatorValuedMeasure, field) -> complex:
    """``sum weight Tr(sigma(x, pi) Gamma)`` over the atoms, in atom order."""
    total = 0.0 + 0.0j
    for a in measure.atoms:
        x = measure.symbol_point(a)
        if a.is_character:
            total += a.weight * complex(field.char(x, a.omega)) * a.Gamma[0, 0]
        else:
            bf = measure.block_form(a)
            S = field.op(x, bf, measure.nu(a), measure.truncation(a)).toarray()
            total += a.weight * np.trace(S @ a.Gamma)
    return complex(total)


def total_variation(measure: OperatorValuedMeasure) -> float:
    return float(sum(a.weight * a.trace_norm() for a in measure.atoms))


def canonicalize(measure: OperatorValuedMeasure) -> OperatorValuedMeasure:
    """Normalize ``Tr Gamma = 1`` per atom (where positive) and drop null atoms."""
    atoms = []
    for a in measure.atoms:
        t = a.trace()
        if t <= 0 or a.weight == 0:
            continue
        atoms.append(replace(a, weight=a.weight * t, Gamma=a.Gamma / t))
    return measure.with_atoms(atoms)


# ---------------------------------------------------------------------------
# Spectral decomposition


def project_zeta(measure: OperatorValuedMeasure, zeta: float, tol: float = 1e-9
                 ) -> OperatorValuedMeasure:
    """Replace each infinite-dimensional ``Gamma`` by ``P_zeta Gamma P_zeta``; drop characters.

    Atoms whose projected ``Gamma`` vanishes are removed.
    """
    atoms = []
    for a in measure.atoms:
        if a.is_character:
            continue
        P = spectral_projection(measure.block_form(a), measure.truncation(a), zeta, tol)
        d = P.matrix.diagonal().real
        G = a.Gamma * d[:, None] * d[None, :]
        if np.any(G != 0):
            atoms.append(replace(a, Gamma=G))
    return measure.with_atoms(atoms)


def measure_zeta_values(measure: OperatorValuedMeasure, tol: float = 1e-9) -> list[float]:
    """Sorted distinct ``zeta`` values carried by the infinite-dimensional atoms."""
    vals: list[float] = []
    for a in measure.atoms:
        if a.is_character:
            continue
        diag = zeta_diagonal(measure.block_form(a), measure.truncation(a))
        support = np.abs(a.Gamma).sum(axis=0) + np.abs(a.Gamma).sum(axis=1) > 0
        for z in diag[support]:
            if not any(abs(z - v) <= tol * max(1.0, abs(v)) for v in vals):
                vals.append(float(z))
    return sorted(vals)


def split_g1_ginf(measure: OperatorValuedMeasure):
    """``(character part, infinite-dimensional part)``."""
    chars = [a for a in measure.atoms if a.is_character]
    infs = [a for a in measure.atoms if not a.is_character]
    return measure.with_atoms(chars), measure.with_atoms(infs)


def localization_residual(measure: OperatorValuedMeasure) -> float:
    """``sum weight ||pi(L) Gamma + Gamma||_F / sum weight Tr Gamma``.

    For characters ``pi^omega(L) = -|omega|^2``; otherwise ``pi(L)`` is the
    negative of the diagonal ``zeta + |nu|^2``.
    """
    num = den = 0.0
    for a in measure.atoms:
        if a.is_character:
            num += a.weight * abs(1.0 - float(a.omega @ a.omega)) * abs(a.Gamma[0, 0])
        else:
            D = op_sublaplacian(measure.block_form(a), measure.nu(a),
                                measure.truncation(a)).matrix.diagonal().real
            num += a.weight * float(np.linalg.norm((1.0 - D)[:, None] * a.Gamma))
        den += a.weight * a.trace()
    return num / den if den > 0 else 0.0


# ---------------------------------------------------------------------------
# Flows


def omega_v_generator(measure: OperatorValuedMeasure, atom: MeasureAtom) -> np.ndarray:
    """``omega . V`` on character atoms."""
    if not atom.is_character:
        raise StratumError("omega . V is defined on characters only")
    return np.concatenate([atom.omega, np.zeros(measure.alg.p)])


def nu_r_generator(measure: OperatorValuedMeasure, atom: MeasureAtom) -> np.ndarray:
    """``nu . R^lambda`` on infinite-dimensional atoms."""
    if atom.is_character:
        raise StratumError("nu . R is defined on infinite-dimensional atoms only")
    bf = measure.block_form(atom)
    return np.concatenate([bf.R @ measure.nu(atom), np.zeros(measure.alg.p)])


def grad_zeta_generator(measure: OperatorValuedMeasure, atom: MeasureAtom,
                        check_stratum: bool = True) -> np.ndarray:
    """Central field ``grad_lambda zeta(alpha, lambda)`` for the eigenspace carrying ``Gamma``.

    Within an ``eta``-cluster only the occupation ``|alpha_c|`` enters, so the
    gradient uses cluster sums of ``[P_j, Q_j]``.  All basis vectors in the
    support of ``Gamma`` must share these occupations.
    """
    if atom.is_character:
        raise StratumError("grad zeta is defined on infinite-dimensional atoms only")
    alg = measure.alg
    if check_stratum and not classify_lambda(alg, atom.lam).in_lambda0:
        raise StratumError(f"lambda={atom.lam} lies outside Lambda_0; grad zeta undefined")
    bf = measure.block_form(atom)
    trunc = measure.truncation(atom)
    support = np.flatnonzero(np.abs(atom.Gamma).sum(axis=0) + np.abs(atom.Gamma).sum(axis=1) > 0)
    if support.size == 0:
        return np.zeros(alg.dim)
    grads = grad_eta_bracket(alg, bf)                 # (p, d)
    clusters = bf.clusters()
    occ = {tuple(int(trunc.alphas()[i][c].sum()) for c in clusters) for i in support}
    if len(occ) != 1:
        raise StratumError("Gamma mixes eigenvectors that flow in different central directions")
    (occupation,) = occ
    g = np.zeros(alg.p)
    for c, n_c in zip(clusters, occupation):
        g += (2 * n_c + len(c)) * grads[:, c].mean(axis=1)
    return np.concatenate([np.zeros(alg.q), g])


def natural_generator(measure: OperatorValuedMeasure, atom: MeasureAtom) -> np.ndarray:
    """``omega . V`` on characters and ``nu . R + grad zeta`` on infinite-dimensional atoms."""
    if atom.is_character:
        return omega_v_generator(measure, atom)
    return nu_r_generator(measure, atom) + grad_zeta_generator(measure, atom)


def flow_pushforward(measure: OperatorValuedMeasure, generator: Callable, s: float,
                     reduce: bool = True) -> OperatorValuedMeasure:
    """Move every atom's point to ``x exp(s W)`` with ``W = generator(measure, atom)``.

    Representations and ``Gamma`` are unchanged.  On H1 the new point is
    reduced to the unit cube of the polarized chart.
    """
    lattice = LatticeSpec() if (reduce and measure.alg.q == 2 and measure.alg.p == 1) else None
    atoms = []
    for a in measure.atoms:
        w = np.asarray(generator(measure, a), dtype=float)
        x = product_coords(measure.alg, a.x, s * w)
        if lattice is not None:
            x = lattice.reduce(x)
        atoms.append(replace(a, x=x))
    return measure.with_atoms(atoms)


def invariance_residual(measure: OperatorValuedMeasure, generator: Callable, s_grid,
                        tests: Sequence) -> float:
    """``max |pair(push_s measure, sigma) - pair(measure, sigma)|`` over ``s`` and test symbols."""
    base = [pair(measure, t) for t in tests]
    worst = 0.0
    for s in s_grid:
        pushed = flow_pushforward(measure, generator, float(s))
        for t, b in zip(tests, base):
            worst = max(worst, abs(pair(pushed, t) - b))
    return float(worst)


# ---------------------------------------------------------------------------
# Fitting


def xy_template_points(K: int) -> np.ndarray:
    """``(2K+1)^2`` points ``(i, j, 0) / (2K+1)`` (exponential coordinates on H1)."""
    g = np.arange(2 * K + 1) / (2 * K + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pol = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=-1)
    return LatticeSpec.from_polarized(pol)


def polar_omegas(radii, n_angles: int, include_origin: bool = True) -> np.ndarray:
    th = 2 * np.pi * np.arange(n_angles) / n_angles
    pts = [np.array([r * np.cos(t), r * np.sin(t)]) for r in radii for t in th]
    if include_origin:
        pts.insert(0, np.zeros(2))
    return np.array(pts)


def character_template(alg: StepTwoAlgebra, xs, omegas) -> OperatorValuedMeasure:
    """Product template of character atoms (unit weights)."""
    return OperatorValuedMeasure(alg, tuple(character_atom(x, w) for x in xs for w in omegas))


def _char_column(test, X, W) -> np.ndarray:
    """Character values of ``test`` at many atoms, vectorized when the field allows it."""
    try:
        vals = np.asarray(test.char(X, W), dtype=complex)
        if vals.shape == (len(X),):
            return vals
    except (TypeError, ValueError, IndexError):
        pass
    return np.array([complex(test.char(x, w)) for x, w in zip(X, W)])


def fit_measure(template: OperatorValuedMeasure, tests: Sequence, data, drop_tol: float = 0.0):
    """Non-negative least squares for the template weights.

    ``data[j]`` is the observed pairing with ``tests[j]``; the design matrix
    holds the pairing of every template atom (unit weight) with every test.
    Returns ``(measure, relative residual)``; atoms with zero weight are dropped.
    """
    data = np.asarray(data, dtype=complex)
    if len(tests) != data.shape[0]:
        raise ValueError("one observation per test symbol is required")
    A = np.empty((len(tests), len(template.atoms)), dtype=complex)
    chars = [i for i, a in enumerate(template.atoms) if a.is_character]
    others = [i for i, a in enumerate(template.atoms) if not a.is_character]
    if chars:
        X = np.array([template.symbol_point(template.atoms[i]) for i in chars])
        W = np.array([template.atoms[i].omega for i in chars])
        G = np.array([template.atoms[i].Gamma[0, 0] for i in chars])
        for j, t in enumerate(tests):
            A[j, chars] = _char_column(t, X, W) * G
    for i in others:
        unit = template.with_atoms([replace(template.atoms[i], weight=1.0)])
        for j, t in enumerate(tests):
            A[j, i] = pair(unit, t)
    Ar = np.vstack([A.real, A.imag])
    br = np.concatenate([data.real, data.imag])
    w, rnorm = nnls(Ar, br, maxiter=50 * Ar.shape[1])
    atoms = [replace(a, weight=float(wi)) for a, wi in zip(template.atoms, w) if wi > drop_tol]
    scale = float(np.linalg.norm(br))
    return canonicalize(template.with_atoms(atoms)), (rnorm / scale if scale > 0 else rnorm)
