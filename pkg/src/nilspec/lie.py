"""Step-two nilpotent Lie algebras and groups in exponential coordinates.

A point of the group is stored as ``(v, z)`` with ``v`` the first-stratum
coordinates and ``z`` the central coordinates, both relative to a fixed
orthonormal basis ``V_1..V_q, Z_1..Z_p``.  The group law is the step-two
Baker-Campbell-Hausdorff product

    (v, z) . (v', z') = (v + v', z + z' + 1/2 [v, v']).

Vectorised helpers (``*_coords``) act on stacked arrays of shape ``(..., q + p)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "StepTwoAlgebra",
    "GroupPoint",
    "LatticeSpec",
    "TruncationError",
    "bracket",
    "group_product",
    "group_inverse",
    "dilate",
    "homogeneous_dimension",
    "left_invariant_flow",
    "periodize",
    "product_coords",
    "inverse_coords",
    "dilate_coords",
    "load_algebra",
    "builtin_algebra",
    "random_algebra",
    "heisenberg_algebra",
    "direct_sum",
    "BUILTIN_ALGEBRAS",
]


class TruncationError(RuntimeError):
    """A truncated sum or integral left a tail above the requested tolerance."""


@dataclass(frozen=True)
class StepTwoAlgebra:
    """Structure constants ``c[l, i, j]`` with ``[V_i, V_j] = sum_l c[l, i, j] Z_l``."""

    q: int
    p: int
    c: np.ndarray
    name: str = ""

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.shape != (self.p, self.q, self.q):
            raise ValueError(
                f"structure constants have shape {c.shape}, expected {(self.p, self.q, self.q)}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("structure constants must be finite")
        if not np.array_equal(c, -np.swapaxes(c, 1, 2)):
            worst = np.max(np.abs(c + np.swapaxes(c, 1, 2)))
            raise ValueError(f"structure constants are not antisymmetric (defect {worst:g})")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.q + self.p

    def bracket_rank(self, tol: float = 1e-10) -> int:
        """Rank of the bracket map; equals ``p`` exactly when z = [v, v]."""
        flat = self.c.reshape(self.p, -1)
        if flat.size == 0:
            return 0
        s = np.linalg.svd(flat, compute_uv=False)
        if s.size == 0 or s[0] == 0.0:
            return 0
        return int(np.sum(s > tol * s[0]))

    def to_json(self) -> dict:
        return {"name": self.name, "q": self.q, "p": self.p, "c": self.c.tolist()}


@dataclass(frozen=True)
class GroupPoint:
    v: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.v, dtype=float)).copy()
        z = np.atleast_1d(np.asarray(self.z, dtype=float)).copy()
        if v.ndim != 1 or z.ndim != 1:
            raise ValueError("GroupPoint coordinates must be vectors")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(z))):
            raise ValueError("GroupPoint coordinates must be finite")
        v.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "z", z)

    @classmethod
    def identity(cls, alg: StepTwoAlgebra) -> "GroupPoint":
        return cls(np.zeros(alg.q), np.zeros(alg.p))

    @classmethod
    def from_coords(cls, alg: StepTwoAlgebra, x) -> "GroupPoint":
        x = np.asarray(x, dtype=float)
        return cls(x[: alg.q], x[alg.q:])

    def coords(self) -> np.ndarray:
        return np.concatenate([self.v, self.z])


def _check_point(alg: StepTwoAlgebra, x: GroupPoint) -> None:
    if x.v.shape != (alg.q,) or x.z.shape != (alg.p,):
        raise ValueError(
            f"point with shapes {x.v.shape}, {x.z.shape} does not conform to q={alg.q}, p={alg.p}"
        )


def bracket(alg: StepTwoAlgebra, u, w) -> np.ndarray:
    """Bracket of two first-stratum vectors, returned as central coordinates.

    Accepts stacked inputs of shape ``(..., q)``.
    """
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.shape[-1:] != (alg.q,) or w.shape[-1:] != (alg.q,):
        raise ValueError(f"bracket expects vectors of length q={alg.q}")
    return np.einsum("lij,...i,...j->...l", alg.c, u, w)


def product_coords(alg: StepTwoAlgebra, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    q = alg.q
    if x.shape[-1] != alg.dim or y.shape[-1] != alg.dim:
        raise ValueError(f"coordinates must have trailing dimension {alg.dim}")
    v = x[..., :q] + y[..., :q]
    z = x[..., q:] + y[..., q:] + 0.5 * bracket(alg, x[..., :q], y[..., :q])
    return np.concatenate([v, z], axis=-1)


def inverse_coords(alg: StepTwoAlgebra, x) -> np.ndarray:
    return -np.asarray(x, dtype=float)


def dilate_coords(alg: StepTwoAlgebra, r, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)[..., None]
    out = np.empty(np.broadcast_shapes(x.shape, r.shape))
    out[..., : alg.q] = r * x[..., : alg.q]
    out[..., alg.q:] = r**2 * x[..., alg.q:]
    return out


def group_product(alg: StepTwoAlgebra, x: GroupPoint, y: GroupPoint) -> GroupPoint:
    _check_point(alg, x)
    _check_point(alg, y)
    return GroupPoint(x.v + y.v, x.z + y.z + 0.5 * bracket(alg, x.v, y.v))


def group_inverse(alg: StepTwoAlgebra, x: GroupPoint) -> GroupPoint:
    _check_point(alg, x)
    return GroupPoint(-x.v, -x.z)


def dilate(alg: StepTwoAlgebra, r: float, x: GroupPoint) -> GroupPoint:
    """Anisotropic dilation ``(v, z) -> (r v, r^2 z)``."""
    if not r > 0:
        raise ValueError(f"dilation factor must be positive, got {r}")
    _check_point(alg, x)
    return GroupPoint(r * x.v, r * r * x.z)


def homogeneous_dimension(alg: StepTwoAlgebra) -> int:
    return alg.q + 2 * alg.p


def left_invariant_flow(alg: StepTwoAlgebra, x: GroupPoint, w, s: float) -> GroupPoint:
    """Integral curve of the left-invariant field ``w`` through ``x`` at time ``s``.

    ``w`` is a Lie-algebra vector of length ``q + p`` (or length ``q``, read as
    a first-stratum vector).  The flow is right multiplication by
    ``exp(s w)``; it commutes with left translations and therefore descends
    to any left quotient.
    """
    w = np.asarray(w, dtype=float)
    if w.shape == (alg.q,):
        w = np.concatenate([w, np.zeros(alg.p)])
    if w.shape != (alg.dim,):
        raise ValueError(f"flow generator must have length q or q+p, got {w.shape}")
    return group_product(alg, x, GroupPoint.from_coords(alg, s * w))


# ---------------------------------------------------------------------------
# Built-in algebras


def _h1() -> StepTwoAlgebra:
    c = np.zeros((1, 2, 2))
    c[0, 0, 1], c[0, 1, 0] = 1.0, -1.0
    return StepTwoAlgebra(2, 1, c, "h1")


def _free3() -> StepTwoAlgebra:
    # Z1 = [V1, V2], Z2 = [V1, V3], Z3 = [V2, V3]
    c = np.zeros((3, 3, 3))
    for l, (i, j) in enumerate([(0, 1), (0, 2), (1, 2)]):
        c[l, i, j], c[l, j, i] = 1.0, -1.0
    return StepTwoAlgebra(3, 3, c, "free3")


def _quaternionic() -> StepTwoAlgebra:
    # left multiplication by i, j, k on H = R^4
    li = [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]]
    lj = [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]]
    lk = [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]]
    return StepTwoAlgebra(4, 3, np.array([li, lj, lk], dtype=float), "quaternionic")


def _h1xh1() -> StepTwoAlgebra:
    c = np.zeros((2, 4, 4))
    c[0, 0, 1], c[0, 1, 0] = 1.0, -1.0
    c[1, 2, 3], c[1, 3, 2] = 1.0, -1.0
    return StepTwoAlgebra(4, 2, c, "h1xh1")


def heisenberg_algebra(n: int) -> StepTwoAlgebra:
    """Heisenberg algebra H_n: [V_i, V_{n+i}] = Z for i = 1..n."""
    c = np.zeros((1, 2 * n, 2 * n))
    for i in range(n):
        c[0, i, n + i], c[0, n + i, i] = 1.0, -1.0
    return StepTwoAlgebra(2 * n, 1, c, f"h{n}")


def direct_sum(*algs: StepTwoAlgebra) -> StepTwoAlgebra:
    q = sum(a.q for a in algs)
    p = sum(a.p for a in algs)
    c = np.zeros((p, q, q))
    i0 = l0 = 0
    for a in algs:
        c[l0:l0 + a.p, i0:i0 + a.q, i0:i0 + a.q] = a.c
        i0 += a.q
        l0 += a.p
    return StepTwoAlgebra(q, p, c, "+".join(a.name for a in algs))


def random_algebra(q: int = 4, p: int = 2, seed: int = 0) -> StepTwoAlgebra:
    """Random step-two algebra with Gaussian antisymmetric structure constants."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p, q, q))
    return StepTwoAlgebra(q, p, a - np.swapaxes(a, 1, 2), f"random-q{q}-p{p}-s{seed}")


BUILTIN_ALGEBRAS = {
    "h1": _h1,
    "free3": _free3,
    "quaternionic": _quaternionic,
    "h1xh1": _h1xh1,
    "random42": lambda: random_algebra(4, 2, seed=7),
}


def builtin_algebra(name: str) -> StepTwoAlgebra:
    try:
        return BUILTIN_ALGEBRAS[name]()
    except KeyError:
        raise KeyError(f"unknown algebra {name!r}; known: {sorted(BUILTIN_ALGEBRAS)}") from None


def load_algebra(source) -> StepTwoAlgebra:
    """Load an algebra from a JSON file, a built-in name, or a parsed dict.

    The file format is ``{"q": int, "p": int, "c": [[[real]]], "name": str}``.
    """
    if isinstance(source, dict):
        data = source
    else:
        text = str(source)
        if text in BUILTIN_ALGEBRAS:
            return builtin_algebra(text)
        path = Path(text)
        if not path.exists():
            bundled = resources.files("nilspec") / "data" / f"{path.stem}.json"
            if bundled.is_file():
                data = json.loads(bundled.read_text())
            else:
                raise FileNotFoundError(text)
        else:
            data = json.loads(path.read_text())
    for key in ("q", "p", "c"):
        if key not in data:
            raise ValueError(f"algebra file is missing {key!r}")
    return StepTwoAlgebra(int(data["q"]), int(data["p"]), np.array(data["c"], dtype=float),
                          str(data.get("name", "")))


# ---------------------------------------------------------------------------
# Lattices


@dataclass(frozen=True)
class LatticeSpec:
    """Standard lattice of the Heisenberg group H1.

    In the polarized chart ``(x, y, t) = (v1, v2, z + v1 v2 / 2)`` the group law
    is ``(x, y, t)(x', y', t') = (x + x', y + y', t + t' + x y')`` and the lattice
    is ``Z^3``.  The unit cube of that chart is a fundamental domain of Haar
    volume one.  ``radius`` bounds the lattice ball used by truncated sums.
    """

    name: str = "h1-standard"
    radius: int = 3
    tail_tol: float = 1e-10

    @staticmethod
    def to_polarized(x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = x.copy()
        out[..., 2] = x[..., 2] + 0.5 * x[..., 0] * x[..., 1]
        return out

    @staticmethod
    def from_polarized(x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = x.copy()
        out[..., 2] = x[..., 2] - 0.5 * x[..., 0] * x[..., 1]
        return out

    def reduce(self, x) -> np.ndarray:
        """Representative of ``Gamma x`` in the unit cube of the polarized chart.

        Input and output are exponential coordinates.
        """
        p = self.to_polarized(x)
        a = np.floor(p[..., 0])
        b = np.floor(p[..., 1])
        xr = p[..., 0] - a
        yr = p[..., 1] - b
        t = p[..., 2] - a * yr
        t = t - np.floor(t)
        return self.from_polarized(np.stack([xr, yr, t], axis=-1))

    def elements(self, radius: int | None = None) -> np.ndarray:
        """Lattice elements ``(m1, m2, n)`` with all entries bounded by ``radius``,
        in exponential coordinates, ordered by increasing polarized sup-norm."""
        r = self.radius if radius is None else radius
        rng = np.arange(-r, r + 1)
        m1, m2, n = np.meshgrid(rng, rng, rng, indexing="ij")
        pol = np.stack([m1.ravel(), m2.ravel(), n.ravel()], axis=-1).astype(float)
        order = np.argsort(np.max(np.abs(pol), axis=1), kind="stable")
        return self.from_polarized(pol[order])

    def fundamental_grid(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Midpoint grid of the unit polarized cube: points (exp coords) and weights."""
        g = (np.arange(n) + 0.5) / n
        x, y, t = np.meshgrid(g, g, g, indexing="ij")
        pol = np.stack([x.ravel(), y.ravel(), t.ravel()], axis=-1)
        return self.from_polarized(pol), np.full(pol.shape[0], 1.0 / n**3)


def periodize(alg: StepTwoAlgebra, lattice: LatticeSpec, f, points, radius: int | None = None):
    """Lattice sum ``x -> sum_gamma f(gamma x)`` over a truncated lattice ball.

    ``f`` maps an array of exponential coordinates ``(..., 3)`` to values.  The
    outermost shell of the ball is used as a tail estimate; if any of its
    contributions exceeds ``lattice.tail_tol`` a :class:`TruncationError` is raised.
    """
    if alg.q != 2 or alg.p != 1:
        raise ValueError("only the Heisenberg group H1 ships with a lattice")
    r = lattice.radius if radius is None else radius
    pts = np.asarray(points, dtype=float)
    gammas = lattice.elements(r)
    pol = lattice.to_polarized(gammas)
    shell = np.max(np.abs(pol), axis=1) == r
    total = np.zeros(pts.shape[:-1], dtype=np.result_type(f(pts[:1]), float))
    tail = 0.0
    for g, on_shell in zip(gammas, shell):
        vals = f(product_coords(alg, g, pts))
        total = total + vals
        if on_shell:
            tail = max(tail, float(np.max(np.abs(vals))) if vals.size else 0.0)
    if tail > lattice.tail_tol:
        raise TruncationError(
            f"lattice ball of radius {r} leaves shell contributions up to {tail:.3e} "
            f"(tolerance {lattice.tail_tol:.1e}); increase the radius"
        )
    return total
