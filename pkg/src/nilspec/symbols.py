"""Kernel-form symbols, the group Fourier transform and semiclassical quantization.

A symbol is stored through its convolution kernel ``kappa_x(w)``: ``x`` is a
point of the nilmanifold, given in the polarized chart ``(X, Y, T)``, and ``w``
is a group element in exponential coordinates.  The operator-valued form is
derived on demand:

    sigma(x, pi) = int_G kappa_x(w) pi(w)^* dw.

The quantization on ``M = Gamma \\ H1`` is

    Op_eps(sigma) f(x) = int_G kappa_x(u) f(x . delta_eps(u)^{-1}) du,

i.e. the dilated-kernel convolution after the change of variables
``w = delta_eps(u)``.  Right translations of grid functions are carried out
exactly (spectrally) in the T-Fourier picture, so the discrete operator is a
weighted sum of unitary shifts.
"""
from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy.special import erfc, roots_hermite, roots_legendre

from .dual import BlockForm, block_form
from .hermite import HermiteTruncation, RepOperator, mode_matrices, op_sublaplacian
from .lie import StepTwoAlgebra, TruncationError, builtin_algebra
from .nilmanifold import NilmanifoldGrid

__all__ = [
    "CONVOLUTION_ORDER",
    "PLANCHEREL_C0_H1",
    "ResolutionError",
    "SeparableTerm",
    "KernelSymbol",
    "SymbolField",
    "compile_expression",
    "gaussian_term",
    "separable_symbol",
    "sum_symbol",
    "kernel_symbol",
    "load_symbol",
    "bundled_symbols",
    "fourier_of_kernel",
    "fourier_of_function",
    "restrict_to_characters",
    "multiply_by_eta",
    "is_in_B0",
    "right_translate",
    "op_epsilon_apply",
    "op_epsilon_linear_operator",
    "measured_operator_norm",
    "kernel_l1_bound",
    "plancherel_check",
]

#: ``(f1 * f2)^(pi) = f2^(pi) f1^(pi)`` for ``f^(pi) = int f(x) pi(x)^* dx`` and
#: ``(f1 * f2)(x) = int f1(y) f2(y^{-1} x) dy``; confirmed numerically by the test suite.
CONVOLUTION_ORDER = "reversed"

#: Plancherel constant on H1 for ``d mu(pi^lambda) = c0 |lambda| d lambda``.
#: With ``pi^lambda(v, 0)`` acting by phase-and-shift, ``||int g(v) pi(v) dv||_HS^2
#: = (2 pi / |lambda|) ||g||_2^2`` and Parseval in the central variable adds
#: another ``2 pi``, hence ``c0 = 1 / (4 pi^2)``.
PLANCHEREL_C0_H1 = 1.0 / (4.0 * np.pi**2)


class ResolutionError(ValueError):
    """The dilated kernel is narrower than the grid can represent."""


# ---------------------------------------------------------------------------
# Expressions for x-dependence


_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "tanh": np.tanh,
          "log": np.log, "abs": np.abs}
_CONSTS = {"pi": np.pi, "e": np.e}
_VARS = ("x1", "x2", "x3")
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Constant, ast.Load,
          ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def compile_expression(expr: str) -> Callable:
    """Compile an arithmetic expression in ``x1, x2, x3`` (polarized chart).

    Only arithmetic, numeric literals, ``pi``, ``e`` and the elementwise
    functions ``sin cos exp sqrt tanh log abs`` are accepted.
    """
    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ValueError(f"disallowed syntax {type(node).__name__} in {expr!r}")
        if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in _CONSTS \
                and node.id not in _VARS:
            raise ValueError(f"unknown name {node.id!r} in {expr!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                               and node.func.id in _FUNCS):
            raise ValueError(f"unknown function in {expr!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError(f"non-numeric literal in {expr!r}")
    code = compile(tree, "<symbol>", "eval")

    def a(X, Y, T):
        X = np.asarray(X, dtype=float)
        env = dict(_FUNCS, **_CONSTS, x1=X, x2=np.asarray(Y, float), x3=np.asarray(T, float))
        val = eval(code, {"__builtins__": {}}, env)  # names restricted above
        return np.broadcast_to(np.asarray(val, dtype=complex),
                               np.broadcast_shapes(X.shape, np.shape(Y), np.shape(T))).copy()

    a.expr = expr
    return a


def _check_periodic(a: Callable, seed: int = 0, tol: float = 1e-9) -> None:
    rng = np.random.default_rng(seed)
    X, Y, T = rng.random((3, 64))
    ref = a(X, Y, T)
    for shifted in (a(X + 1, Y, T + Y), a(X, Y + 1, T), a(X, Y, T + 1)):
        err = np.max(np.abs(shifted - ref))
        if err > tol * max(1.0, np.max(np.abs(ref))):
            raise ValueError(f"x-dependence is not Gamma-periodic (defect {err:.2e})")


# ---------------------------------------------------------------------------
# Kernels


_POLY_KEYS = ("1", "w1", "w2", "w1w1", "w1w2", "w2w2")
_NOTCH = {"1": 1.0, "w1w1": -1.0, "w2w2": -1.0}


def _poly_factor(poly: dict, v1, v2, s: float):
    """Factor ``p(v)`` with ``P(-i d/dv) G = p G`` for the Gaussian ``G`` of scale ``s``."""
    c = {k: complex(poly.get(k, 0.0)) for k in _POLY_KEYS}
    s2, s4 = s * s, s**4
    return (c["1"] + 2j * (c["w1"] * v1 + c["w2"] * v2) / s2
            - c["w1w1"] * (4 * v1 * v1 / s4 - 2 / s2) - c["w2w2"] * (4 * v2 * v2 / s4 - 2 / s2)
            - c["w1w2"] * 4 * v1 * v2 / s4)


def _poly_value(poly: dict, omega):
    w1, w2 = omega[..., 0], omega[..., 1]
    c = {k: complex(poly.get(k, 0.0)) for k in _POLY_KEYS}
    return (c["1"] + c["w1"] * w1 + c["w2"] * w2 + c["w1w1"] * w1 * w1 + c["w1w2"] * w1 * w2
            + c["w2w2"] * w2 * w2)


@dataclass(frozen=True)
class SeparableTerm:
    """``a(x) phi(u)`` with ``phi = mass P(-i d/dv) G`` and ``G(u) = (pi s^2)^{-3/2} exp(-|u|^2/s^2)``.

    The character restriction of ``phi`` is ``mass P(omega) exp(-s^2 |omega|^2 / 4)``.
    ``kind`` selects ``P``: ``gaussian`` (``P = 1``), ``gaussian_notch``
    (``P = 1 - |omega|^2``), ``gaussian_poly`` (``P`` of degree at most two given
    by ``poly``, keys ``1 w1 w2 w1w1 w1w2 w2w2``) or ``gaussian_modulated``
    (``phi = mass G exp(i omega0 . v)``, whose restriction is centred at ``omega0``).
    """

    a: Callable
    kind: str
    scale: float
    mass: float = 1.0
    omega0: tuple = (0.0, 0.0)
    poly: tuple = ()

    def __post_init__(self):
        if self.kind not in ("gaussian", "gaussian_notch", "gaussian_modulated", "gaussian_poly"):
            raise ValueError(f"unknown kernel profile {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("kernel scale must be positive")
        bad = [k for k, _ in self.poly if k not in _POLY_KEYS]
        if bad:
            raise ValueError(f"unknown polynomial keys {bad}")

    def _poly(self) -> dict | None:
        if self.kind == "gaussian_notch":
            return _NOTCH
        if self.kind == "gaussian_poly":
            return dict(self.poly)
        return None

    def phi(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        s = self.scale
        r2 = np.sum(u * u, axis=-1)
        g = (self.mass * (np.pi * s * s) ** -1.5 * np.exp(-r2 / (s * s))).astype(complex)
        poly = self._poly()
        if poly is not None:
            return g * _poly_factor(poly, u[..., 0], u[..., 1], s)
        if self.kind == "gaussian_modulated":
            w0 = np.asarray(self.omega0, dtype=float)
            return g * np.exp(1j * (u[..., 0] * w0[0] + u[..., 1] * w0[1]))
        return g

    def char(self, omega) -> np.ndarray:
        """``int phi(v, z) exp(-i omega . v) dv dz`` in closed form."""
        omega = np.asarray(omega, dtype=float)
        s = self.scale
        shifted = omega - np.asarray(self.omega0, dtype=float) if self.kind == "gaussian_modulated" \
            else omega
        val = self.mass * np.exp(-0.25 * s * s * np.sum(shifted * shifted, axis=-1)) + 0j
        poly = self._poly()
        if poly is not None:
            val = val * _poly_value(poly, omega)
        return val

    def envelope(self) -> tuple[float, float]:
        """``(C, s)`` with ``|phi(u)| <= C exp(-|u|^2 / s^2)``."""
        s = self.scale
        base = abs(self.mass) * (np.pi * s * s) ** -1.5
        poly = self._poly()
        if poly is None:
            return base, s
        s_env = 1.25 * s
        r = np.linspace(0.0, 12.0 * s, 4001)
        c = {k: abs(complex(poly.get(k, 0.0))) for k in _POLY_KEYS}
        bound = (abs(complex(poly.get("1", 0.0))) + 2 * (c["w1w1"] + c["w2w2"]) / s**2
                 + 2 * r * (c["w1"] + c["w2"]) / s**2
                 + 4 * r * r * (c["w1w1"] + c["w2w2"] + c["w1w2"]) / s**4)
        return base * float(np.max(bound * np.exp(-r * r * (1 / s**2 - 1 / s_env**2)))), s_env

    def to_json(self) -> dict:
        phi = {"kind": self.kind, "scale": self.scale, "mass": self.mass}
        if self.kind == "gaussian_modulated":
            phi["omega"] = list(self.omega0)
        if self.kind == "gaussian_poly":
            phi["poly"] = {k: float(v) for k, v in self.poly}
        return {"type": "separable", "a": getattr(self.a, "expr", None), "phi": phi}


@dataclass(frozen=True)
class KernelSymbol:
    """Convolution kernel ``kappa(x, u)`` with a declared Gaussian envelope.

    ``kappa`` maps polarized nilmanifold points ``(..., 3)`` and group
    elements ``(..., q + p)`` (broadcast together) to complex values, with
    ``|kappa_x(u)| <= C exp(-|u|^2 / s^2)``.  When the kernel is a sum of
    separable terms they are kept in ``terms`` for fast paths.
    """

    alg: StepTwoAlgebra
    kappa: Callable
    C: float
    s: float
    terms: tuple = ()
    name: str = ""

    def __call__(self, x, u) -> np.ndarray:
        return self.kappa(np.asarray(x, dtype=float), np.asarray(u, dtype=float))

    def check_envelope(self, samples: int = 512, seed: int = 0) -> float:
        """Largest observed ``|kappa| / (C exp(-|u|^2/s^2))`` on random samples (<= 1 if valid)."""
        rng = np.random.default_rng(seed)
        x = rng.random((samples, 3))
        u = rng.normal(scale=self.s, size=(samples, self.alg.dim))
        ratio = np.abs(self(x, u)) / (self.C * np.exp(-np.sum(u * u, axis=-1) / self.s**2))
        return float(np.max(ratio))

    def to_json(self) -> dict:
        if not self.terms:
            raise ValueError("only separable kernels have a JSON form")
        if len(self.terms) == 1:
            return dict(self.terms[0].to_json(), name=self.name, schema=1)
        return {"schema": 1, "name": self.name, "type": "sum",
                "terms": [t.to_json() for t in self.terms]}


def _sup_on_grid(a: Callable, n: int = 24) -> float:
    g = np.arange(n) / n
    X, Y, T = np.meshgrid(g, g, g, indexing="ij")
    return float(np.max(np.abs(a(X, Y, T))))


def gaussian_term(a, kind: str = "gaussian", scale: float = 0.5, mass: float = 1.0,
                  omega0=(0.0, 0.0), poly: dict | None = None) -> SeparableTerm:
    if isinstance(a, str):
        a = compile_expression(a)
    elif not callable(a):
        const = complex(a)

        def a(X, Y, T, _c=const):
            return np.full(np.broadcast_shapes(np.shape(X), np.shape(Y), np.shape(T)), _c)

        a.expr = repr(const.real) if const.imag == 0 else repr(const)
    _check_periodic(a)
    poly = tuple(sorted((str(k), float(v)) for k, v in (poly or {}).items()))
    return SeparableTerm(a, kind, float(scale), float(mass), tuple(float(w) for w in omega0), poly)


def sum_symbol(terms: Sequence[SeparableTerm], name: str = "",
               alg: StepTwoAlgebra | None = None) -> KernelSymbol:
    """Kernel ``sum_t a_t(x) phi_t(u)`` on H1."""
    alg = builtin_algebra("h1") if alg is None else alg
    if alg.q != 2 or alg.p != 1:
        raise ValueError("separable kernels are provided for H1")
    terms = tuple(terms)
    if not terms:
        raise ValueError("need at least one term")

    def kappa(x, u):
        out = 0.0
        for t in terms:
            out = out + t.a(x[..., 0], x[..., 1], x[..., 2]) * t.phi(u)
        return out

    C = 0.0
    s = 0.0
    for t in terms:
        c_t, s_t = t.envelope()
        s = max(s, s_t)
    for t in terms:
        c_t, s_t = t.envelope()
        C += _sup_on_grid(t.a) * c_t   # exp(-r^2/s_t^2) <= exp(-r^2/s^2) for s_t <= s
    return KernelSymbol(alg, kappa, 1.01 * C, s, terms, name)


def separable_symbol(a, kind: str = "gaussian", scale: float = 0.5, mass: float = 1.0,
                     omega0=(0.0, 0.0), poly: dict | None = None, name: str = "") -> KernelSymbol:
    return sum_symbol([gaussian_term(a, kind, scale, mass, omega0, poly)], name)


def kernel_symbol(alg: StepTwoAlgebra, kappa: Callable, C: float, s: float,
                  name: str = "") -> KernelSymbol:
    """Wrap an arbitrary kernel callable (no fast paths)."""
    return KernelSymbol(alg, kappa, float(C), float(s), (), name)


def _term_from_json(d: dict) -> SeparableTerm:
    if d.get("type", "separable") != "separable":
        raise ValueError(f"unsupported term type {d.get('type')!r}")
    phi = d["phi"]
    return gaussian_term(d.get("a", "1"), phi.get("kind", "gaussian"), phi["scale"],
                         phi.get("mass", 1.0), phi.get("omega", (0.0, 0.0)), phi.get("poly"))


def load_symbol(source) -> KernelSymbol:
    """Load a symbol from a dict, a JSON path, or the name of a bundled symbol.

    Schema (version 1)::

        {"type": "separable", "a": "<expression in x1, x2, x3>",
         "phi": {"kind": "gaussian" | "gaussian_notch" | "gaussian_modulated",
                 "scale": s, "mass": m, "omega": [w1, w2]}}
        {"type": "sum", "terms": [<separable>, ...]}

    New kernel families plug in by extending ``SeparableTerm.kind``.
    """
    if isinstance(source, dict):
        d = source
    else:
        path = Path(source)
        if path.exists():
            d = json.loads(path.read_text())
        else:
            ref = resources.files("nilspec") / "data" / "symbols" / f"{path.stem}.json"
            if not ref.is_file():
                raise FileNotFoundError(f"no symbol file or bundled symbol named {source!r}")
            d = json.loads(ref.read_text())
    kind = d.get("type", "separable")
    if kind == "separable":
        terms = [_term_from_json(d)]
    elif kind == "sum":
        terms = [_term_from_json(t) for t in d["terms"]]
    else:
        raise ValueError(f"unknown symbol type {kind!r}")
    return sum_symbol(terms, d.get("name", ""))


def bundled_symbols() -> list[str]:
    root = resources.files("nilspec") / "data" / "symbols"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


# ---------------------------------------------------------------------------
# Quadrature helpers


def _gh_scaled(order: int, s: float):
    """Nodes ``u`` and weights ``W`` with ``int g(u) du ~ sum W g(u)`` for Gaussian-decaying g."""
    x, w = roots_hermite(order)
    return s * x, s * w * np.exp(x * x)


def _tensor_nodes(orders, scales):
    nodes, weights = [], []
    for o, s in zip(orders, scales):
        u, W = _gh_scaled(o, s)
        nodes.append(u)
        weights.append(W)
    grids = np.meshgrid(*nodes, indexing="ij")
    wgrids = np.meshgrid(*weights, indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=-1)
    W = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return U, W


def _tail_check(values, weights, outer_mask, tol, what):
    total = np.sum(np.abs(values * weights))
    tail = np.sum(np.abs(values * weights)[outer_mask])
    if total > 0 and tail > tol * total:
        raise TruncationError(f"{what}: outermost quadrature shell carries {tail / total:.2e} "
                              f"of the mass (tolerance {tol:.1e})")


# ---------------------------------------------------------------------------
# Group Fourier transform


def fourier_of_function(alg: StepTwoAlgebra, f: Callable, bf: BlockForm, nu,
                        trunc: HermiteTruncation, s: float, order_v: int | None = None,
                        order_z: int | None = None, tail_tol: float = 1e-8) -> RepOperator:
    """``int_G f(w) pi(w)^* dw`` for a function with Gaussian envelope of scale ``s``.

    The central integral is folded first, ``f^lambda(v) = int f(v, z) e^{-i lambda(z)} dz``,
    so that only ``pi(v, 0)^* = pi(-v, 0)`` is needed at the first-stratum nodes.
    """
    if trunc.d != bf.d:
        raise ValueError("truncation and block form disagree on d")
    nu = np.zeros(bf.k) if nu is None else np.asarray(nu, dtype=float)
    order_v = order_v or max(20, trunc.N + 16)
    order_z = order_z or 24
    V, Wv = _tensor_nodes([order_v] * alg.q, [s] * alg.q)
    Z, Wz = _tensor_nodes([order_z] * alg.p, [s] * alg.p)
    pts = np.concatenate([np.repeat(V, len(Z), axis=0), np.tile(Z, (len(V), 1))], axis=-1)
    vals = np.asarray(f(pts), dtype=complex).reshape(len(V), len(Z))
    flam = (vals * np.exp(-1j * (Z @ bf.lam))[None, :]) @ Wz
    outer_v = _outer_shell(V, s, order_v)
    _tail_check(flam, Wv, outer_v, tail_tol, "fourier_of_function")
    keep = np.abs(flam * Wv) > 1e-17 * np.max(np.abs(flam * Wv), initial=0.0)
    V, c = V[keep], (flam * Wv)[keep]
    p, q, r = -(V @ bf.P), -(V @ bf.Q), -(V @ bf.R)
    c = c * np.exp(1j * (r @ nu))
    out = None
    chunk = 512
    for i0 in range(0, len(c), chunk):
        sl = slice(i0, i0 + chunk)
        mats = None
        for j in range(bf.d):
            Mj = mode_matrices(bf.eta[j], p[sl, j], q[sl, j], trunc.N)
            mats = Mj if mats is None else np.einsum("kab,kcd->kacbd", mats, Mj).reshape(
                Mj.shape[0], mats.shape[1] * trunc.N, -1)
        if mats is None:
            mats = np.ones((len(c[sl]), 1, 1), dtype=complex)
        part = np.tensordot(c[sl], mats, axes=(0, 0))
        out = part if out is None else out + part
    if out is None:
        out = np.zeros((trunc.dim, trunc.dim), dtype=complex)
    return RepOperator(out, trunc)


def _outer_shell(U, s, order):
    x, _ = roots_hermite(order)
    edge = s * np.max(np.abs(x))
    return np.any(np.isclose(np.abs(U), edge), axis=-1)


def fourier_of_kernel(sym: KernelSymbol, x, bf: BlockForm, nu, trunc: HermiteTruncation,
                      order_v: int | None = None, order_z: int | None = None,
                      tail_tol: float = 1e-8) -> RepOperator:
    """``sigma(x, pi^{lambda, nu}) = int kappa_x(w) pi(w)^* dw`` at a nilmanifold point ``x``."""
    x = np.asarray(x, dtype=float)
    return fourier_of_function(sym.alg, lambda w: sym(x, w), bf, nu, trunc, sym.s,
                               order_v, order_z, tail_tol)


def restrict_to_characters(sym: KernelSymbol, x, omega, order: int = 32,
                           tail_tol: float = 1e-10) -> complex:
    """``int kappa_x(v, z) exp(-i omega . v) dv dz`` by Gauss-Hermite quadrature."""
    alg = sym.alg
    x = np.asarray(x, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (alg.q,):
        raise ValueError(f"omega must have length q={alg.q}")
    U, W = _tensor_nodes([order] * alg.dim, [sym.s] * alg.dim)
    vals = sym(x, U) * np.exp(-1j * (U[:, : alg.q] @ omega))
    _tail_check(sym(x, U), W, _outer_shell(U, sym.s, order), tail_tol, "restrict_to_characters")
    return complex(np.sum(vals * W))


# ---------------------------------------------------------------------------
# Operator fields


@dataclass(frozen=True)
class SymbolField:
    """A symbol as operator field plus its character part.

    ``op(x, bf, nu, trunc)`` returns a :class:`RepOperator`; ``char(x, omega)``
    returns a complex number.
    """

    op: Callable
    char: Callable
    name: str = ""

    @classmethod
    def from_kernel(cls, sym: KernelSymbol, order_v: int | None = None) -> "SymbolField":
        def op(x, bf, nu, trunc):
            return fourier_of_kernel(sym, x, bf, nu, trunc, order_v=order_v)

        def char(x, omega):
            # vectorized over leading axes of x (..., 3) and omega (..., 2) for separable kernels
            if sym.terms:
                x = np.asarray(x, dtype=float)
                val = sum(t.a(x[..., 0], x[..., 1], x[..., 2]) * t.char(omega) for t in sym.terms)
                return complex(val) if np.ndim(val) == 0 else val
            return restrict_to_characters(sym, x, omega)

        return cls(op, char, sym.name)

    @classmethod
    def spectral(cls, a: Callable, g: Callable, name: str = "") -> "SymbolField":
        """``a(x) g(pi(-L))``: a function of the sub-Laplacian, diagonal in the Hermite basis."""
        def op(x, bf, nu, trunc):
            diag = op_sublaplacian(bf, nu, trunc).matrix.diagonal()
            x = np.asarray(x, dtype=float)
            return RepOperator(np.diag(a(*x) * g(diag.real)).astype(complex), trunc)

        def char(x, omega):
            x = np.asarray(x, dtype=float)
            return complex(a(*x) * g(float(np.dot(omega, omega))))

        return cls(op, char, name)

    @classmethod
    def constant_operator(cls, fn: Callable, char_value: complex = 0.0, name: str = "") -> "SymbolField":
        """x-independent field ``(bf, nu, trunc) -> RepOperator``."""
        return cls(lambda x, bf, nu, trunc: fn(bf, nu, trunc), lambda x, omega: complex(char_value),
                   name)


def multiply_by_eta(field: SymbolField, eta: Callable, p: int = 1) -> SymbolField:
    """``(sigma eta)(x, pi^{lambda, nu}) = sigma(x, pi^{lambda, nu}) eta(lambda)``.

    ``eta`` maps central covectors of length ``p`` to scalars.  The character
    part is scaled by ``eta(0)``, as for the kernel obtained by convolving in
    the central variable.
    """
    eta0 = complex(eta(np.zeros(p)))

    def op(x, bf, nu, trunc):
        base = field.op(x, bf, nu, trunc)
        return RepOperator(base.matrix * complex(eta(bf.lam)), base.trunc, base.interior_mask)

    def char(x, omega):
        return field.char(x, omega) * eta0

    return SymbolField(op, char, field.name)


def is_in_B0(field: SymbolField, samples, tol: float = 1e-10) -> tuple[bool, float]:
    """Whether ``sigma`` commutes with ``pi(-L)`` on all samples ``(x, bf, nu, trunc)``.

    Commutators are measured in Frobenius norm on the interior block.
    """
    worst = 0.0
    for x, bf, nu, trunc in samples:
        S = field.op(x, bf, nu, trunc).toarray()
        L = op_sublaplacian(bf, nu, trunc).matrix.diagonal()
        comm = S * L[None, :] - L[:, None] * S
        idx = np.flatnonzero(trunc.interior_mask(1))
        worst = max(worst, float(np.linalg.norm(comm[np.ix_(idx, idx)])))
    return worst <= tol, worst


# ---------------------------------------------------------------------------
# Right translations on the nilmanifold grid


class _ShiftPlan:
    """Precomputed phases for exact right translations on a :class:`NilmanifoldGrid`.

    Working representation: T-Fourier modes ``f_m(X, Y)``.  The twisted
    function ``g_m = f_m exp(2 pi i m X Y)`` is periodic in X, so X-shifts are
    Fourier multipliers on ``g_m``; Y-shifts and central shifts are diagonal in
    ``(X, k_Y, m)``.  All transforms are unitary (``norm="ortho"``).
    """

    def __init__(self, grid: NilmanifoldGrid):
        n = grid.n
        self.grid = grid
        self.k = np.fft.fftfreq(n, 1.0 / n)
        self.X = grid.axes()
        self.E = np.exp(2j * np.pi * self.k[None, None, :] * self.X[:, None, None]
                        * self.X[None, :, None])     # [X, Y, m]

    def to_twisted(self, f):
        """f[X, Y, T] -> G[k_X, Y, m]."""
        fm = np.fft.fft(f, axis=2, norm="ortho")
        return np.fft.fft(fm * self.E, axis=0, norm="ortho")

    def from_twisted(self, G):
        g = np.fft.ifft(G, axis=0, norm="ortho")
        return np.fft.ifft(g * np.conj(self.E), axis=2, norm="ortho")

    def xshift_to_mixed(self, G, alpha):
        """Twisted ``G`` -> mixed ``H[X, k_Y, m]`` of ``f(X + alpha, Y, T)``."""
        g = np.fft.ifft(G * np.exp(2j * np.pi * self.k * alpha)[:, None, None], axis=0, norm="ortho")
        return np.fft.fft(g * np.conj(self.E) * self.untwist(alpha), axis=1, norm="ortho")

    def untwist(self, alpha):
        """Phase ``exp(-2 pi i m alpha Y)`` left over when untwisting at ``X + alpha``."""
        return np.exp(-2j * np.pi * alpha * self.X[None, :, None] * self.k[None, None, :])

    def mixed_to_twisted_xshift(self, H, alpha):
        """Adjoint of :meth:`xshift_to_mixed`."""
        g = np.fft.ifft(H, axis=1, norm="ortho") * self.E * np.conj(self.untwist(alpha))
        return np.fft.fft(g, axis=0, norm="ortho") * np.exp(-2j * np.pi * self.k * alpha)[:, None, None]

    def yc_multiplier(self, b, c):
        """Mixed-space multiplier of ``F -> F(x . (0, b, 0) . (0, 0, c))`` (polarized central c)."""
        k, X = self.k, self.X
        return np.exp(2j * np.pi * (b * (k[None, :, None] + k[None, None, :] * X[:, None, None])
                                    + c * k[None, None, :]))

    def from_mixed(self, H):
        return np.fft.ifft(np.fft.ifft(H, axis=1, norm="ortho"), axis=2, norm="ortho")

    def to_mixed(self, f):
        return np.fft.fft(np.fft.fft(f, axis=2, norm="ortho"), axis=1, norm="ortho")


def right_translate(grid: NilmanifoldGrid, f, w) -> np.ndarray:
    """``x -> f(x . w)`` for ``w = (a, b, c)`` in exponential coordinates (exact on the grid's band)."""
    a, b, c = (float(t) for t in w)
    plan = _ShiftPlan(grid)
    # w = (a, 0, 0) . (0, b, 0) . (0, 0, c - a b / 2); the rightmost factor acts first
    # on the argument, so translate along Y and the centre first, then along X.
    H = plan.to_mixed(np.asarray(f, dtype=complex)) * plan.yc_multiplier(b, c - 0.5 * a * b)
    F = plan.from_mixed(H)
    G = plan.to_twisted(F)
    g = np.fft.ifft(G * np.exp(2j * np.pi * plan.k * a)[:, None, None], axis=0, norm="ortho")
    return np.fft.ifft(g * np.conj(plan.E) * plan.untwist(a), axis=2, norm="ortho")


# ---------------------------------------------------------------------------
# Op_eps


DEFAULT_ORDERS = (16, 16, 10)


def _resolve(sym: KernelSymbol, eps: float, grid: NilmanifoldGrid, min_cells: float):
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if sym.alg.q != 2 or sym.alg.p != 1:
        raise ValueError("Op_eps is implemented on the Heisenberg nilmanifold")
    smallest = min((t.envelope()[1] for t in sym.terms), default=sym.s)
    if eps * smallest < min_cells * grid.h:
        raise ResolutionError(
            f"dilated kernel width eps*s = {eps * smallest:.3e} is below {min_cells} grid cells "
            f"(h = {grid.h:.3e}); refine the grid"
        )


def _term_multipliers(term: SeparableTerm, eps: float, plan: _ShiftPlan, orders):
    """Nodes ``a`` and multipliers ``K[a, X, k_Y, m]`` for one separable term."""
    s = term.envelope()[1]
    ua, Wa = _gh_scaled(orders[0], s)
    ub, Wb = _gh_scaled(orders[1], s)
    uz, Wz = _gh_scaled(orders[2], s)
    A, B, Z = np.meshgrid(ua, ub, uz, indexing="ij")
    c = (Wa[:, None, None] * Wb[None, :, None] * Wz[None, None, :]
         * term.phi(np.stack([A, B, Z], axis=-1)))
    k, X = plan.k, plan.X
    Cz = np.einsum("abz,zm->abm", c, np.exp(-2j * np.pi * eps**2 * np.multiply.outer(uz, k)))
    D = Cz * np.exp(1j * np.pi * eps**2 * ua[:, None, None] * ub[None, :, None] * k[None, None, :])
    n = len(k)
    K = np.zeros((len(ua), n, n, n), dtype=complex)
    for jb, bb in enumerate(ub):
        ph = np.exp(-2j * np.pi * eps * bb * (k[None, :, None] + k[None, None, :] * X[:, None, None]))
        K += D[:, jb, None, None, :] * ph[None]
    keep = np.max(np.abs(K), axis=(1, 2, 3)) > 1e-300
    return eps * ua[keep], K[keep]


class _OpEpsilon:
    """Discrete ``Op_eps(sigma)`` for a sum of separable terms, with its adjoint."""

    def __init__(self, sym: KernelSymbol, eps: float, grid: NilmanifoldGrid, orders):
        self.plan = _ShiftPlan(grid)
        self.grid = grid
        P = grid.polarized()
        self.parts = []
        for t in sym.terms:
            alphas, K = _term_multipliers(t, eps, self.plan, orders)
            a = t.a(P[..., 0], P[..., 1], P[..., 2])
            self.parts.append((a, -alphas, K))

    def apply(self, f):
        plan = self.plan
        G = plan.to_twisted(np.asarray(f, dtype=complex))
        out = 0.0
        for a, alphas, K in self.parts:
            acc = np.zeros_like(G)
            for al, Ka in zip(alphas, K):
                acc += Ka * plan.xshift_to_mixed(G, al)
            out = out + a * plan.from_mixed(acc)
        return out

    def adjoint(self, f):
        plan = self.plan
        f = np.asarray(f, dtype=complex)
        accG = 0.0
        for a, alphas, K in self.parts:
            H = plan.to_mixed(np.conj(a) * f)
            for al, Ka in zip(alphas, K):
                accG = accG + plan.mixed_to_twisted_xshift(np.conj(Ka) * H, al)
        return plan.from_twisted(accG)


def _op_generic(sym: KernelSymbol, eps: float, grid: NilmanifoldGrid, f, orders):
    """Node-by-node evaluation for kernels without separable structure."""
    P = grid.polarized()
    U, W = _tensor_nodes(orders, [sym.s] * 3)
    out = np.zeros(grid.shape, dtype=complex)
    for u, w in zip(U, W):
        g = np.array([-eps * u[0], -eps * u[1], -eps**2 * u[2]])
        out += w * sym(P, u[None, None, None, :]) * right_translate(grid, f, g)
    return out


def op_epsilon_apply(sym: KernelSymbol, eps: float, f, grid: NilmanifoldGrid | None = None,
                     orders=None, min_cells: float = 0.25, adjoint: bool = False) -> np.ndarray:
    """``Op_eps(sigma) f`` on the nilmanifold grid (``f`` has shape ``(n, n, n)``).

    The ``u``-integral uses tensor Gauss-Hermite nodes adapted to the kernel
    envelope; every node contributes a unitary right translation, so the
    discrete operator norm is at most ``sum |weight * kernel|`` over nodes.
    Accuracy is best for grid functions oscillating at frequencies up to about
    ``1 / eps``, the semiclassical regime.  A kernel narrower than
    ``min_cells`` grid cells raises :class:`ResolutionError`.
    """
    f = np.asarray(f)
    grid = NilmanifoldGrid(f.shape[0]) if grid is None else grid
    if f.shape != grid.shape:
        raise ValueError(f"grid function has shape {f.shape}, expected {grid.shape}")
    orders = DEFAULT_ORDERS if orders is None else tuple(orders)
    _resolve(sym, eps, grid, min_cells)
    if not np.any(f):
        return np.zeros(grid.shape, dtype=complex)
    if not sym.terms:
        if adjoint:
            raise NotImplementedError("adjoint is available for separable kernels only")
        return _op_generic(sym, eps, grid, f, orders)
    op = _OpEpsilon(sym, eps, grid, orders)
    return op.adjoint(f) if adjoint else op.apply(f)


def op_epsilon_linear_operator(sym: KernelSymbol, eps: float, grid: NilmanifoldGrid,
                               orders=None, min_cells: float = 0.25) -> spla.LinearOperator:
    """``Op_eps(sigma)`` as a scipy LinearOperator on flattened grid functions."""
    orders = DEFAULT_ORDERS if orders is None else tuple(orders)
    _resolve(sym, eps, grid, min_cells)
    if not sym.terms:
        raise ValueError("linear-operator form requires a separable kernel")
    op = _OpEpsilon(sym, eps, grid, orders)
    shape = grid.shape
    return spla.LinearOperator(
        (grid.size, grid.size), dtype=complex,
        matvec=lambda v: op.apply(v.reshape(shape)).ravel(),
        rmatvec=lambda v: op.adjoint(v.reshape(shape)).ravel(),
    )


def measured_operator_norm(sym: KernelSymbol, eps: float, grid: NilmanifoldGrid,
                           orders=None, tol: float = 1e-6, seed: int = 0) -> float:
    """Largest singular value of the discrete ``Op_eps(sigma)`` (ARPACK on ``A^* A``)."""
    A = op_epsilon_linear_operator(sym, eps, grid, orders)
    AtA = spla.LinearOperator(A.shape, dtype=complex, matvec=lambda v: A.rmatvec(A.matvec(v)))
    rng = np.random.default_rng(seed)
    v0 = rng.normal(size=A.shape[0]) + 0j
    w = spla.eigsh(AtA, k=1, which="LM", tol=tol, v0=v0, return_eigenvectors=False)
    return float(np.sqrt(np.max(np.real(w))))


# ---------------------------------------------------------------------------
# Bounds and Plancherel


def kernel_l1_bound(sym: KernelSymbol, tail_tol: float = 1e-10, points_per_scale: int = 6,
                    x_grid: int = 16, chunk: int = 4096) -> float:
    """``int_G sup_x |kappa_x(u)| du``: trapezoid rule on a box plus an analytic tail bound.

    The box half-width is chosen from the envelope so that the neglected tail,
    bounded by ``C int_{outside} exp(-|u|^2/s^2)``, is below ``tail_tol``; that
    bound is added to the result, so the value is conservative.
    """
    D = sym.alg.dim
    C, s = sym.C, sym.s
    L = s * np.sqrt(np.log(max(C * (np.sqrt(np.pi) * s) ** D / tail_tol, 2.0)))
    m = int(np.ceil(2 * L / s * points_per_scale)) | 1
    g = np.linspace(-L, L, m)
    dx = g[1] - g[0]
    # tail of the envelope outside the box
    one_d = np.sqrt(np.pi) * s
    inside = np.sqrt(np.pi) * s * (1 - erfc(L / s))
    tail = C * (one_d**D - inside**D)
    U = np.stack(np.meshgrid(*([g] * D), indexing="ij"), axis=-1).reshape(-1, D)
    if len(sym.terms) == 1:
        t = sym.terms[0]
        integral = _sup_on_grid(t.a, 24) * np.sum(np.abs(t.phi(U))) * dx**D
    elif sym.terms:
        # sup_x |sum_t a_t(x) phi_t(u)|: only the distinct rows of (a_t(x))_t matter
        g24 = np.arange(24) / 24
        X, Y, T = np.meshgrid(g24, g24, g24, indexing="ij")
        A = np.stack([np.broadcast_to(t.a(X, Y, T), X.shape).ravel() for t in sym.terms], axis=1)
        A = np.unique(A.astype(complex), axis=0)
        sup = np.zeros(len(U))
        for i0 in range(0, len(U), chunk):
            u = U[i0: i0 + chunk]
            Phi = np.stack([t.phi(u) for t in sym.terms])
            sup[i0: i0 + chunk] = np.max(np.abs(A @ Phi), axis=0)
        integral = np.sum(sup) * dx**D
    else:
        xs = (np.arange(x_grid) + 0.0) / x_grid
        Xg = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1).reshape(-1, 3)
        sup = np.zeros(len(U))
        for i0 in range(0, len(U), chunk):
            u = U[i0: i0 + chunk]
            vals = sym(Xg[:, None, :], u[None, :, :])
            sup[i0: i0 + chunk] = np.max(np.abs(vals), axis=0)
        integral = np.sum(sup) * dx**D
    if tail > tail_tol * max(integral, 1.0) * 10:
        raise TruncationError(f"kernel tail {tail:.2e} above tolerance")
    return float(integral + tail)


def schrodinger_kernel(f_lam: Callable, bf: BlockForm, xi, xi2, q_nodes, q_weights) -> np.ndarray:
    """Integral kernel ``K(xi, xi')`` of ``int f^lambda(v) pi^lambda(v)^* dv`` on ``L^2(R)`` (H1).

    With ``v = p P + q Q`` and ``pi(-p, -q) phi(xi) = exp(i(eta p q / 2 - sqrt(eta) q xi))
    phi(xi - sqrt(eta) p)``, the substitution ``xi' = xi - sqrt(eta) p`` gives

        K(xi, xi') = eta^{-1/2} int f^lambda(p P + q Q) exp(-i sqrt(eta) q (xi + xi') / 2) dq,

    ``p = (xi - xi') / sqrt(eta)``.  ``f_lam`` maps first-stratum points ``(..., 2)`` to
    values; the ``q`` integral uses the given nodes and weights.
    """
    eta = float(bf.eta[0])
    xi, xi2 = np.broadcast_arrays(np.asarray(xi, float), np.asarray(xi2, float))
    p = (xi - xi2) / np.sqrt(eta)
    m = 0.5 * (xi + xi2)
    P, Q = bf.P[:, 0], bf.Q[:, 0]
    v = p[..., None, None] * P + np.asarray(q_nodes)[:, None] * Q          # (..., nq, 2)
    vals = f_lam(v) * np.exp(-1j * np.sqrt(eta) * np.asarray(q_nodes) * m[..., None])
    return vals @ np.asarray(q_weights) / np.sqrt(eta)


def plancherel_check(f: Callable, s: float = 1.0, center=(0.0, 0.0, 0.0), n_lambda: int = 24,
                     tail_tol: float = 1e-12, points_per_scale: int = 6) -> dict:
    """Both sides of the Plancherel identity on H1 for a Gaussian-dominated ``f``.

    ``f`` maps exponential coordinates ``(..., 3)`` to complex values and is
    bounded by a multiple of ``exp(-|w - center|^2 / s^2)``.  The left side is
    ``int |f|^2`` by the trapezoid rule on a box.  The right side is
    ``c0 int |lambda| ||f^(pi^lambda)||_HS^2 d lambda``: for each Gauss-Legendre
    node ``lambda`` the operator ``f^(pi^lambda)`` is realised through its
    Schrodinger-model kernel (:func:`schrodinger_kernel`), and its HS norm is
    the ``L^2`` norm of that kernel, evaluated in the rotated coordinates
    ``(xi - xi', (xi + xi') / 2)`` (unit Jacobian).
    """
    alg = builtin_algebra("h1")
    center = np.asarray(center, dtype=float)
    L = s * np.sqrt(np.log(1.0 / tail_tol))
    m = int(np.ceil(2 * L / s * points_per_scale)) | 1
    axes = [np.linspace(c - L, c + L, m) for c in center]
    dx = axes[0][1] - axes[0][0]
    Pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = np.asarray(f(Pts), dtype=complex)
    lhs = float(np.sum(np.abs(vals) ** 2) * dx**3)

    lam_max = 1.1 * np.sqrt(2.0 * np.log(1.0 / tail_tol)) / s
    xl, wl = roots_legendre(n_lambda)
    lam_pos = 0.5 * lam_max * (xl + 1)
    w_pos = 0.5 * lam_max * wl
    lams = np.concatenate([-lam_pos[::-1], lam_pos])
    wls = np.concatenate([w_pos[::-1], w_pos])

    z = axes[2]
    # the kernel's dependence on (xi + xi')/2 has band limit set by the v-extent of f
    k_max = 2.0 * np.sqrt(np.log(1.0 / tail_tol)) / s + 1.0
    dk = np.pi / (2.0 * (L + np.max(np.abs(center[:2]))))
    kk = np.arange(-k_max, k_max + dk, dk)
    rhs = 0.0
    for lam, wlam in zip(lams, wls):
        bf = block_form(alg, np.array([lam]))
        eta = float(bf.eta[0])
        flam_grid = (vals * np.exp(-1j * lam * z)).sum(axis=2) * dx     # f^lambda on the v-box

        def f_lam(v, _g=flam_grid):
            # v lies on the box lattice up to rounding: index it
            i = np.rint((v[..., 0] - axes[0][0]) / dx).astype(int)
            j = np.rint((v[..., 1] - axes[1][0]) / dx).astype(int)
            ok = (i >= 0) & (i < m) & (j >= 0) & (j < m)
            out = np.zeros(v.shape[:-1], dtype=complex)
            out[ok] = _g[i[ok], j[ok]]
            return out

        # rotated kernel coordinates: d = xi - xi' on the p-lattice, mid = (xi + xi') / 2
        sign = float(bf.Q[1, 0])
        p_nodes = (axes[0] * bf.P[0, 0])
        q_nodes = axes[1] * sign
        d = np.sqrt(eta) * p_nodes
        mid = kk / np.sqrt(eta)
        K = schrodinger_kernel(f_lam, bf, 0.5 * d[:, None] + mid[None, :],
                               -0.5 * d[:, None] + mid[None, :], q_nodes, np.full(m, dx))
        hs2 = float(np.sum(np.abs(K) ** 2) * (np.sqrt(eta) * dx) * (dk / np.sqrt(eta)))
        rhs += PLANCHEREL_C0_H1 * eta * hs2 * wlam
    rel = abs(rhs - lhs) / lhs if lhs > 0 else abs(rhs - lhs)
    return {"lhs": lhs, "rhs": float(rhs), "rel_err": float(rel), "n_lambda": int(len(lams)),
            "box_points": int(m)}
