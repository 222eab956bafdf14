"""The acceptance suite: twelve numbered checks with thresholds and time budgets.

Each ``criterion_*`` function runs one check at either the full or the quick
size and returns a :class:`CriterionResult`.  Results are deterministic given
the seed; wall-clock timings are kept apart from the metrics so that the JSON
artifacts are byte-stable across runs.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import measures as Ms
from . import symbols as S
from .dual import block_form, grad_eta_bracket, grad_eta_fd, sample_lambda0, zeta
from .hermite import (HermiteTruncation, op_P, op_Q, op_W, op_Wbar, op_sublaplacian,
                      op_vector, spectral_projection, t_operator_check, truncated_spectrum,
                      zeta_diagonal)
from .lie import builtin_algebra, heisenberg_algebra
from .nilmanifold import (NilmanifoldGrid, character_eigenpairs, convergence_slope,
                          eigensolve_fourier, match_spectrum, pairing_sequence)

__all__ = [
    "SCHEMA_VERSION",
    "CriterionResult",
    "CRITERIA",
    "run_all",
    "write_artifacts",
    "format_table",
    "trig_expressions",
    "MOMENT_POLYS",
    "fit_character_limit",
]

SCHEMA_VERSION = 1
U0_CHARACTER = 4 * np.pi ** 2
MOMENT_POLYS = ({"1": 1.0}, {"w1": 1.0}, {"w2": 1.0},
                {"w1w1": 1.0}, {"w1w2": 1.0}, {"w2w2": 1.0})


@dataclass
class CriterionResult:
    """Outcome of one acceptance check.

    ``metrics`` holds the numbers the verdict is based on; ``seconds`` and
    ``budget`` are reported in the table but never written to artifacts.
    """

    number: int
    name: str
    passed: bool
    metrics: dict
    threshold: str
    budget: float
    seconds: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def in_budget(self) -> bool:
        return self.seconds <= self.budget

    def to_json(self) -> dict:
        return {"criterion": self.number, "name": self.name, "passed": bool(self.passed),
                "threshold": self.threshold, "config": self.config,
                "metrics": _plain(self.metrics)}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dense(m) -> np.ndarray:
    return m.toarray() if hasattr(m, "toarray") else np.asarray(m)


# ---------------------------------------------------------------------------
# 1-6: representation-level identities


_LADDER_ALGEBRAS = {1: lambda: builtin_algebra("h1"),
                    2: lambda: builtin_algebra("h1xh1"),
                    3: lambda: heisenberg_algebra(3)}


def criterion_ladder(quick: bool = False, seed: int = 0) -> CriterionResult:
    """Matrix elements of pi(W_j), pi(Wbar_j) against the closed form, entrywise."""
    rng = np.random.default_rng(seed)
    N = 40 if not quick else 16
    worst, worst_split = 0.0, 0.0
    for d, make in _LADDER_ALGEBRAS.items():
        alg = make()
        bf = block_form(alg, rng.standard_normal(alg.p))
        tr = HermiteTruncation(d, N)
        alphas = tr.alphas()
        cols = np.arange(tr.dim)
        for j in range(d):
            c = np.sqrt(bf.eta[j] / 2.0)
            down, up = alphas.copy(), alphas.copy()
            down[:, j] -= 1
            up[:, j] += 1
            ok_d, ok_u = alphas[:, j] > 0, alphas[:, j] + 1 < N
            refW = sp.coo_matrix((c * np.sqrt(alphas[ok_d, j]),
                                  (np.ravel_multi_index(down[ok_d].T, tr.shape), cols[ok_d])),
                                 shape=(tr.dim, tr.dim))
            refWb = sp.coo_matrix((-c * np.sqrt(alphas[ok_u, j] + 1.0),
                                   (np.ravel_multi_index(up[ok_u].T, tr.shape), cols[ok_u])),
                                  shape=(tr.dim, tr.dim))
            W, Wb = op_W(bf, tr, j).matrix, op_Wbar(bf, tr, j).matrix
            worst = max(worst, _absmax(W - refW), _absmax(Wb - refWb))
            P, Q = op_P(bf, tr, j).matrix, op_Q(bf, tr, j).matrix
            worst_split = max(worst_split, _absmax(W - 0.5 * (P - 1j * Q)),
                              _absmax(Wb - 0.5 * (P + 1j * Q)))
    err = max(worst, worst_split)
    return CriterionResult(1, "ladder matrix elements", err <= 1e-14,
                           {"closed_form_err": worst, "PQ_split_err": worst_split},
                           "entrywise <= 1e-14", 1.0, config={"N": N, "d": [1, 2, 3]})


def _absmax(m) -> float:
    m = sp.csr_matrix(m)
    return float(np.abs(m.data).max(initial=0.0))


def _laplacian_from_frame(alg, bf, nu, tr) -> np.ndarray:
    """pi(-L) = -sum_i pi(e_i)^2 over the ambient orthonormal frame."""
    ops = [_dense(op_vector(bf, nu, tr, e).matrix) for e in np.eye(alg.q)]
    return -sum(o @ o for o in ops)


_COMMUTATOR_ALGEBRAS = ("h1", "h1xh1", "free3", "quaternionic")


def criterion_commutators(quick: bool = False, seed: int = 0) -> CriterionResult:
    """[pi(W_j), pi(-L)] = 2 eta_j pi(W_j) and the conjugate, with -L built from the frame."""
    rng = np.random.default_rng(seed + 1)
    draws = 50 if not quick else 12
    worst = 0.0
    records = []
    for i in range(draws):
        name = _COMMUTATOR_ALGEBRAS[i % len(_COMMUTATOR_ALGEBRAS)]
        alg = builtin_algebra(name)
        bf = block_form(alg, rng.standard_normal(alg.p) * rng.uniform(0.5, 2.0))
        nu = rng.standard_normal(bf.k)
        tr = HermiteTruncation(bf.d, 8 if bf.d <= 1 else 6)
        L = _laplacian_from_frame(alg, bf, nu, tr)
        idx = np.flatnonzero(tr.interior_mask(2))
        res = 0.0
        for j in range(bf.d):
            W, Wb = _dense(op_W(bf, tr, j).matrix), _dense(op_Wbar(bf, tr, j).matrix)
            c1 = W @ L - L @ W - 2 * bf.eta[j] * W
            c2 = Wb @ L - L @ Wb + 2 * bf.eta[j] * Wb
            res = max(res, np.linalg.norm(c1[np.ix_(idx, idx)], 2),
                      np.linalg.norm(c2[np.ix_(idx, idx)], 2))
        records.append(res)
        worst = max(worst, res)
    return CriterionResult(2, "ladder commutators", worst <= 1e-10,
                           {"max_residual": worst, "draws": draws},
                           "interior residual <= 1e-10", 10.0,
                           config={"algebras": list(_COMMUTATOR_ALGEBRAS)})


def criterion_sandwich(quick: bool = False, seed: int = 0) -> CriterionResult:
    """P_zeta pi(P_j) P_zeta = P_zeta pi(Q_j) P_zeta = 0 on every truncated eigenspace."""
    rng = np.random.default_rng(seed + 2)
    cases = [("h1", 30), ("h1xh1", 12), ("quaternionic", 12), ("free3", 30)]
    if quick:
        cases = [(n, max(6, N // 2)) for n, N in cases]
    worst, count = 0.0, 0
    for name, N in cases:
        alg = builtin_algebra(name)
        bf = block_form(alg, rng.standard_normal(alg.p))
        tr = HermiteTruncation(bf.d, N)
        ops = []
        for j in range(bf.d):
            ops += [op_P(bf, tr, j).matrix, op_Q(bf, tr, j).matrix]
        for z, _ in truncated_spectrum(bf, tr, depth=1):
            Pz = spectral_projection(bf, tr, z).matrix
            for o in ops:
                worst = max(worst, float(np.abs(_dense(Pz @ o @ Pz)).max(initial=0.0)))
            count += 1
    return CriterionResult(3, "sandwich vanishing", worst <= 1e-12,
                           {"max_entry": worst, "eigenspaces": count},
                           "<= 1e-12", 10.0, config={"cases": cases})


_BUNDLED = ("h1", "free3", "quaternionic", "h1xh1", "random42")


def criterion_gradient(quick: bool = False, seed: int = 0) -> CriterionResult:
    """Bracket [P_j, Q_j] against finite differences of the sorted etas."""
    n = 100 if not quick else 10
    per_alg = {}
    for name in _BUNDLED:
        alg = builtin_algebra(name)
        worst = 0.0
        for lam in sample_lambda0(alg, n, seed=seed):
            bf = block_form(alg, lam)
            br = grad_eta_bracket(alg, bf)
            fd = grad_eta_fd(alg, lam, h=1e-3, richardson=True)
            for cl in bf.clusters():
                a, b = br[:, cl].sum(axis=1), fd[:, cl].sum(axis=1)
                if cl.size == 1:
                    a, b = br[:, cl[0]], fd[:, cl[0]]
                worst = max(worst, np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
        per_alg[name] = worst
    err = max(per_alg.values())
    return CriterionResult(4, "gradient lemma", err <= 1e-6,
                           {"max_rel_err": err, "per_algebra": per_alg, "samples": n},
                           "relative error <= 1e-6", 30.0)


_OMEGA0_ALGEBRAS = ("h1", "h1xh1", "quaternionic", "random42")


def criterion_corollary(quick: bool = False, seed: int = 0) -> CriterionResult:
    """Commutator and sandwich identities of the tensor operator T."""
    rng = np.random.default_rng(seed + 4)
    draws = 10 if not quick else 3
    worst = {"T_routes": 0.0, "commutator": 0.0, "sandwich": 0.0, "corollary": 0.0}
    checked = 0
    for i in range(draws):
        alg = builtin_algebra(_OMEGA0_ALGEBRAS[i % len(_OMEGA0_ALGEBRAS)])
        lam = sample_lambda0(alg, 1, seed=seed + 100 + i)[0]
        bf = block_form(alg, lam)
        N = (12 if bf.d == 1 else 7) if not quick else 6
        rep = t_operator_check(alg, bf, HermiteTruncation(bf.d, N),
                               rng.standard_normal(alg.p), N, zeta_tol=1e-9)
        for key in worst:
            worst[key] = max(worst[key], rep[key])
        checked += rep["sandwich_checked"]
    err = max(worst.values())
    return CriterionResult(5, "tensor-operator identities", err <= 1e-8,
                           dict(worst, sandwich_blocks=checked, draws=draws),
                           "interior residual <= 1e-8", 120.0,
                           config={"algebras": list(_OMEGA0_ALGEBRAS)})


def criterion_zeta_diagonal(quick: bool = False, seed: int = 0) -> CriterionResult:
    """Diagonal of pi(-L) (frame route and diagonal route) against zeta(alpha, lambda)."""
    rng = np.random.default_rng(seed + 5)
    worst = 0.0
    for name in _BUNDLED:
        alg = builtin_algebra(name)
        bf = block_form(alg, rng.standard_normal(alg.p))
        tr = HermiteTruncation(bf.d, 10 if bf.d <= 1 else 5)
        ref = np.array([zeta(bf, a) for a in tr.alphas()])
        diag = np.real(_dense(op_sublaplacian(bf, None, tr).matrix).diagonal())
        frame = _laplacian_from_frame(alg, bf, None, tr)
        idx = np.flatnonzero(tr.interior_mask(1))
        off = frame[np.ix_(idx, idx)] - np.diag(ref[idx])
        scale = max(1.0, ref.max())
        worst = max(worst, np.abs(diag - ref).max() / scale,
                    np.abs(zeta_diagonal(bf, tr) - ref).max() / scale,
                    np.abs(off).max() / scale)
    return CriterionResult(6, "spectrum of H(lambda)", worst <= 1e-12,
                           {"max_rel_err": worst}, "<= 1e-12", 1.0)


# ---------------------------------------------------------------------------
# 7: Plancherel


PLANCHEREL_FUNCTIONS = {
    "isotropic": (lambda w: np.exp(-np.sum(w ** 2, -1)), 1.0, (0.0, 0.0, 0.0)),
    "anisotropic": (lambda w: np.exp(-(w[..., 0] ** 2 + 2 * w[..., 1] ** 2
                                       + 0.5 * w[..., 2] ** 2)), 1.0 / np.sqrt(0.5),
                    (0.0, 0.0, 0.0)),
    "shifted_modulated": (lambda w: np.exp(-np.sum((w - np.array([0.3, -0.2, 0.5])) ** 2, -1)
                                           / 0.7) * np.exp(1j * w[..., 1]),
                          0.9, (0.3, -0.2, 0.5)),
}


def criterion_plancherel(quick: bool = False, seed: int = 0) -> CriterionResult:
    names = list(PLANCHEREL_FUNCTIONS) if not quick else ["isotropic"]
    out = {}
    for name in names:
        f, s, c = PLANCHEREL_FUNCTIONS[name]
        r = S.plancherel_check(f, s=s, center=c)
        out[name] = {"lhs": r["lhs"], "rhs": r["rhs"], "rel_err": r["rel_err"]}
    err = max(v["rel_err"] for v in out.values())
    return CriterionResult(7, "Plancherel on H1", err <= 1e-3,
                           {"max_rel_err": err, "functions": out}, "relative error <= 1e-3", 60.0)


# ---------------------------------------------------------------------------
# 8: nilmanifold spectrum


def criterion_spectrum(quick: bool = False, seed: int = 0) -> CriterionResult:
    coarse_n, fine_n = (24, 48) if not quick else (16, 32)
    coarse = eigensolve_fourier(NilmanifoldGrid(coarse_n), 11)
    fine = eigensolve_fourier(NilmanifoldGrid(fine_n), 11)
    m = match_spectrum(fine)
    slope = convergence_slope(coarse, fine)
    ok = m["max_rel_err"] <= 0.02 and abs(slope - 2.0) <= 0.3
    return CriterionResult(8, "nilmanifold spectrum", ok,
                           {"max_rel_err": m["max_rel_err"], "slope": slope,
                            "grid": m["grid"], "oracle": m["oracle"]},
                           "rel err <= 2%, slope 2.0 +- 0.3", 300.0,
                           config={"coarse_n": coarse_n, "fine_n": fine_n})


# ---------------------------------------------------------------------------
# 9: quantization bound


def criterion_quantization(quick: bool = False, seed: int = 0) -> CriterionResult:
    n = 16 if not quick else 12
    epsilons = (0.5, 0.2, 0.1)
    grid = NilmanifoldGrid(n)
    rows = []
    worst = 0.0
    for name in S.bundled_symbols():
        sym = S.load_symbol(name)
        bound = S.kernel_l1_bound(sym)
        for eps in epsilons:
            norm = S.measured_operator_norm(sym, eps, grid, seed=seed)
            rows.append({"symbol": name, "eps": eps, "norm": norm, "bound": bound})
            worst = max(worst, norm / bound)
    return CriterionResult(9, "quantization bound", worst <= 1.05,
                           {"max_norm_over_bound": worst, "rows": rows},
                           "norm <= 1.05 * L1 bound", 120.0, config={"n": n})


# ---------------------------------------------------------------------------
# 10-11: semiclassical measures of character eigenfunctions


def trig_expressions(K: int) -> list[str]:
    """Real trigonometric monomials on the (X, Y) torus up to frequency ``K``."""
    out = ["1"]
    for a in range(K + 1):
        for b in range(-K, K + 1):
            if a == 0 and b <= 0:
                continue
            arg = f"2*pi*({a}*x1+{b}*x2)"
            out += [f"cos({arg})", f"sin({arg})"]
    return out


def fit_character_limit(grid: NilmanifoldGrid, pair, K: int, omegas, alg=None):
    """Fit a character measure to the pairings of one eigenfunction.

    The test symbols are ``a(x) * poly(-i d/dv) G`` for trigonometric ``a`` of
    degree ``<= K`` and the six moment polynomials of degree ``<= 2``.  Since
    ``Op_eps(a phi) = a Op_eps(phi)``, one quantized application per
    polynomial suffices.  Returns ``(measure, relative fit residual)``.
    """
    alg = builtin_algebra("h1") if alg is None else alg
    xs = trig_expressions(K)
    tests = [S.SymbolField.from_kernel(S.separable_symbol(ax, kind="gaussian_poly",
                                                         scale=1.0, poly=p))
             for ax in xs for p in MOMENT_POLYS]
    P = grid.polarized()
    outs = [S.op_epsilon_apply(S.separable_symbol("1", kind="gaussian_poly", scale=1.0, poly=p),
                               pair.eps, pair.psi, grid) for p in MOMENT_POLYS]
    data = [grid.inner(pair.psi, S.compile_expression(ax)(P[..., 0], P[..., 1], P[..., 2]) * o)
            for ax in xs for o in outs]
    template = Ms.character_template(alg, Ms.xy_template_points(K), omegas)
    return Ms.fit_measure(template, tests, data)


def criterion_localization(quick: bool = False, seed: int = 0) -> CriterionResult:
    n, top = 32, 12
    steps = (2, 4, 8, 12) if not quick else (4, 12)
    grid = NilmanifoldGrid(n)
    pairs = character_eigenpairs(grid, [(m, 0) for m in range(1, top + 1)], U0_CHARACTER)
    seq = pairing_sequence(grid, pairs, S.load_symbol("notch"))
    vals = np.abs(seq["values"])
    ratio = float(vals[-1] / vals[0])
    omegas = Ms.polar_omegas(np.arange(0.05, 1.51, 0.05), 16)
    loc = []
    for m in steps:
        meas, _ = fit_character_limit(grid, pairs[m - 1], 1, omegas)
        loc.append(Ms.localization_residual(meas))
    decreasing = all(b < a for a, b in zip(loc, loc[1:]))
    ok = ratio <= 0.05 and loc[-1] <= 1e-2 and decreasing
    return CriterionResult(10, "localization", ok,
                           {"notch_ratio": ratio, "notch_values": vals,
                            "localization_residuals": loc, "decreasing": decreasing},
                           "notch ratio <= 0.05, final residual <= 1e-2", 300.0,
                           config={"n": n, "modes": top, "fit_steps": list(steps)})


INVARIANCE_TESTS = ("exp(cos(2*pi*x1))", "exp(sin(2*pi*(x1+x2)))", "exp(0.5*cos(2*pi*x2))")


def criterion_invariance(quick: bool = False, seed: int = 0) -> CriterionResult:
    levels = ((16, 6, 1), (24, 9, 2), (32, 12, 3)) if not quick else ((16, 6, 1), (24, 9, 2))
    omegas = Ms.polar_omegas(np.arange(0.1, 1.51, 0.1), 8)
    inv_tests = [S.SymbolField.from_kernel(S.separable_symbol(ax, scale=1.0))
                 for ax in INVARIANCE_TESTS]
    res = []
    for n, m, K in levels:
        grid = NilmanifoldGrid(n)
        pair = character_eigenpairs(grid, [(m, 0)], U0_CHARACTER)[0]
        meas, _ = fit_character_limit(grid, pair, K, omegas)
        res.append(Ms.invariance_residual(meas, Ms.omega_v_generator,
                                          np.linspace(0.1, 1.0, 10), inv_tests))
    decreasing = all(b < a for a, b in zip(res, res[1:]))
    ok = res[-1] <= 5e-2 and decreasing
    return CriterionResult(11, "invariance", ok,
                           {"residuals": res, "decreasing": decreasing},
                           "final residual <= 5e-2, decreasing", 300.0,
                           config={"levels": [list(l) for l in levels]})


CRITERIA: dict[int, Callable[..., CriterionResult]] = {
    1: criterion_ladder,
    2: criterion_commutators,
    3: criterion_sandwich,
    4: criterion_gradient,
    5: criterion_corollary,
    6: criterion_zeta_diagonal,
    7: criterion_plancherel,
    8: criterion_spectrum,
    9: criterion_quantization,
    10: criterion_localization,
    11: criterion_invariance,
}


def run_criterion(number: int, quick: bool = False, seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    res = CRITERIA[number](quick=quick, seed=seed)
    res.seconds = time.perf_counter() - t0
    return res


def run_all(quick: bool = False, seed: int = 0, only=None, progress: Callable | None = None):
    """Run criteria 1-11 (or the subset ``only``) in order."""
    out = []
    for number in sorted(CRITERIA if only is None else only):
        res = run_criterion(number, quick=quick, seed=seed)
        if progress is not None:
            progress(res)
        out.append(res)
    return out


def write_artifacts(results, out_dir, quick: bool, seed: int) -> Path:
    """One JSON file per criterion plus a summary; no timings, sorted keys."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in results:
        payload = {"schema_version": SCHEMA_VERSION, "seed": seed, "quick": quick, **r.to_json()}
        (out_dir / f"criterion_{r.number:02d}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n")
    summary = {"schema_version": SCHEMA_VERSION, "seed": seed, "quick": quick,
               "results": [{"criterion": r.number, "name": r.name, "passed": bool(r.passed)}
                           for r in results]}
    path = out_dir / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


def format_line(r: CriterionResult) -> str:
    verdict = "PASS" if r.passed and r.in_budget else "FAIL"
    note = "" if r.in_budget else f" (over budget {r.budget:.0f}s)"
    return f"{verdict}  [{r.number:2d}] {r.name:<28s} {r.threshold:<42s} {r.seconds:7.2f}s{note}"


def format_table(results) -> str:
    return "\n".join(format_line(r) for r in results)
