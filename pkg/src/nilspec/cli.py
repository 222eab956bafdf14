"""The ``nilspec`` command.

Every command writes one JSON document (or a CSV table with a JSON comment
header) that echoes the configuration, the seed, the schema version and the
library versions.  No timestamps or timings go into artifacts, so identical
inputs give identical bytes.

Exit codes: 0 success, 1 invalid input or usage, 2 a numeric check failed
(the failing residual is named on stderr).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

SCHEMA_VERSION = 1
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    """Invalid command-line input (exit code 1)."""


class NumericFailure(Exception):
    """A computed residual exceeded its tolerance (exit code 2)."""

    def __init__(self, message: str):
        super().__init__(f"numeric check failed: {message}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _apply_threads() -> None:
    n = os.environ.get("NILSPEC_THREADS")
    if n:
        for var in _THREAD_VARS:
            os.environ[var] = n


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__
    return {"nilspec": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__}


def _config(args) -> dict:
    skip = {"func", "out", "format", "command_path", "group", "action"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _envelope(args, result) -> dict:
    from .verify import _plain
    return {"schema_version": SCHEMA_VERSION, "command": args.command_path,
            "seed": getattr(args, "seed", None), "config": _plain(_config(args)),
            "versions": _versions(), "result": _plain(result)}


def _emit(args, result, rows=None) -> None:
    """Write JSON, or CSV when ``--format csv`` and the command produced rows."""
    doc = _envelope(args, result)
    if getattr(args, "format", "json") == "csv" and rows is not None:
        from .verify import _plain
        buf = io.StringIO()
        meta = {k: doc[k] for k in ("schema_version", "command", "seed", "config", "versions")}
        buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        rows = _plain(rows)
        fields = list(dict.fromkeys(k for row in rows for k in row))
        writer = csv.DictWriter(buf, fieldnames=fields, restval="", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    else:
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    out = getattr(args, "out", None)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _check(name: str, value: float, tol: float) -> None:
    if not value <= tol:
        raise NumericFailure(f"{name} = {value:.3e} > {tol:.3e}")


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# Commands


def cmd_algebra_info(args):
    from .dual import estimate_generic_strata
    from .lie import homogeneous_dimension, load_algebra

    alg = load_algebra(args.algebra)
    k0, nmax = estimate_generic_strata(alg, seed=args.seed)
    info = {"name": alg.name, "q": alg.q, "p": alg.p, "Q": homogeneous_dimension(alg),
            "bracket_rank": alg.bracket_rank(),
            "generic_radical_dim": k0, "generic_distinct_etas": nmax}
    if args.format == "text":
        print(f"{alg.name}: q={alg.q}, p={alg.p}, Q={info['Q']}, "
              f"bracket rank={info['bracket_rank']}")
        return
    _emit(args, info)


def cmd_dual_sweep(args):
    from .dual import block_form, cluster_sizes
    from .lie import load_algebra
    import numpy as np

    alg = load_algebra(args.algebra)
    rng = np.random.default_rng(args.seed)
    rows = []
    for i in range(args.samples):
        lam = rng.standard_normal(alg.p) * args.radius
        bf = block_form(alg, lam)
        res = bf.residuals(alg)
        rows.append({"index": i, "lam": ";".join(f"{v:.17g}" for v in lam), "k": bf.k, "d": bf.d,
                     "eta": ";".join(f"{v:.17g}" for v in bf.eta),
                     "clusters": ";".join(str(c) for c in cluster_sizes(bf.eta)),
                     "max_residual": max(res.values())})
    worst = max((r["max_residual"] for r in rows), default=0.0)
    _emit(args, {"samples": rows, "max_residual": worst}, rows)
    _check("block-form residual", worst, args.tol)


def cmd_rep_check(args):
    import numpy as np

    from .dual import block_form
    from .hermite import HermiteTruncation, t_operator_check
    from .lie import load_algebra
    from .verify import _laplacian_from_frame, _dense
    from .hermite import op_W, op_Wbar

    alg = load_algebra(args.algebra)
    rng = np.random.default_rng(args.seed)
    lam = np.array(args.lam) if args.lam else rng.standard_normal(alg.p)
    if lam.shape != (alg.p,):
        raise UsageError(f"--lambda needs {alg.p} components")
    bf = block_form(alg, lam)
    nu = np.array(args.nu) if args.nu else np.zeros(bf.k)
    if nu.shape != (bf.k,):
        raise UsageError(f"--nu needs k={bf.k} components at this lambda")
    tr = HermiteTruncation(bf.d, args.N)
    L = _laplacian_from_frame(alg, bf, nu, tr)
    idx = np.flatnonzero(tr.interior_mask(2))
    comm = 0.0
    for j in range(bf.d):
        W, Wb = _dense(op_W(bf, tr, j).matrix), _dense(op_Wbar(bf, tr, j).matrix)
        comm = max(comm,
                   np.linalg.norm((W @ L - L @ W - 2 * bf.eta[j] * W)[np.ix_(idx, idx)], 2),
                   np.linalg.norm((Wb @ L - L @ Wb + 2 * bf.eta[j] * Wb)[np.ix_(idx, idx)], 2))
    result = {"lam": lam, "nu": nu, "k": bf.k, "d": bf.d, "eta": bf.eta,
              "ladder_commutator": comm}
    checks = [("ladder commutator", comm)]
    if bf.k == 0 and bf.d > 0:
        rep = t_operator_check(alg, bf, tr, rng.standard_normal(alg.p),
                               min(args.N, 12 if bf.d == 1 else 7), zeta_tol=1e-9)
        result["tensor_operator"] = rep
        checks += [(f"tensor operator {k}", rep[k])
                   for k in ("T_routes", "commutator", "sandwich", "corollary")]
    _emit(args, result)
    for name, value in checks:
        print(f"{name:<28s} interior  {value:.3e}  {'pass' if value <= args.tol else 'FAIL'}",
              file=sys.stderr)
    for name, value in checks:
        _check(name, value, args.tol)


def cmd_quantize(args):
    from . import symbols as S
    from .nilmanifold import NilmanifoldGrid

    if args.algebra not in ("h1", "examples/h1.json") and not args.algebra.endswith("h1.json"):
        raise UsageError("quantization is implemented on the Heisenberg nilmanifold only (h1)")
    if not (args.symbol or args.symbol_opt):
        raise UsageError("give a symbol (bundled name or JSON file)")
    sym = S.load_symbol(args.symbol_opt or args.symbol)
    bound = S.kernel_l1_bound(sym)
    grid = NilmanifoldGrid(args.n)
    rows = [{"eps": eps, "norm": S.measured_operator_norm(sym, eps, grid, seed=args.seed),
             "bound": bound} for eps in args.eps]
    _emit(args, {"symbol": sym.name, "l1_bound": bound, "rows": rows}, rows)
    _check("norm / bound", max(r["norm"] / r["bound"] for r in rows), 1.05)


def cmd_spectrum(args):
    from .nilmanifold import (NilmanifoldGrid, convergence_slope, eigensolve_fourier,
                              oracle_eigenvalues)

    import numpy as np

    grid = NilmanifoldGrid(args.n)
    if args.potential is not None:
        vals = _potential_spectrum(grid, args.potential, args.count)
    else:
        vals = eigensolve_fourier(grid, args.count, U0=args.U0)
    clusters = _clusters(vals)
    rows = [{"index": i, "E": v, "cluster": c} for i, (v, c) in enumerate(zip(vals, clusters))]
    result = {"eigenvalues": vals, "rows": rows}
    if args.potential is not None:
        _emit(args, result, rows)
        return
    # constant potentials shift the analytic oracle; errors are relative to the nonzero part
    oracle = oracle_eigenvalues(len(vals), args.U0)
    for row, ref in zip(rows, oracle):
        row["oracle"] = ref
        row["rel_err"] = abs(row["E"] - ref) / max(abs(ref - args.U0), 1.0)
    worst = max(row["rel_err"] for row in rows)
    result["max_rel_err"] = worst
    if args.slope and args.n % 2 == 0 and args.U0 == 0.0 and args.count >= 11:
        coarse = eigensolve_fourier(NilmanifoldGrid(args.n // 2), args.count)
        result["slope"] = convergence_slope(coarse, vals)
    _emit(args, result, rows)
    _check("max relative eigenvalue error", worst, args.tol)


def _clusters(vals) -> list[int]:
    """Cluster labels with width ``max(5e-3 E, 1e-9)`` between consecutive values."""
    out, label = [], 0
    for i, v in enumerate(vals):
        if i and abs(v - vals[i - 1]) > max(5e-3 * abs(v), 1e-9):
            label += 1
        out.append(label)
    return out


def _potential_spectrum(grid, expr, count):
    import numpy as np

    from .nilmanifold import assemble_sublaplacian, eigensolve
    from .symbols import _check_periodic, compile_expression

    U = compile_expression(expr)
    _check_periodic(U)
    P = grid.polarized()
    Uv = np.real(np.broadcast_to(U(P[..., 0], P[..., 1], P[..., 2]), grid.shape))
    pairs = eigensolve(assemble_sublaplacian(grid, Uv), count, sigma=float(Uv.min()) - 1.0,
                       grid=grid)
    return np.array([p.E for p in pairs])


def cmd_pairings(args):
    import numpy as np

    from . import symbols as S
    from .nilmanifold import NilmanifoldGrid, character_eigenpairs, pairing_sequence

    grid = NilmanifoldGrid(args.n)
    pairs = character_eigenpairs(grid, [(m, 0) for m in range(1, args.modes + 1)], args.U0)
    if not (args.symbol or args.symbol_opt):
        raise UsageError("give a symbol (bundled name or JSON file)")
    seq = pairing_sequence(grid, pairs, S.load_symbol(args.symbol_opt or args.symbol))
    rows = [{"mode": i + 1, "E": e, "eps": float(e) ** -0.5, "re": v.real, "im": v.imag,
             "abs": abs(v)} for i, (e, v) in enumerate(zip(seq["E"], seq["values"]))]
    _emit(args, {"rows": rows, "dropped": seq["dropped"], "bound": seq["bound"],
                 "final_over_initial": float(np.abs(seq["values"][-1] / seq["values"][0]))
                 if len(rows) else None}, rows)


def _load_measure(path):
    from .measures import OperatorValuedMeasure
    with open(path) as fh:
        return OperatorValuedMeasure.from_json(json.load(fh))


def _generator(name):
    from . import measures as Ms
    table = {"natural": Ms.natural_generator, "omega_v": Ms.omega_v_generator,
             "nu_r": Ms.nu_r_generator, "grad_zeta": Ms.grad_zeta_generator}
    return table[name]


def cmd_measure_pair(args):
    from . import measures as Ms
    from . import symbols as S

    meas = _load_measure(args.measure)
    field = S.SymbolField.from_kernel(S.load_symbol(args.symbol))
    v = Ms.pair(meas, field)
    _emit(args, {"pair": {"re": v.real, "im": v.imag}, "total_variation": Ms.total_variation(meas),
                 "atoms": len(meas)})


def cmd_measure_push(args):
    from . import measures as Ms

    meas = _load_measure(args.measure)
    pushed = Ms.flow_pushforward(meas, _generator(args.generator), args.s)
    rows = [{"atom": i, "x": ";".join(f"{c:.17g}" for c in a.x), "weight": a.weight}
            for i, a in enumerate(pushed.atoms)]
    _emit(args, {"measure": pushed.to_json(),
                 "total_variation_change": abs(Ms.total_variation(pushed)
                                               - Ms.total_variation(meas))}, rows)


def cmd_measure_residual(args):
    import numpy as np

    from . import measures as Ms
    from . import symbols as S
    from .verify import INVARIANCE_TESTS

    meas = _load_measure(args.measure)
    if args.kind == "localization":
        value = Ms.localization_residual(meas)
    else:
        tests = [S.SymbolField.from_kernel(S.separable_symbol(ax, scale=1.0))
                 for ax in INVARIANCE_TESTS]
        value = Ms.invariance_residual(meas, _generator(args.generator),
                                       np.linspace(0.1, 1.0, 10), tests)
    _emit(args, {"kind": args.kind, "residual": value})
    _check(f"{args.kind} residual", value, args.tol)


def cmd_verify_all(args):
    from . import verify as V

    only = sorted(set(args.only)) if args.only else None
    if only and any(c not in V.CRITERIA for c in only):
        raise UsageError(f"--only accepts criteria {sorted(V.CRITERIA)}")

    def progress(r):
        print(V.format_line(r), flush=True)

    results = V.run_all(quick=args.quick, seed=args.seed, only=only, progress=progress)
    passed = all(r.passed and r.in_budget for r in results)
    if args.out:
        V.write_artifacts(results, args.out, args.quick, args.seed)
    print(f"{'PASS' if passed else 'FAIL'}  {sum(r.passed for r in results)}/{len(results)} criteria")
    failed = [r for r in results if not (r.passed and r.in_budget)]
    if failed:
        raise NumericFailure("; ".join(_describe_failure(r) for r in failed))


def _describe_failure(r) -> str:
    if not r.passed:
        scalars = ", ".join(f"{k}={v:.3e}" for k, v in r.metrics.items()
                            if isinstance(v, float) or hasattr(v, "dtype") and v.ndim == 0)
        return f"criterion {r.number} ({r.name}): {scalars} vs {r.threshold}"
    return f"criterion {r.number} ({r.name}): runtime {r.seconds:.1f}s > {r.budget:.0f}s"


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nilspec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="group", required=True, parser_class=_Parser)

    def leaf(group_parser, name, func, help_text, fmt=("json",)):
        p = group_parser.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=fmt, default=fmt[0])
        return p

    g = sub.add_parser("algebra", help="step-two algebras").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    p = leaf(g, "info", cmd_algebra_info, "dimensions and generic strata",
             fmt=("text", "json"))
    p.add_argument("algebra", help="JSON file or built-in name")

    g = sub.add_parser("dual", help="dual geometry").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    p = leaf(g, "sweep", cmd_dual_sweep, "block forms at random lambda", fmt=("csv", "json"))
    p.add_argument("algebra")
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--radius", type=_positive, default=1.0)
    p.add_argument("--tol", type=_positive, default=1e-10)

    g = sub.add_parser("rep", help="Hermite representations").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    p = leaf(g, "check", cmd_rep_check, "ladder and tensor-operator identities")
    p.add_argument("algebra")
    p.add_argument("--lambda", "--lam", dest="lam", type=_floats,
                   help="comma-separated dual coordinates (default: random from --seed)")
    p.add_argument("--nu", type=_floats, help="radical coordinates, k components")
    p.add_argument("--N", type=int, default=10)
    p.add_argument("--tol", type=_positive, default=1e-8)

    p = sub.add_parser("quantize", help="quantized operator norm against the kernel L1 bound")
    p.set_defaults(func=cmd_quantize)
    p.add_argument("symbol", nargs="?", help="bundled symbol name or JSON file")
    p.add_argument("--symbol", dest="symbol_opt", help="same as the positional argument")
    p.add_argument("--algebra", default="h1")
    p.add_argument("--epsilon", "--eps", dest="eps", type=_floats, default=[0.5, 0.2, 0.1])
    p.add_argument("--grid", "--n", dest="n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("spectrum", help="nilmanifold sub-Laplacian eigenvalues")
    p.set_defaults(func=cmd_spectrum)
    p.add_argument("--grid", "--n", dest="n", type=int, default=24)
    p.add_argument("--count", type=int, default=11)
    p.add_argument("--U0", type=float, default=0.0, help="constant potential")
    p.add_argument("--potential", help="periodic expression in x1, x2, x3 (polarized chart)")
    p.add_argument("--slope", action="store_true", help="also solve at n/2 and report the order")
    p.add_argument("--tol", type=_positive, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("pairings", help="eigenfunction pairings along the character sequence")
    p.set_defaults(func=cmd_pairings)
    p.add_argument("symbol", nargs="?")
    p.add_argument("--symbol", dest="symbol_opt")
    p.add_argument("--grid", "--n", dest="n", type=int, default=32)
    p.add_argument("--kmax", "--modes", dest="modes", type=int, default=12)
    p.add_argument("--U0", type=float, default=4 * 3.141592653589793 ** 2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="json")

    g = sub.add_parser("measure", help="operator-valued measures").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    p = leaf(g, "pair", cmd_measure_pair, "pair a measure with a symbol")
    p.add_argument("measure")
    p.add_argument("symbol")
    p = leaf(g, "push", cmd_measure_push, "push a measure along a flow", fmt=("json", "csv"))
    p.add_argument("measure")
    p.add_argument("--generator", choices=("natural", "omega_v", "nu_r", "grad_zeta"), default="natural")
    p.add_argument("--s", type=float, default=1.0)
    p = leaf(g, "residual", cmd_measure_residual, "localization or invariance residual")
    p.add_argument("measure")
    p.add_argument("--kind", choices=("localization", "invariance"), default="localization")
    p.add_argument("--generator", choices=("natural", "omega_v", "nu_r", "grad_zeta"), default="natural")
    p.add_argument("--tol", type=_positive, default=5e-2)

    g = sub.add_parser("verify", help="acceptance suite").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    p = g.add_parser("all", help="run the acceptance criteria and print a pass/fail table")
    p.set_defaults(func=cmd_verify_all)
    p.add_argument("--quick", action="store_true", help="reduced sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", type=lambda t: [int(c) for c in t.split(",")], default=None)
    p.add_argument("--out", help="directory for JSON artifacts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.command_path = " ".join(v for v in (args.group, getattr(args, "action", None)) if v)
    _apply_threads()
    from .dual import StratumError
    try:
        args.func(args)
    except NumericFailure as exc:
        print(f"nilspec: {exc}", file=sys.stderr)
        return 2
    except (UsageError, FileNotFoundError, KeyError, ValueError, StratumError) as exc:
        print(f"nilspec: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
