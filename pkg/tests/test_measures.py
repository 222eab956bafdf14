import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilspec import measures as MS
from nilspec.dual import StratumError, block_form
from nilspec.hermite import HermiteTruncation, op_sublaplacian, zeta_diagonal
from nilspec.lie import LatticeSpec, builtin_algebra, product_coords
from nilspec.symbols import SymbolField, load_symbol

H1 = builtin_algebra("h1")


def _psd(rng, N, rank=2):
    A = rng.standard_normal((N, rank)) + 1j * rng.standard_normal((N, rank))
    return A @ A.conj().T


def _mixed(rng):
    return MS.OperatorValuedMeasure(H1, (
        MS.character_atom([0.1, 0.2, 0.0], [0.6, -0.8], 0.5),
        MS.character_atom([0.7, 0.3, 0.1], [1.0, 0.0], 0.25),
        MS.schrodinger_atom([0.2, 0.4, 0.3], [1.5], _psd(rng, 5), 5, 0.3),
        MS.schrodinger_atom([0.5, 0.5, 0.5], [-0.8], np.diag([1.0, 0, 0, 0]), 4, 1.0),
    ))


SPECTRAL = SymbolField.spectral(lambda X, Y, T: 1 + 0.5 * np.cos(2 * np.pi * X),
                                lambda z: np.exp(-0.2 * z))
SPECTRAL2 = SymbolField.spectral(lambda X, Y, T: np.sin(2 * np.pi * Y), lambda z: 1 / (1 + z))


# ---------------------------------------------------------------------------
# atoms and validation


def test_atom_validation(rng):
    with pytest.raises(ValueError):
        MS.MeasureAtom([0, 0, 0], 1.0, [[1.0]])                    # no representation
    with pytest.raises(ValueError):
        MS.character_atom([0, 0, 0], [1, 0], weight=-1)
    with pytest.raises(ValueError):
        MS.schrodinger_atom([0, 0, 0], [1.0], np.diag([1.0, -1.0]), 2)
    with pytest.raises(ValueError):
        MS.schrodinger_atom([0, 0, 0], [1.0], np.array([[1.0, 1.0], [0.0, 1.0]]), 2)
    with pytest.raises(ValueError):
        MS.OperatorValuedMeasure(H1, (MS.character_atom([0, 0], [1, 0]),))
    a = MS.schrodinger_atom([0, 0, 0], [1.0], _psd(rng, 4), 4)
    assert np.isclose(a.trace(), a.trace_norm())


def test_pair_examples():
    m = MS.OperatorValuedMeasure(H1, (MS.character_atom([0, 0, 0], [1.0, 0.0], 2.0),))
    assert np.isclose(MS.pair(m, SPECTRAL), 2.0 * 1.5 * np.exp(-0.2))
    bf = block_form(H1, [2.0])
    G = np.diag([0.0, 1.0, 0.0])
    m = MS.OperatorValuedMeasure(H1, (MS.schrodinger_atom([0, 0, 0], [2.0], G, 3),))
    zeta1 = zeta_diagonal(bf, HermiteTruncation(1, 3))[1]
    assert np.isclose(zeta1, 3 * 2.0)
    assert np.isclose(MS.pair(m, SPECTRAL), 1.5 * np.exp(-0.2 * zeta1))


def test_pair_linear_and_additive(rng):
    m = _mixed(rng)
    a, b = 0.7 - 0.2j, -1.3
    both = SymbolField(lambda x, bf, nu, tr: type(SPECTRAL.op(x, bf, nu, tr))(
        a * SPECTRAL.op(x, bf, nu, tr).matrix + b * SPECTRAL2.op(x, bf, nu, tr).matrix, tr),
        lambda x, w: a * SPECTRAL.char(x, w) + b * SPECTRAL2.char(x, w))
    assert np.isclose(MS.pair(m, both), a * MS.pair(m, SPECTRAL) + b * MS.pair(m, SPECTRAL2))
    first, second = m.with_atoms(m.atoms[:2]), m.with_atoms(m.atoms[2:])
    assert np.isclose(MS.pair(m, SPECTRAL), MS.pair(first, SPECTRAL) + MS.pair(second, SPECTRAL))


def test_pair_bounded_by_sup_times_total_variation(rng):
    m = _mixed(rng)
    # the spectral field has operator norm at most sup|a| * sup|g| = 1.5
    assert abs(MS.pair(m, SPECTRAL)) <= 1.5 * MS.total_variation(m) + 1e-12


def test_canonicalize(rng):
    G = _psd(rng, 4)
    m = MS.OperatorValuedMeasure(H1, (MS.schrodinger_atom([0, 0, 0], [1.0], G, 4, 0.5),
                                      MS.character_atom([0, 0, 0], [0, 1], 0.0)))
    c = MS.canonicalize(m)
    assert len(c) == 1
    assert np.isclose(c.atoms[0].trace(), 1.0)
    assert np.isclose(c.atoms[0].weight, 0.5 * np.trace(G).real)
    assert np.isclose(MS.pair(c, SPECTRAL), MS.pair(m, SPECTRAL))


def test_json_roundtrip(rng):
    m = _mixed(rng)
    again = MS.OperatorValuedMeasure.from_json(json.loads(m.dumps()))
    assert again.dumps() == m.dumps()
    assert np.isclose(MS.pair(again, SPECTRAL), MS.pair(m, SPECTRAL))
    with pytest.raises(ValueError):
        MS.OperatorValuedMeasure.from_json({"schema_version": 99, "atoms": []})


# ---------------------------------------------------------------------------
# spectral decomposition


def test_project_zeta_partition(rng):
    m = _mixed(rng)
    _, inf = MS.split_g1_ginf(m)
    zetas = MS.measure_zeta_values(m)
    assert zetas == sorted(zetas) and len(zetas) >= 2
    diag_only = inf.with_atoms([replace(a, Gamma=np.diag(np.diag(a.Gamma))) for a in inf.atoms])
    parts = sum(MS.pair(MS.project_zeta(diag_only, z), SPECTRAL) for z in zetas)
    assert np.isclose(parts, MS.pair(diag_only, SPECTRAL))
    assert len(MS.project_zeta(m, 1234.5)) == 0


def test_project_zeta_commutes_with_sublaplacian(rng):
    m = _mixed(rng)
    for z in MS.measure_zeta_values(m):
        for a in MS.project_zeta(m, z).atoms:
            L = op_sublaplacian(m.block_form(a), m.nu(a), m.truncation(a)).toarray()
            assert np.abs(L @ a.Gamma - a.Gamma @ L).max() <= 1e-10
            assert np.abs(L @ a.Gamma - z * a.Gamma).max() <= 1e-10 * max(1, z)


def test_split_marginals(rng):
    m = _mixed(rng)
    g1, ginf = MS.split_g1_ginf(m)
    assert (len(g1), len(ginf)) == (2, 2)
    phi = lambda X, Y, T: 1.0 + X * Y
    assert np.isclose(g1.trace_marginal(phi) + ginf.trace_marginal(phi), m.trace_marginal(phi))
    assert np.isclose(MS.total_variation(g1) + MS.total_variation(ginf), MS.total_variation(m))


def test_localization_residual():
    on_shell = MS.OperatorValuedMeasure(H1, (MS.character_atom([0, 0, 0], [0.6, 0.8]),
                                             MS.schrodinger_atom([0, 0, 0], [1.0], [[1.0]], 1)))
    assert MS.localization_residual(on_shell) <= 1e-12
    off = MS.OperatorValuedMeasure(H1, (MS.character_atom([0, 0, 0], [2.0, 0.0]),))
    assert np.isclose(MS.localization_residual(off), 3.0)


# ---------------------------------------------------------------------------
# flows


def test_flow_zero_and_group_property(rng):
    full = _mixed(rng)
    m = full.with_atoms([a for i, a in enumerate(full.atoms) if i != 2])   # single-level atoms only
    gen = MS.natural_generator
    same = MS.flow_pushforward(m, gen, 0.0, reduce=False)
    assert all(np.allclose(a.x, b.x) for a, b in zip(same.atoms, m.atoms))
    two = MS.flow_pushforward(MS.flow_pushforward(m, gen, 0.3, reduce=False), gen, 0.5, reduce=False)
    one = MS.flow_pushforward(m, gen, 0.8, reduce=False)
    assert all(np.allclose(a.x, b.x, atol=1e-12) for a, b in zip(one.atoms, two.atoms))
    assert np.isclose(MS.total_variation(one), MS.total_variation(m))


def test_flow_along_V1_and_central_grad_zeta():
    m = MS.OperatorValuedMeasure(H1, (MS.character_atom([0.1, 0.2, 0.3], [1.0, 0.0]),))
    moved = MS.flow_pushforward(m, MS.omega_v_generator, 0.25, reduce=False)
    assert np.allclose(moved.atoms[0].x, product_coords(H1, [0.1, 0.2, 0.3], [0.25, 0, 0]))
    inf = MS.OperatorValuedMeasure(H1, (MS.schrodinger_atom([0.1, 0.2, 0.3], [2.0],
                                                            np.diag([0.0, 1.0]), 2),))
    g = MS.grad_zeta_generator(inf, inf.atoms[0])
    assert np.allclose(g[:2], 0) and np.isclose(g[2], 3.0)      # zeta = (2 alpha + 1) |lambda|
    with pytest.raises(StratumError):
        MS.omega_v_generator(inf, inf.atoms[0])
    with pytest.raises(StratumError):
        MS.grad_zeta_generator(m, m.atoms[0])


def test_grad_zeta_rejects_mixed_levels():
    inf = MS.OperatorValuedMeasure(H1, (MS.schrodinger_atom([0, 0, 0], [1.0], np.eye(2) / 2, 2),))
    with pytest.raises(StratumError):
        MS.grad_zeta_generator(inf, inf.atoms[0])


def test_flow_reduces_to_unit_cube():
    m = MS.OperatorValuedMeasure(H1, (MS.character_atom([0.9, 0.9, 0.0], [1.0, 1.0]),))
    moved = MS.flow_pushforward(m, MS.omega_v_generator, 0.5)
    p = LatticeSpec.to_polarized(moved.atoms[0].x)
    assert np.all((p >= 0) & (p < 1))


def test_invariance_residual():
    K = 3
    xs = MS.xy_template_points(K)
    uniform = MS.OperatorValuedMeasure(H1, tuple(MS.character_atom(x, [1.0, 0.0], 1 / len(xs))
                                                 for x in xs))
    tests = [SymbolField.spectral(lambda X, Y, T: np.cos(2 * np.pi * X), lambda z: 1.0)]
    s_grid = np.arange(1, 5) / (2 * K + 1)          # lattice steps of the template
    assert MS.invariance_residual(uniform, MS.omega_v_generator, s_grid, tests) <= 1e-12
    point = uniform.with_atoms([replace(uniform.atoms[0], weight=1.0)])
    assert MS.invariance_residual(point, MS.omega_v_generator, [0.25], tests) > 0.5


# ---------------------------------------------------------------------------
# fitting


def test_polar_and_template_points():
    pts = MS.xy_template_points(1)
    assert pts.shape == (9, 3)
    om = MS.polar_omegas([1.0, 2.0], 4)
    assert om.shape == (9, 2) and np.allclose(om[0], 0)
    assert np.allclose(np.linalg.norm(om[1:5], axis=1), 1.0)


def test_fit_recovers_a_template_measure():
    xs = MS.xy_template_points(1)
    tmpl = MS.character_template(H1, xs, MS.polar_omegas([1.0], 4, include_origin=False))
    truth = np.zeros(len(tmpl))
    truth[[3, 10, 20]] = [0.5, 0.3, 0.2]
    target = tmpl.with_atoms([replace(a, weight=w) for a, w in zip(tmpl.atoms, truth)])
    tests = [SymbolField.spectral(lambda X, Y, T, k=k, l=l: np.exp(2j * np.pi * (k * X + l * Y)),
                                  lambda z: 1.0) for k in (-1, 0, 1) for l in (-1, 0, 1)]
    tests += [SymbolField(lambda x, bf, nu, tr: None,
                          lambda x, w, c=c: np.exp(1j * (np.asarray(w) @ c)))
              for c in ([1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0])]
    data = [MS.pair(target, t) for t in tests]
    fitted, resid = MS.fit_measure(tmpl, tests, data)
    assert resid <= 1e-8
    assert np.allclose([MS.pair(fitted, t) for t in tests], data, atol=1e-8)
    with pytest.raises(ValueError):
        MS.fit_measure(tmpl, tests, data[:-1])


@settings(max_examples=20)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(-2, 2), st.floats(-2, 2))
def test_pair_of_single_character_atom(x1, x2, w1, w2):
    m = MS.OperatorValuedMeasure(H1, (MS.character_atom(LatticeSpec.from_polarized([x1, x2, 0.0]),
                                                        [w1, w2], 0.5),))
    sym = load_symbol("cosine")
    field = SymbolField.from_kernel(sym)
    assert np.isclose(MS.pair(m, field), 0.5 * field.char([x1, x2, 0.0], [w1, w2]))
