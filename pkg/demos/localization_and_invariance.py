"""
Where eigenfunctions concentrate in phase space
================================================

Take the characters ``psi_k = exp(2 pi i k X)``, eigenfunctions of ``-L + 4 pi^2``
with semiclassical parameter ``eps_k = E_k^(-1/2)``.  Two things are observed:

* pairings with a symbol that vanishes near the unit circle ``|omega| = 1``
  die out along the sequence, so the limit lives on that circle;
* a character measure fitted to the pairings is (nearly) invariant under the
  flow ``omega . V``, and more so on finer grids.

Run with ``python3 demos/localization_and_invariance.py`` (about a minute).
"""

import numpy as np

from nilspec import measures as Ms
from nilspec import symbols as S
from nilspec.nilmanifold import NilmanifoldGrid, character_eigenpairs, pairing_sequence
from nilspec.verify import INVARIANCE_TESTS, U0_CHARACTER, fit_character_limit

grid = NilmanifoldGrid(32)
pairs = character_eigenpairs(grid, [(m, 0) for m in range(1, 13)], U0_CHARACTER)

# Pairings with the notch symbol, which is zero on the unit circle.
seq = pairing_sequence(grid, pairs, S.load_symbol("notch"))
print("mode   eps      |<Op(notch) psi, psi>|")
for m, (pr, v) in enumerate(zip(pairs, seq["values"]), start=1):
    print(f"{m:4d}  {pr.eps:.4f}   {abs(v):.3e}")

# Fit a character measure to one eigenfunction and look at its support.
omegas = Ms.polar_omegas(np.arange(0.05, 1.51, 0.05), 16)
meas, resid = fit_character_limit(grid, pairs[-1], 1, omegas)
radii = np.array([np.linalg.norm(a.omega) for a in meas.atoms])
weights = np.array([a.weight for a in meas.atoms])
print(f"\nfit residual {resid:.2e}; {len(meas)} atoms")
print(f"weighted mean |omega| = {np.sum(weights * radii) / weights.sum():.4f}")
print(f"localization residual = {Ms.localization_residual(meas):.2e}")

# Invariance under the omega . V flow, on three refinement levels.
tests = [S.SymbolField.from_kernel(S.separable_symbol(ax, scale=1.0)) for ax in INVARIANCE_TESTS]
coarse_omegas = Ms.polar_omegas(np.arange(0.1, 1.51, 0.1), 8)
print("\n  n   mode  K   invariance residual")
for n, m, K in ((16, 6, 1), (24, 9, 2), (32, 12, 3)):
    g = NilmanifoldGrid(n)
    pr = character_eigenpairs(g, [(m, 0)], U0_CHARACTER)[0]
    fitted, _ = fit_character_limit(g, pr, K, coarse_omegas)
    r = Ms.invariance_residual(fitted, Ms.omega_v_generator, np.linspace(0.1, 1.0, 10), tests)
    print(f"{n:4d} {m:5d} {K:2d}   {r:.3e}")
