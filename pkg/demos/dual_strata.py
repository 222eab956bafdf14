"""
Strata of the dual: how the skew form B(lambda) degenerates
============================================================

For a step-two algebra, each central covector ``lambda`` defines a skew form on
the first stratum.  Its block form gives the frequencies ``eta_j(lambda)``
and a radical of dimension ``k``.  Generic covectors form an open stratum,
and the gradient of each ``eta_j`` there is given by a bracket formula
that is compared here with finite differences.

Run with ``python3 demos/dual_strata.py``.
"""

import numpy as np

from nilspec.dual import block_form, classify_lambda, grad_eta_bracket, grad_eta_fd
from nilspec.lie import builtin_algebra

rng = np.random.default_rng(0)
for name in ("h1xh1", "free3", "quaternionic"):
    alg = builtin_algebra(name)
    print(f"\n{name}: q={alg.q}, p={alg.p}")
    for _ in range(3):
        lam = rng.normal(size=alg.p)
        info = classify_lambda(alg, lam)
        bf = block_form(alg, lam)
        line = f"  lambda={np.round(lam, 3)}  k={bf.k}  eta={np.round(bf.eta, 4)}"
        if info.in_lambda0:
            err = np.abs(grad_eta_bracket(alg, bf) - grad_eta_fd(alg, lam)).max()
            line += f"  |grad bracket - fd| = {err:.1e}"
        print(line)

# On h1 x h1 the two frequencies are |lambda_1| and |lambda_2|: they collide
# on the diagonal, where the eta-ordering is not smooth.
alg = builtin_algebra("h1xh1")
print("\nh1xh1 on the diagonal:", classify_lambda(alg, [1.0, 1.0]))
