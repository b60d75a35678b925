"""Combinatorial counts and the per-order coefficient bounds.

alpha_n counts the terms the recursion produces at order n.  A geometric
bound alpha_n <= 4^n would give a radius of 1/(4 E_beta); the computed
ratios settle near 4 + 2 sqrt 2 instead, which shrinks the radius by that
factor.  The second half compares the actual coefficient norms with
alpha_n E_beta^n.

    python demos/alpha_and_bounds.py
"""

from __future__ import annotations

import math

from toralseries import (PerturbedSystem, Truncation, alpha_sequence, convergence_constants,
                         secular_series, vector_field_from_triples)
from toralseries.diagnostics import bound_table

CAT = [[2, 1], [1, 1]]


def main():
    a = alpha_sequence(30)
    print("alpha_0..alpha_6:", a.values[:7])
    print("first n with alpha_n > 4^n:", a.bound_violations(base=4)[:1])
    print(f"alpha_30 / alpha_29 = {a[30] / a[29]:.4f}  (4 + 2 sqrt 2 = {4 + 2 * math.sqrt(2):.4f})")

    F = vector_field_from_triples(2, [((0, 1), 0, 1.0), ((1, 1), 1, 0.5, "cos")])
    S = PerturbedSystem.build(CAT, F, truncation=Truncation(tau=1e-8, budget=1e-2))
    sd, C, _ = secular_series(S, 6)
    k = convergence_constants(S, None, 0.05, C)
    print(f"E_beta = {k.E_beta:.4g}, eps_bar = {k.eps_bar:.3g}")
    rows, bad, msg = bound_table(sd, k)
    for r in rows:
        print(f"n={r.n} max|v|={r.norm_v:.3g} max|L|={r.norm_L:.3g} "
              f"alpha_n E^n={r.bound:.3g} ratio={max(r.norm_v, r.norm_L) / r.bound:.1e}")
    print(msg or "all orders within the bound")


if __name__ == "__main__":
    main()
