"""Residual-order law for the conjugacy and secular series on the cat map.

Truncating either series after order N leaves a residual of size eps^(N+1),
so the log-log slope of the sup residual against eps should read N + 1.
The amplitude-2 field keeps the order-4 residual above the float64 floor
down to eps = 1e-4.

    python demos/residual_law.py
"""

from __future__ import annotations

import numpy as np

from toralseries import (PerturbedSystem, Truncation, conjugacy_coefficients,
                         conjugacy_residual, eigendecompose, loglog_slope, secular_residual,
                         secular_series, vector_field_from_triples)

CAT = [[2, 1], [1, 1]]


def main(order: int = 4):
    F = vector_field_from_triples(2, [((0, 1), 0, 2.0), ((1, 1), 1, 1.0, "cos")])
    S = PerturbedSystem.build(CAT, F, truncation=Truncation(tau=1e-24, tau_growth=1e4,
                                                            budget=1e-6))
    E = eigendecompose(S.A)
    # the secular recursion needs h only up to order - 1; ask for the full order
    C = conjugacy_coefficients(S, order, E)
    sd, C, _ = secular_series(S, order, conjugacy=C, E=E)
    eps = np.logspace(-4, -2, 9)
    print(f"{'N':>2} {'conjugacy':>10} {'secular':>10} {'expected':>9}")
    for n in range(1, order + 1):
        a = loglog_slope(eps, conjugacy_residual(C, eps, order=n))
        b = loglog_slope(eps, secular_residual(sd, C, eps, order=n))
        print(f"{n:>2} {a:10.3f} {b:10.3f} {n + 1:9d}")
    # largest coefficient per order; growth here sets the convergence radius
    for n, nv, nl in sd.norms():
        print(f"order {n}: max|v| = {nv:.3g}, max|L| = {nl:.3g}")


if __name__ == "__main__":
    main()
