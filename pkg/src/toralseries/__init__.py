"""Perturbative spectral computations for perturbed hyperbolic toral automorphisms.

A_eps(psi) = A psi + eps F(psi) (mod 2 pi) with A a hyperbolic integer
matrix and F a trigonometric polynomial.  The package computes the
conjugacy H_eps and the invariant directions and multipliers of A_eps as
power series in eps, checks them by residuals, and compares the Lyapunov
exponents they predict with a direct QR estimate.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .fourier import (MatrixTrigSeries, SeriesBundle, TrigSeries, Truncation,  # noqa: F401
                      VectorTrigSeries, compose_linear, directional_derivative, evaluate,
                      multiply, truncate)
from .hyperbolic import (BlockData, EigenData, ToralAutomorphism, block_partition,  # noqa: F401
                         eigendecompose, hyperbolicity_constants)
from .cohomology import (TwistDirection, solve_conjugacy_block, solve_conjugacy_step,  # noqa: F401
                         solve_twisted_block, solve_twisted_scalar)
from .series import (BlockSecularData, Certificate, ConjugacyData, PerturbedSystem,  # noqa: F401
                     SecularData, assemble_and_check, block_residual, block_series,
                     conjugacy_coefficients, conjugacy_residual, loglog_slope,
                     phi_coefficients, secular_residual, secular_series,
                     vector_field_from_triples)
from .diagnostics import (AlphaSequence, DiagnosticsConstants, alpha_sequence,  # noqa: F401
                          convergence_constants, empirical_radius)
from .lyapunov import (OrbitSampler, SpectrumResult, benettin_spectrum,  # noqa: F401
                       epsilon_sweep_fit, exponent_from_series, invert_conjugacy_numeric)
from .dimension import (DimensionReport, lyapunov_dimension, product_experiment,  # noqa: F401
                        young_product_dimension)
