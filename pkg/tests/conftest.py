from __future__ import annotations

import numpy as np
import pytest

from toralseries import PerturbedSystem, Truncation, vector_field_from_triples

CAT = [[2, 1], [1, 1]]
B2 = [[3, 2], [1, 1]]


def cat_field(a=1.0):
    """F_a = (a sin psi_2, (a/2) cos(psi_1 + psi_2)): a 2-mode trig perturbation."""
    return vector_field_from_triples(2, [((0, 1), 0, a), ((1, 1), 1, 0.5 * a, "cos")])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cat_system():
    return PerturbedSystem.build(CAT, cat_field(1.0),
                                 truncation=Truncation(tau=1e-14, tau_growth=1e2, budget=1e-4))


# acceptance bookkeeping: criterion number -> list of (part, ok, detail)
ACCEPTANCE: dict = {}


def record(number: int, part: str, ok: bool, detail: str):
    ACCEPTANCE.setdefault(number, []).append((part, bool(ok), detail))


def acceptance_lines():
    lines = []
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{p[0]}: {'ok' if p[1] else 'FAILED'} ({p[2]})" for p in parts)
        lines.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return lines


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_lines()
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
