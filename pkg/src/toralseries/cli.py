"""Config-driven runs: ``python -m toralseries CONFIG.toml [-o OUTDIR]``.

The config is a TOML file (grammar in README.md, schema_version 1).  Every
output file carries the sha256 hash of the normalised config, and no output
depends on wall-clock time, so equal configs give byte-identical artifacts.

Exit codes: 0 success, 2 certificate or residual failure, 3 config error,
4 numerical abort (budget, overflow, non-contraction, ...).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field

import numpy as np
import tomli

from . import __version__
from .diagnostics import (CERTIFICATE_NOTE, alpha_sequence, bound_table, convergence_constants,
                          empirical_radius, holder_composition_check)
from .dimension import product_experiment
from .errors import (BetaTooLarge, BudgetExceeded, ComplexSpectrum, ConfigError,
                     DegenerateModuli, DimensionMismatch, GapViolation, GershgorinFailure,
                     IllConditionedFit, InsufficientOrders, MaxIterations, NoContraction,
                     NonConvergence, NotDiffeomorphism, NotHyperbolic, NotUnimodular,
                     OrderOverflow, ResonantBlocks, ResonantPair, SpectrumMismatch,
                     ToralSeriesError, ZeroMultiplier)
from .fourier import K_MAX_DEFAULT, TrigSeries, Truncation
from .hyperbolic import block_partition, eigendecompose
from .lyapunov import OrbitSampler, benettin_spectrum, exponent_from_series, polynomial_fit
from .series import (PerturbedSystem, assemble_and_check, block_residual, block_series,
                     conjugacy_coefficients, conjugacy_residual, dump_conjugacy, dump_secular,
                     loglog_slope, secular_residual, secular_series,
                     vector_field_from_triples)

SCHEMA_VERSION = 1
MODES = ("secular-1d", "block", "lyapunov-sweep", "dimensions", "diagnostics")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3, 4

NUMERICAL_ABORTS = (BudgetExceeded, OrderOverflow, NotDiffeomorphism, NoContraction,
                    MaxIterations, ZeroMultiplier, NonConvergence, IllConditionedFit)
CERTIFICATE_FAILURES = (GershgorinFailure, SpectrumMismatch)
SETUP_ERRORS = (NotUnimodular, NotHyperbolic, DimensionMismatch, ComplexSpectrum,
                DegenerateModuli, GapViolation, ResonantPair, ResonantBlocks, BetaTooLarge)


# ---------------------------------------------------------------------------
# schema


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _matrix(v):
    return (isinstance(v, list) and v and all(isinstance(r, list) and len(r) == len(v)
                                               and all(_int(x) for x in r) for r in v))


def _triples(v):
    if not isinstance(v, list):
        return False
    for t in v:
        if not (isinstance(t, list) and len(t) in (3, 4) and isinstance(t[0], list)
                and all(_int(x) for x in t[0]) and _int(t[1]) and _num(t[2])):
            return False
        if len(t) == 4 and t[3] not in ("sin", "cos"):
            return False
    return True


def _num_list(v):
    return isinstance(v, list) and len(v) > 0 and all(_num(x) for x in v)


def _blocks(v):
    return v == "auto" or (isinstance(v, list) and v and all(_int(x) and x > 0 for x in v))


# section -> key -> (check, description, default); default None means required
SCHEMA = {
    "": {
        "schema_version": (lambda v: v == SCHEMA_VERSION, f"must be {SCHEMA_VERSION}", None),
        "mode": (lambda v: v in MODES, f"one of {', '.join(MODES)}", None),
        "output": (lambda v: isinstance(v, str), "a directory path", "run-output"),
    },
    "system": {
        "matrix": (_matrix, "square integer matrix", [[2, 1], [1, 1]]),
        "power": (lambda v: _int(v) and v >= 1, "integer >= 1", 1),
        "perturbation": (_triples, "list of [frequency, component, amplitude(, kind)]", []),
    },
    "series": {
        "order": (lambda v: _int(v) and 1 <= v <= 12, "integer in 1..12", 3),
        "tau": (lambda v: _num(v) and v >= 0, "non-negative number", 1e-24),
        "tau_growth": (lambda v: _num(v) and v >= 1, "number >= 1", 1e4),
        "k_max": (lambda v: _int(v) and 0 <= v <= K_MAX_DEFAULT, "integer in 0..2**61",
                  K_MAX_DEFAULT),
        "budget": (lambda v: _num(v) and v >= 0, "non-negative number", 1e-3),
        "blocks": (_blocks, '"auto" or list of block sizes', "auto"),
    },
    "residual": {
        "eps_min": (lambda v: _num(v) and v > 0, "positive number", 1e-4),
        "eps_max": (lambda v: _num(v) and v > 0, "positive number", 1e-2),
        "eps_count": (lambda v: _int(v) and v >= 2, "integer >= 2", 9),
        "n_points": (lambda v: _int(v) and v >= 1, "integer >= 1", 100),
        "seed": (_int, "integer", 0),
        "slope_tolerance": (lambda v: _num(v) and v > 0, "positive number", 0.2),
        "certificate_points": (lambda v: _int(v) and v >= 1, "integer >= 1", 1000),
    },
    "sampler": {
        "seed": (_int, "integer", 0),
        "transient": (lambda v: _int(v) and v >= 0, "integer >= 0", 1000),
        "steps": (lambda v: _int(v) and v >= 2, "integer >= 2", 10_000),
        "orbits": (lambda v: _int(v) and v >= 1, "integer >= 1", 100),
    },
    "lyapunov": {
        "eps": (_num_list, "list of numbers", [-0.02, -0.01, 0.0, 0.01, 0.02]),
        "degree": (lambda v: _int(v) and v >= 0, "integer >= 0", 2),
        "series_formula": (lambda v: isinstance(v, bool), "true or false", True),
        "series_order": (lambda v: _int(v) and 1 <= v <= 8, "integer in 1..8", 4),
        "tau": (lambda v: _num(v) and v > 0, "positive number", 1e-8),
        "prune": (lambda v: _num(v) and v >= 0, "non-negative number", 1e-9),
    },
    "dimensions": {
        "B1": (_matrix, "2x2 integer matrix", [[2, 1], [1, 1]]),
        "B2": (_matrix, "2x2 integer matrix", [[3, 2], [1, 1]]),
        "G1": (_triples, "list of [frequency, component, amplitude(, kind)]", []),
        "G2": (_triples, "list of [frequency, component, amplitude(, kind)]", []),
        "eps": (_num_list, "list of numbers", [0.0, 0.05]),
        "control": (lambda v: isinstance(v, bool), "true or false", True),
        "tolerance": (lambda v: _num(v) and v > 0, "positive number", 1e-3),
    },
    "diagnostics": {
        "beta": (lambda v: _num(v) and v > 0, "positive number", 0.05),
        "order": (lambda v: _int(v) and 1 <= v <= 8, "integer in 1..8", 6),
        "tau": (lambda v: _num(v) and v > 0, "positive number", 1e-8),
        "alpha_order": (lambda v: _int(v) and 0 <= v <= 200, "integer in 0..200", 30),
        "holder_pairs": (lambda v: _int(v) and v >= 10, "integer >= 10", 10_000),
    },
}


def _line_of(text: str, section: str, key: str | None = None):
    """1-based line of ``key`` in ``[section]`` (or of the header), if found."""
    current = ""
    header = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if m:
            current = m.group(1)
            if current == section:
                header = no
            continue
        if current == section and key is not None and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return header


@dataclass
class RunConfig:
    """A validated config: ``data[section][key]`` with defaults filled in."""

    data: dict
    text: str = ""
    path: str = ""

    @property
    def hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __getitem__(self, section):
        return self.data[section]

    @property
    def mode(self) -> str:
        return self.data[""]["mode"]

    @classmethod
    def from_text(cls, text: str, path: str = "") -> "RunConfig":
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(f"TOML syntax: {exc}", line=int(m.group(1)) if m else None)
        data = {"": {}}
        for key, val in raw.items():
            if isinstance(val, dict):
                if key not in SCHEMA or key == "":
                    raise ConfigError(f"unknown section [{key}]", field=key,
                                      line=_line_of(text, key))
                data[key] = dict(val)
            else:
                data[""][key] = val
        out = {}
        for section, keys in SCHEMA.items():
            given = data.get(section, {})
            for key in given:
                if key not in keys:
                    name = f"{section}.{key}" if section else key
                    raise ConfigError(f"unknown key {name}", field=name,
                                      line=_line_of(text, section, key))
            block = {}
            for key, (check, desc, default) in keys.items():
                name = f"{section}.{key}" if section else key
                if key in given:
                    val = given[key]
                    if not check(val):
                        raise ConfigError(f"{name} = {val!r}: expected {desc}", field=name,
                                          line=_line_of(text, section, key))
                    block[key] = val
                elif default is None:
                    raise ConfigError(f"missing required key {name} ({desc})", field=name)
                else:
                    block[key] = default
            out[section] = block
        cfg = cls(out, text, path)
        cfg._cross_check()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}")
        return cls.from_text(text, str(path))

    def _fail(self, section, key, msg):
        name = f"{section}.{key}"
        raise ConfigError(f"{name}: {msg}", field=name, line=_line_of(self.text, section, key))

    def _cross_check(self):
        d = len(self["system"]["matrix"])
        for t in self["system"]["perturbation"]:
            if len(t[0]) != d or not 0 <= t[1] < d:
                self._fail("system", "perturbation", f"entry {t} does not fit dimension {d}")
        r = self["residual"]
        if r["eps_min"] >= r["eps_max"]:
            self._fail("residual", "eps_max", "must exceed eps_min")
        dims = self["dimensions"]
        for name in ("B1", "B2"):
            if len(dims[name]) != 2:
                self._fail("dimensions", name, "factors must be 2x2")
        for name in ("G1", "G2"):
            for t in dims[name]:
                if len(t[0]) != 2 or not 0 <= t[1] < 2:
                    self._fail("dimensions", name, f"entry {t} is not a 2-D term")


def _field(triples, d):
    return vector_field_from_triples(d, [tuple(t) for t in triples])


def _system(cfg: RunConfig, truncation: Truncation | None = None) -> PerturbedSystem:
    sysc = cfg["system"]
    d = len(sysc["matrix"])
    ser = cfg["series"]
    t = truncation or Truncation(tau=ser["tau"], k_max=ser["k_max"], budget=ser["budget"],
                                 tau_growth=ser["tau_growth"])
    return PerturbedSystem.build(sysc["matrix"], _field(sysc["perturbation"], d),
                                 power=sysc["power"], truncation=t)


def _sampler(cfg: RunConfig) -> OrbitSampler:
    s = cfg["sampler"]
    return OrbitSampler(seed=s["seed"], transient=s["transient"], steps=s["steps"],
                        n_orbits=s["orbits"])


# ---------------------------------------------------------------------------
# artifacts and report


@dataclass
class RunArtifacts:
    """Everything a run produced; :func:`emit_report` turns it into files."""

    config: RunConfig
    outdir: str
    status: str = "OK"
    exit_code: int = EXIT_OK
    sections: list = field(default_factory=list)  # (title, lines)
    tables: dict = field(default_factory=dict)  # file name -> (columns, rows)
    files: list = field(default_factory=list)  # extra files written by modules

    def section(self, title, lines):
        self.sections.append((title, list(lines)))

    def table(self, name, columns, rows):
        self.tables[name] = (list(columns), [list(r) for r in rows])

    def fail(self, code, why):
        if code > self.exit_code or self.exit_code == EXIT_OK:
            self.exit_code = code
        self.status = "FAILED" if code == EXIT_FAILED else "ABORTED"
        self.section("Failure", [why])


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "yes" if x else "no"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def _text_table(columns, rows):
    cells = [[str(c) for c in columns]] + [[_fmt(x) for x in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    return ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]


def _csv_value(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def emit_report(art: RunArtifacts) -> str:
    """Write report.txt, the CSV tables and manifest.json; return the report."""
    os.makedirs(art.outdir, exist_ok=True)
    h = art.config.hash
    for name, (cols, rows) in sorted(art.tables.items()):
        with open(os.path.join(art.outdir, name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols + ["config_hash"])
            for r in rows:
                w.writerow([_csv_value(x) for x in r] + [h])
    out = io.StringIO()
    out.write(f"toralseries {__version__} run report\n")
    out.write(f"config hash: {h}\n")
    out.write(f"mode: {art.config.mode}\n")
    out.write(f"status: {art.status}\n\n")
    for title, lines in art.sections:
        out.write(f"== {title} ==\n")
        for line in lines:
            out.write(f"{line}\n")
        out.write("\n")
    report = out.getvalue()
    with open(os.path.join(art.outdir, "report.txt"), "w") as fh:
        fh.write(report)
    with open(os.path.join(art.outdir, "config.json"), "w") as fh:
        json.dump({"config_hash": h, "config": art.config.data}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    names = sorted(set(list(art.tables) + art.files + ["report.txt", "config.json"]))
    digests = {}
    for name in names:
        with open(os.path.join(art.outdir, name), "rb") as fh:
            digests[name] = hashlib.sha256(fh.read()).hexdigest()
    manifest = dict(schema_version=SCHEMA_VERSION, package_version=__version__,
                    config_hash=h, mode=art.config.mode, status=art.status,
                    exit_code=art.exit_code, files=digests)
    with open(os.path.join(art.outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return report


# ---------------------------------------------------------------------------
# modes


def _eps_grid(cfg):
    r = cfg["residual"]
    return np.logspace(math.log10(r["eps_min"]), math.log10(r["eps_max"]), r["eps_count"])


def _slope_rows(art, kind, eps, residuals, n, tol, trivial):
    slope = loglog_slope(eps, residuals) if not trivial else float("nan")
    ok = trivial or abs(slope - (n + 1)) <= tol
    return [kind, n, slope, n + 1, ok]


def _residual_section(art, cfg, results, trivial):
    """results: list of (kind, n, eps, residuals)."""
    tol = cfg["residual"]["slope_tolerance"]
    rows, slope_rows = [], []
    for kind, n, eps, res in results:
        rows += [[kind, n, e, r] for e, r in zip(eps, res)]
        slope_rows.append(_slope_rows(art, kind, eps, res, n, tol, trivial))
    art.table("residuals.csv", ["equation", "N", "eps", "sup_residual"], rows)
    art.table("slopes.csv", ["equation", "N", "slope", "expected", "ok"], slope_rows)
    lines = _text_table(["equation", "N", "slope", "expected", "ok"], slope_rows)
    if trivial:
        lines.append("trivial system (F = 0): residuals vanish identically; slopes undefined")
    art.section(f"Residual-order table (log-log slope over eps in "
                f"[{_fmt(cfg['residual']['eps_min'])}, {_fmt(cfg['residual']['eps_max'])}], "
                f"tolerance {_fmt(tol)})", lines)
    bad = [r for r in slope_rows if not r[4]]
    if bad:
        art.fail(EXIT_FAILED, "residual slopes outside tolerance: "
                 + ", ".join(f"{r[0]} N={r[1]} slope {_fmt(r[2])}" for r in bad))


def _system_section(art, S, trivial):
    lines = [f"A0 = {S.A.A.tolist()} (power {S.power})", f"dimension {S.dim}"]
    lines.append("F: " + ("none (trivial system; every series coefficient is zero)" if trivial
                          else "; ".join(f"component {c}: {len(f)} modes"
                                         for c, f in enumerate(S.F))))
    t = S.truncation
    lines.append(f"truncation: tau={_fmt(t.tau)} tau_growth={_fmt(t.tau_growth)} "
                 f"k_max={t.k_max} budget={_fmt(t.budget)}")
    art.section("System", lines)


def _certificate(art, cfg, sd, eps):
    _X, cert = assemble_and_check(sd, eps, n_points=cfg["residual"]["certificate_points"],
                                  seed=cfg["residual"]["seed"], raise_on_failure=False)
    lines = [f"eps = {_fmt(eps)}, {cert.n_points} sample points",
             f"min margin 1 - max_i sum_(k!=i) |v_ik| = {_fmt(cert.min_margin)}",
             f"certificate: {'holds' if cert.ok else 'FAILED'}"]
    if not cert.ok:
        lines += ["violating points:"] + [f"  {np.array2string(p, precision=6)}"
                                          for p in cert.failures[:20]]
        art.fail(EXIT_FAILED, f"Gershgorin certificate failed at {len(cert.failures)} points")
    art.section("Gershgorin certificate", lines)


def _diagnostics_section(art, cfg, S, E, C, sd):
    beta = cfg["diagnostics"]["beta"]
    lines = [CERTIFICATE_NOTE]
    try:
        k = convergence_constants(S, E, beta, C)
    except BetaTooLarge as exc:
        art.section("Diagnostics", lines + [f"beta = {_fmt(beta)}: {exc}"])
        return None
    lines += [f"beta = {_fmt(beta)}",
              f"Omega (literal) = {_fmt(k.Omega)}, Omega used = max(|A|, |A^-1|) = "
              f"{_fmt(k.Omega_used)}",
              f"K_beta = {_fmt(k.K_beta)}, K_1beta = {_fmt(k.K1_beta)}, B_beta = "
              f"{_fmt(k.B_beta)}",
              f"C_beta (empirical) = {_fmt(k.C_beta)}, R (empirical) = {_fmt(k.R)}",
              f"E_beta = {_fmt(k.E_beta)}"]
    try:
        rad = empirical_radius(sd)
    except InsufficientOrders as exc:
        rad = None
        rad_note = str(exc)
    lines.append(f"eps_bar(beta) = {_fmt(k.eps_bar)}   empirical radius = "
                 + (_fmt(rad) if rad is not None else f"n/a ({rad_note})"))
    rows, bad, msg = bound_table(sd, k)
    cols = ["n", "max_norm_v", "max_norm_L", "alpha_n", "alpha_n_E_beta^n", "ok"]
    trows = [[r.n, r.norm_v, r.norm_L, r.alpha, r.bound, r.ok] for r in rows]
    art.table("norms_vs_bounds.csv", cols, trows)
    lines += ["per-order norms against alpha_n E_beta^n:"] + _text_table(cols, trows)
    lines.append(msg or "all computed orders satisfy the bound")
    art.section("Diagnostics", lines)
    return k


def _mode_secular(art, cfg):
    S = _system(cfg)
    trivial = S.is_trivial
    _system_section(art, S, trivial)
    N = cfg["series"]["order"]
    E = eigendecompose(S.A)
    C = conjugacy_coefficients(S, N, E)
    sd, C, _phi = secular_series(S, N, conjugacy=C, E=E)
    eps = _eps_grid(cfg)
    r = cfg["residual"]
    results = []
    for n in range(1, N + 1):
        results.append(("conjugacy", n, eps, conjugacy_residual(
            C, eps, order=n, n_points=r["n_points"], seed=r["seed"])))
    for n in range(1, N + 1):
        results.append(("secular", n, eps, secular_residual(
            sd, C, eps, order=n, n_points=r["n_points"], seed=r["seed"])))
    _residual_section(art, cfg, results, trivial)
    art.section("Series", [f"order {N}", "per order: (n, max |v_ik^(n)|, max |L_i^(n)|)"]
                + _text_table(["n", "v", "L"], sd.norms())
                + [f"normalisation defect max|v_ii^(n)| = {_fmt(sd.normalization_defect())}",
                   "dropped mass per order: " + ", ".join(_fmt(x) for x in sd.dropped)])
    _certificate(art, cfg, sd, float(eps[-1]))
    _diagnostics_section(art, cfg, S, E, C, sd)
    dump_secular(sd, art.outdir, art.config.hash)
    dump_conjugacy(C, art.outdir, art.config.hash)
    art.files += ["secular_series.txt", "secular_manifest.json", "conjugacy_series.txt"]


def _mode_block(art, cfg):
    S = _system(cfg)
    trivial = S.is_trivial
    _system_section(art, S, trivial)
    N = cfg["series"]["order"]
    B = block_partition(S.A, cfg["series"]["blocks"])
    art.section("Blocks", [f"sizes {list(B.sizes)}",
                           "moduli ranges " + ", ".join(f"[{_fmt(a)}, {_fmt(b)}]"
                                                        for a, b in (B.modulus_range(i) for i in range(B.k)))])
    bd = block_series(S, B, N)
    eps = _eps_grid(cfg)
    r = cfg["residual"]
    C = bd.conjugacy
    results = [("conjugacy", n, eps, conjugacy_residual(C, eps, order=n, n_points=r["n_points"],
                                                        seed=r["seed"]))
               for n in range(1, C.order + 1)]
    results += [("block", n, eps, block_residual(bd, eps, order=n, n_points=r["n_points"],
                                                 seed=r["seed"]))
                for n in range(1, N + 1)]
    _residual_section(art, cfg, results, trivial)
    dump_conjugacy(C, art.outdir, art.config.hash)
    art.files.append("conjugacy_series.txt")


def _mode_lyapunov(art, cfg):
    ly = cfg["lyapunov"]
    ser = cfg["series"]
    S = _system(cfg, Truncation(tau=ly["tau"], k_max=ser["k_max"], budget=max(ser["budget"], 1e-2)))
    _system_section(art, S, S.is_trivial)
    samp = _sampler(cfg)
    grid = [float(e) for e in ly["eps"]]
    results = [benettin_spectrum(S, e, samp) for e in grid]
    rows = [[r.eps, i + 1, r.estimator, lam, se] for r in results
            for i, (lam, se) in enumerate(zip(r.exponents, r.stderr))]
    lines = [f"sampler: seed {samp.seed}, {samp.n_orbits} orbits, transient {samp.transient}, "
             f"{samp.steps} steps"]
    if ly["series_formula"]:
        sd, C, _phi = secular_series(S, ly["series_order"])
        agree = []
        for b in results:
            s = exponent_from_series(S, sd, C, b.eps, samp, prune=ly["prune"])
            rows += [[s.eps, i + 1, s.estimator, lam, se]
                     for i, (lam, se) in enumerate(zip(s.exponents, s.stderr))]
            for i in range(b.dim):
                diff = s.exponents[i] - b.exponents[i]
                comb = b.stderr[i] + s.stderr[i]
                ok = abs(diff) <= max(3 * comb, 1e-12) and abs(diff) <= 1e-3
                agree.append([b.eps, i + 1, b.exponents[i], s.exponents[i], diff, comb, ok])
        cols = ["eps", "i", "benettin", "series_formula", "difference", "combined_stderr",
                "ok"]
        art.table("agreement.csv", cols, agree)
        lines += ["series formula against Benettin (same orbits):"] + _text_table(cols, agree)
        if not all(a[-1] for a in agree):
            art.fail(EXIT_FAILED, "series-formula exponents disagree with Benettin")
    art.table("spectra.csv", ["eps", "i", "estimator", "exponent", "stderr"], rows)
    deg = ly["degree"]
    if len(grid) > deg:
        x = np.array(grid)
        frows = []
        for i in range(results[0].dim):
            y = np.array([r.exponents[i] for r in results])
            se = np.array([r.stderr[i] for r in results])
            c, cse, res, chi2 = polynomial_fit(x, y, se, deg)
            rms_r = float(np.sqrt((res ** 2).mean()))
            rms_n = float(np.sqrt((se ** 2).mean()))
            for j in range(deg + 1):
                frows.append([i + 1, j, c[j], cse[j], rms_r, rms_n, rms_r <= rms_n])
        cols = ["i", "power", "coefficient", "stderr", "rms_residual", "rms_noise",
                "residual_below_noise"]
        art.table("fit.csv", cols, frows)
        lines += [f"degree-{deg} weighted fits of lambda_i(eps):"] + _text_table(cols, frows)
    else:
        lines.append(f"no fit: {len(grid)} grid points for degree {deg}")
    art.section("Lyapunov spectra", _text_table(["eps", "i", "estimator", "exponent", "stderr"],
                                                rows) + lines)


def _mode_dimensions(art, cfg):
    dc = cfg["dimensions"]
    G1, G2 = _field(dc["G1"], 2), _field(dc["G2"], 2)
    samp = _sampler(cfg)
    exp = product_experiment(dc["B1"], dc["B2"], G1, G2, dc["eps"], samp,
                             control=dc["control"], tol=dc["tolerance"])
    exp.to_csv(os.path.join(art.outdir, "dimensions.csv"), art.config.hash)
    art.files.append("dimensions.csv")
    cols = ["run", "eps", "sigma", "dim_L", "dim_HD_product", "delta", "delta_err",
            "delta_factor", "delta_factor_err", "union_mismatch"]
    rows = []
    for lab, reps in (("main", exp.rows), ("control", exp.control_rows)):
        for r in reps:
            rows.append([lab, r.eps, r.sigma, r.dim_L, r.dim_HD_product, r.discrepancy,
                         r.discrepancy_err, r.discrepancy_factor, r.discrepancy_factor_err,
                         r.union_mismatch])
    lines = [f"B1 = {dc['B1']}, B2 = {dc['B2']}",
             "delta = dim_HD_product - dim_L with the most negative 4-D exponent as the "
             "Kaplan-Yorke denominator; delta_factor uses factor 1's negative exponent",
             "control: B1 and G1 on both factors"]
    art.section("Dimensions", lines + _text_table(cols, rows))


def _mode_diagnostics(art, cfg):
    dg = cfg["diagnostics"]
    ser = cfg["series"]
    S = _system(cfg, Truncation(tau=dg["tau"], k_max=ser["k_max"], budget=max(ser["budget"], 1e-2)))
    trivial = S.is_trivial
    _system_section(art, S, trivial)
    E = eigendecompose(S.A)
    sd, C, _phi = secular_series(S, dg["order"], E=E)
    alpha = alpha_sequence(dg["alpha_order"])
    viol = alpha.bound_violations()
    arows = [[n, alpha[n], 4 ** n, alpha[n] <= 4 ** n] for n in range(len(alpha))]
    art.table("alpha.csv", ["n", "alpha_n", "four_pow_n", "alpha_n_le_4^n"],
              [[n, str(a), str(f), ok] for n, a, f, ok in arows])
    art.section("Alpha sequence", [
        "alpha_0..alpha_4 = " + ", ".join(str(alpha[n]) for n in range(min(5, len(alpha)))),
        f"recursion verified exactly: {alpha.satisfies_recursion()}",
        ("alpha_n <= 4^n holds for all n <= " + str(alpha.order)) if not viol else
        f"alpha_n > 4^n for n = {viol[0]}..{viol[-1]} ({len(viol)} orders); the ratio "
        f"alpha_n/alpha_(n-1) tends to 4 + 2 sqrt(2) = {4 + 2 * math.sqrt(2):.6f}"])
    k = _diagnostics_section(art, cfg, S, E, C, sd)
    if k is None:
        raise BetaTooLarge(f"beta = {dg['beta']} too large for this matrix")
    f = next((c for c in S.F if len(c)), TrigSeries.sin(np.eye(S.dim, dtype=int)[0]))
    rows = holder_composition_check(f, S.A.A, dg["beta"], n_pairs=dg["holder_pairs"])
    art.table("holder.csv", ["m", "norm_f_A^m", "Omega^(beta|m|)_norm_f", "ok"], rows)
    art.section("Hoelder composition check (sampled)",
                _text_table(["m", "lhs", "rhs", "ok"], rows))
    if not all(r[3] for r in rows):
        art.section("Hoelder composition check", ["violations found (diagnostic only)"])


MODE_RUNNERS = {"secular-1d": _mode_secular, "block": _mode_block,
                "lyapunov-sweep": _mode_lyapunov, "dimensions": _mode_dimensions,
                "diagnostics": _mode_diagnostics}


def run(config: RunConfig, outdir: str | None = None) -> RunArtifacts:
    """Execute the configured pipeline and write all artifacts."""
    outdir = outdir or config[""]["output"]
    art = RunArtifacts(config, outdir)
    os.makedirs(outdir, exist_ok=True)
    try:
        MODE_RUNNERS[config.mode](art, config)
    except CERTIFICATE_FAILURES as exc:
        art.fail(EXIT_FAILED, f"{type(exc).__name__}: {exc}")
    except NUMERICAL_ABORTS as exc:
        art.fail(EXIT_ABORT, f"numerical abort, {type(exc).__name__}: {exc}")
    except SETUP_ERRORS as exc:
        hint = ""
        if isinstance(exc, (ComplexSpectrum, DegenerateModuli)):
            hint = " (use mode = \"block\")"
        art.fail(EXIT_CONFIG, f"{type(exc).__name__}: {exc}{hint}")
    except ToralSeriesError as exc:
        art.fail(EXIT_ABORT, f"{type(exc).__name__}: {exc}")
    emit_report(art)
    return art


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="toralseries", description=__doc__.split("\n")[0])
    p.add_argument("config", help="TOML run configuration")
    p.add_argument("-o", "--output", help="output directory (overrides the config)")
    p.add_argument("-q", "--quiet", action="store_true", help="do not print the report")
    args = p.parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    art = run(cfg, args.output)
    if not args.quiet:
        with open(os.path.join(art.outdir, "report.txt")) as fh:
            sys.stdout.write(fh.read())
    return art.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
