# qr_cli.py
"""
Command surface of the Quasiregular Dynamics Lab

Each command runs one group of numerical checks and collects them in a
Report: named criteria with value, tolerance and verdict, plus tables and
binary artifacts. Reports are written as CSV, JSON or plain text with 17
significant digits and no timestamps, so a fixed seed reproduces the files
byte for byte.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from automorphic import strong_automorphy_check
from config import COMMANDS, OUTPUT_FORMATS, QR_CONFIG, RunConfig, applied, load_run_config
from dynamics import (build_linearizer, classify_fixed_point, julia_render, linearizer_residual,
                      marked_distance, multiplier, periodic_points)
from families import FAMILIES, build_family
from geometry import (ConformalLinear, DiscreteGroup, Isometry, Lattice, check_group_invariance,
                      extract_linear_part, from_complex, is_infinite, to_complex)
from infspace import (chain_rule_check, dilatation_estimate, fit_homogeneity, image_ball_measure,
                      inverse_formula_check, inverse_rep_check, linear_map, mean_radius,
                      mean_radius_profile, power_map, radial_stretch, sphere_grid, unit_ball_volume)
from qr_errors import ConfigError, EmitError, NonConformal, QRLabError, ToleranceFail
from schroder import (LattesMap, Twist, conjugacy_iteration, construct_nonlinear_A,
                      equivariance_residual, fit_lattes_rational, lattes_normal_form,
                      rational_fixed_points, schroder_residual)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class Criterion:
    """One verdict: |value - target| <= tolerance, or value <= tolerance without a target."""
    name: str
    value: float
    tolerance: float
    passed: bool
    target: Optional[float] = None
    note: str = ''

    def to_row(self) -> Dict[str, Any]:
        return {'criterion': self.name, 'value': self.value,
                'target': np.nan if self.target is None else self.target,
                'tolerance': self.tolerance, 'passed': self.passed, 'note': self.note}


CRITERION_COLUMNS = ['criterion', 'value', 'target', 'tolerance', 'passed', 'note']


@dataclass
class Report:
    command: str
    inputs: Dict[str, Any] = field(default_factory=dict)
    criteria: List[Criterion] = field(default_factory=list)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    artifacts: Dict[str, bytes] = field(default_factory=dict)
    figures: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def failures(self) -> List[Criterion]:
        return [c for c in self.criteria if not c.passed]

    def at_most(self, name: str, value: float, tol: float) -> Criterion:
        value = float(value)
        criterion = Criterion(name, value, float(tol), bool(np.isfinite(value) and value <= tol))
        self.criteria.append(criterion)
        return criterion

    def near(self, name: str, value: float, target: float, tol: float) -> Criterion:
        value = float(value)
        ok = bool(np.isfinite(value) and abs(value - target) <= tol)
        criterion = Criterion(name, value, float(tol), ok, float(target))
        self.criteria.append(criterion)
        return criterion

    def holds(self, name: str, flag: bool, note: str = '') -> Criterion:
        criterion = Criterion(name, float(bool(flag)), 0.0, bool(flag), 1.0, note)
        self.criteria.append(criterion)
        return criterion

    def fail(self, name: str, exc: Exception) -> Criterion:
        logger.warning("%s: %s", name, exc)
        criterion = Criterion(name, float('nan'), 0.0, False, None, f"{type(exc).__name__}: {exc}")
        self.criteria.append(criterion)
        return criterion

    def attempt(self, name: str, check: Callable[[], None]) -> None:
        """Run a check; a lab error becomes a failed criterion instead of aborting the command."""
        try:
            check()
        except QRLabError as exc:
            self.fail(name, exc)

    def raise_for_failures(self) -> None:
        failed = self.failures()
        if failed:
            raise ToleranceFail(f"{len(failed)} criterion(s) failed: {', '.join(c.name for c in failed)}")


def _relative_matrix_gap(matrix: np.ndarray, expected: np.ndarray) -> float:
    return float(np.linalg.norm(matrix - expected) / max(np.linalg.norm(expected), 1e-300))


def _family(run: RunConfig, default: str = 'power'):
    name = run.params.get('family', default)
    if name not in FAMILIES:
        raise ConfigError(f"unknown family '{name}', expected one of {', '.join(FAMILIES)}")
    return build_family(name, run.families.get(name))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _verify_schroder(run: RunConfig, report: Report) -> None:
    names = run.params.get('families', list(FAMILIES))
    rows = []
    for name in names:
        if name not in FAMILIES:
            raise ConfigError(f"unknown family '{name}'")
        setup = build_family(name, run.families.get(name))
        h = setup.h
        row = {'family': name, 'uqr': '', 'automorphy': np.nan, 'schroder': np.nan}

        def automorphy():
            row['automorphy'] = strong_automorphy_check(h, seed=run.seed)
            report.at_most(f"{name}: strong automorphy", row['automorphy'], h.automorphy_tolerance)

        def schroder():
            f = setup.uqr
            row['uqr'] = f.name
            row['schroder'] = schroder_residual(f, h, setup.M, seed=run.seed)
            if setup.closed_form is not None:
                tol = run.tol('schroder_residual')
            elif name == 'zorich':
                tol = run.tol('automorphy_zorich')
            else:
                tol = run.tol('lattes_residual')
            report.at_most(f"{name}: Schroder residual", row['schroder'], tol)

        report.attempt(f"{name}: strong automorphy", automorphy)
        report.attempt(f"{name}: Schroder residual", schroder)

        if name == 'zorich':
            report.holds("zorich: 2Id rejected by the group", not check_group_invariance(
                ConformalLinear.dilation(2.0, 3), h.group))
        if name == 'lattes':
            def lattes():
                fit = fit_lattes_rational(h, setup.M, 2, seed=run.seed)
                report.at_most("lattes: rational fit residual", fit.holdout_residual, run.tol('lattes_residual'))
                report.at_most("lattes: Schroder residual of the fitted map",
                               schroder_residual(fit.rational, h, setup.M, seed=run.seed), run.tol('lattes_residual'))
                c = complex(to_complex(setup.M.matrix[:, 0]))
                expected = {1 + 1j: 1 / 2j, 1 - 1j: -1 / 2j}.get(complex(round(c.real, 12), round(c.imag, 12)))
                if expected is not None:
                    a = lattes_normal_form(fit)
                    report.at_most("lattes: normal form coefficient", abs(a - expected),
                                   run.tol('lattes_residual'))
            report.attempt("lattes: rational fit", lattes)
        rows.append(row)
    report.tables['families'] = pd.DataFrame(rows)


def _root_of_unity_gap(x: np.ndarray, count: int) -> float:
    roots = np.exp(2j * np.pi * np.arange(count) / count)
    return float(np.min(np.abs(complex(to_complex(x)) - roots)))


def _branch_image_checks(setup, records, run: RunConfig, report: Report) -> None:
    report.inputs['branch_images'] = int(sum(rec.branch_flag for rec in records))
    if setup.name != 'chebyshev':
        return
    one = [rec for rec in records if np.linalg.norm(rec.x - np.array([1.0, 0.0])) <= run.tol('periodic_match')]
    flagged = len(one) == 1 and one[0].branch_flag
    report.holds("x'=1 found and flagged as a branch image", flagged,
                 'flagged' if flagged else f"{len(one)} record(s) at 1, flags {[rec.branch_flag for rec in one]}")


def _periodic_points(run: RunConfig, report: Report) -> None:
    setup = _family(run)
    m = int(run.params.get('m', 3))
    records = periodic_points(setup.h, setup.M, m, rho=run.params.get('rho'), f=setup.closed_form)
    report.tables['points'] = pd.DataFrame([rec.to_row() for rec in records])
    report.holds("at least one periodic point", len(records) > 0)
    worst = max((rec.residual for rec in records), default=0.0)
    report.at_most("max periodic residual", worst, run.tol('periodic_residual'))
    if setup.name == 'power' and setup.closed_form is not None and setup.M.scale == 2.0:
        count = 2 ** m - 1
        report.near("distinct periodic points", len(records), count, 0.0)
        gaps = [_root_of_unity_gap(rec.x, count) for rec in records]
        report.at_most("distance to roots of unity", max(gaps, default=np.inf), run.tol('periodic_match'))
    _branch_image_checks(setup, records, run, report)


def _linearizer_tolerances(setup, run: RunConfig):
    if setup.name == 'zorich':
        return run.tol('linearizer_zorich'), run.tol('multiplier_zorich')
    if setup.closed_form is None:
        return run.tol('lattes_residual'), run.tol('multiplier_implicit')
    return run.tol('linearizer_planar'), run.tol('multiplier')


def _lattes_normal_form_checks(run: RunConfig, report: Report) -> None:
    f = LattesMap()
    rows = []
    for z in rational_fixed_points(f):
        if not np.isfinite(z):
            continue
        x = from_complex(np.array([z]))[0]
        residual = float(np.linalg.norm(f(x[None, :])[0] - x))
        report.at_most(f"normal form fixed point {z:.6f}: residual", residual, run.tol('periodic_match'))
        one = multiplier(f, x, 1)
        modulus = float(np.sqrt(abs(np.linalg.det(one))))
        report.near(f"normal form fixed point {z:.6f}: |multiplier|", modulus, np.sqrt(2.0),
                    run.tol('lattes_multiplier'))
        four = multiplier(f, x, 4)
        report.at_most(f"normal form fixed point {z:.6f}: (f^4)' = -4", _relative_matrix_gap(four, -4.0 * np.eye(2)),
                       run.tol('lattes_fourth_iterate'))
        eight = multiplier(f, x, 8)
        report.at_most(f"normal form fixed point {z:.6f}: (f^8)' = 16", _relative_matrix_gap(eight, 16.0 * np.eye(2)),
                       run.tol('lattes_eighth_iterate'))
        rows.append({'z_re': z.real, 'z_im': z.imag, 'residual': residual, 'modulus': modulus,
                     'f4_00': four[0, 0], 'f4_10': four[1, 0], 'f8_00': eight[0, 0], 'f8_10': eight[1, 0]})
    report.tables['normal_form'] = pd.DataFrame(rows)


def _linearize(run: RunConfig, report: Report) -> None:
    setup = _family(run)
    m = int(run.params.get('m', 2 if setup.name == 'power' else 1))
    f = setup.uqr
    implicit = setup.closed_form is None
    residual_tol, multiplier_tol = _linearizer_tolerances(setup, run)
    if 'domain' in run.params:
        domain = tuple(np.asarray(side, dtype=float) for side in run.params['domain'])
    elif setup.name == 'zorich':
        domain = (-0.5 * np.ones(3), 0.5 * np.ones(3))
    else:
        domain = None

    records = periodic_points(setup.h, setup.M, m, f=setup.closed_form)
    usable = [rec for rec in records if not rec.branch_flag and not is_infinite(rec.x)]
    report.holds("non-branch periodic points found", len(usable) > 0)
    _branch_image_checks(setup, records, run, report)

    rows = []
    for index, rec in enumerate(usable):
        label = f"x'[{index}]"
        spec = build_linearizer(rec, setup.h, setup.M)
        row = {'index': index, 'q': spec.q, 'p': spec.p, 'r': spec.r}
        row.update({f"x_{i}": float(c) for i, c in enumerate(rec.x)})
        row.update({f"u_{i}": float(c) for i, c in enumerate(rec.u)})

        def residual():
            row['residual'] = linearizer_residual(spec, f, domain, seed=run.seed)
            report.at_most(f"{label}: linearizer residual", row['residual'], residual_tol)

        def derivative():
            hint = rec.u if implicit else None
            jac = multiplier(f, rec.x, spec.period, hint=hint)
            expected = spec.lam ** spec.period * np.eye(setup.h.dim)
            row['multiplier_00'] = float(jac[0, 0])
            row['multiplier_gap'] = _relative_matrix_gap(jac, expected)
            report.at_most(f"{label}: (f^rm)' = lambda^rm Id", row['multiplier_gap'], multiplier_tol)

        def homogeneity():
            grid = sphere_grid(3, run.sample('homogeneity_nodes_3d')) if setup.h.dim == 3 else None
            profile = mean_radius_profile(setup.h, rec.u, t0=1e-2, count=6, grid=grid, threads=run.threads)
            row['d'] = fit_homogeneity(profile)
            report.near(f"{label}: homogeneity of h at u", row['d'], 1.0, run.tol('homogeneity_unit'))

        def classification():
            kind = classify_fixed_point(f.iterate(m), rec.x, hint=rec.u if implicit else None)
            row['classification'] = kind
            report.holds(f"{label}: repelling", kind == 'repelling', kind)

        report.attempt(f"{label}: linearizer residual", residual)
        report.attempt(f"{label}: multiplier", derivative)
        report.attempt(f"{label}: homogeneity", homogeneity)
        report.attempt(f"{label}: classification", classification)
        rows.append(row)
    report.tables['linearizers'] = pd.DataFrame(rows)

    if setup.normal_form is not None:
        report.attempt("normal form multipliers", lambda: _lattes_normal_form_checks(run, report))


def _infspace(run: RunConfig, report: Report) -> None:
    origin = np.zeros(2)
    rows = []
    for d in run.params.get('degrees', [2, 3]):
        profile = mean_radius_profile(power_map(int(d)), origin, t0=0.1, count=8, threads=run.threads)
        fitted = fit_homogeneity(profile)
        report.near(f"z^{d}: homogeneity at 0", fitted, float(d), run.tol('homogeneity_degree'))
        rows.append({'degree': int(d), 'fitted': fitted, 'fit_residual': profile.fit_residual})
        report.figures.setdefault('profile', profile)
        report.tables[f"profile_z{d}"] = profile.to_frame()
    report.tables['homogeneity'] = pd.DataFrame(rows)

    x0 = np.asarray(run.params.get('center', [0.3, 0.2]), dtype=float)
    t = float(run.params.get('radius', 0.1))
    method_rows = []
    for name in ('power', 'chebyshev', 'lattes'):
        setup = build_family(name, run.families.get(name))
        quad = mean_radius(setup.h, x0, t, 'jacobian')
        counted = mean_radius(setup.h, x0, t, 'montecarlo', seed=run.seed)
        gap = abs(quad - counted) / quad
        report.at_most(f"{name}: jacobian vs Monte-Carlo mean radius", gap, run.tol('method_agreement'))
        low, high = x0 - t, x0 + t
        dil = dilatation_estimate(setup.h, (low, high), seed=run.seed)
        report.near(f"{name}: dilatation of h", dil.K, 1.0, run.tol('conformal_ratio'))
        method_rows.append({'family': name, 'jacobian': quad, 'montecarlo': counted, 'gap': gap,
                            'K_O': dil.K_O, 'K_I': dil.K_I})
    report.tables['methods'] = pd.DataFrame(method_rows)


def _chain_rule(run: RunConfig, report: Report) -> None:
    pairs = {
        'z^2 o z^3': (power_map(2), power_map(3)),
        'diag(2,1) o diag(2,1)': (linear_map(np.diag([2.0, 1.0])), linear_map(np.diag([2.0, 1.0]))),
        'z^2 o x|x|^(1/2)': (power_map(2), radial_stretch(1.5)),
    }
    omega = unit_ball_volume(2)
    rows = []
    for label, (f, h) in pairs.items():
        def check(label=label, f=f, h=h):
            result = chain_rule_check(f, h)
            report.at_most(f"{label}: chain rule discrepancy", result.discrepancy, run.tol('chain_rule'))
            measure = image_ball_measure(result.normalized, 'montecarlo', seed=run.seed)
            gap = abs(measure.volume - omega) / omega
            report.at_most(f"{label}: normalized measure", gap, run.tol('measure'))
            rows.append({'pair': label, 'discrepancy': result.discrepancy, 'C': result.C,
                         'd_f': result.d_f, 'd_h': result.d_h, 'd_composite': result.d_composite,
                         'measure': measure.volume, 'measure_stderr': measure.stderr})
        report.attempt(f"{label}: chain rule", check)
    report.tables['pairs'] = pd.DataFrame(rows)


def _inverse_rule(run: RunConfig, report: Report) -> None:
    rows = []

    def stretch():
        f = radial_stretch(1.5)
        result = inverse_formula_check(f)
        report.near("x|x|^(1/2): inverse homogeneity", result.d_inverse, 2.0 / 3.0, run.tol('homogeneity_degree'))
        report.at_most("x|x|^(1/2): inverse formula discrepancy", result.discrepancy, run.tol('inverse_rule'))
        rows.append({'map': 'x|x|^(1/2)', 'discrepancy': result.discrepancy, 'C': result.C,
                     'd': result.d, 'd_inverse': result.d_inverse})
        table = inverse_rep_check(f, np.zeros(2))
        report.tables['inverse_rep'] = table
        report.at_most("x|x|^(1/2): inverse representation gap", float(table['ratio'].iloc[-1]),
                       run.tol('inverse_representation'))

    def matrix():
        result = inverse_formula_check(linear_map(np.diag([2.0, 3.0])))
        report.at_most("diag(2,3): inverse formula discrepancy", result.discrepancy, run.tol('inverse_matrix'))
        rows.append({'map': 'diag(2,3)', 'discrepancy': result.discrepancy, 'C': result.C,
                     'd': result.d, 'd_inverse': result.d_inverse})

    report.attempt("x|x|^(1/2): inverse formula", stretch)
    report.attempt("diag(2,3): inverse formula", matrix)
    report.tables['maps'] = pd.DataFrame(rows)


def _conjugacy_group(settings: Dict[str, Any]) -> DiscreteGroup:
    lattice = Lattice(np.asarray(settings['lattice'], dtype=float))
    turns = [Isometry(-np.eye(lattice.dim), np.zeros(lattice.dim))] if settings.get('with_half_turn') else []
    return DiscreteGroup.from_lattice(lattice, turns, name='conjugacy')


def _conjugacy(run: RunConfig, report: Report) -> None:
    settings = dict(run.families['conjugacy'])
    settings.update(run.params)
    G = _conjugacy_group(settings)
    M = ConformalLinear.dilation(float(settings['lambda']), G.dim)
    twist = Twist(np.asarray(settings['center'], dtype=float), float(settings['radius']),
                  float(settings['angle']))
    A = construct_nonlinear_A(G, M, twist)

    report.at_most("A o g = (M g M^-1) o A", equivariance_residual(A, G, M, seed=run.seed),
                   run.tol('equivariance'))
    extracted = extract_linear_part(A, G.lattice)
    report.at_most("extracted linear part", float(np.max(np.abs(extracted.matrix - M.matrix))),
                   run.tol('linear_part'))
    try:
        extract_linear_part(linear_map(np.diag([2.0, 3.0])), G.lattice)
        report.holds("diag(2,3) rejected as non-conformal", False)
    except NonConformal:
        report.holds("diag(2,3) rejected as non-conformal", True)

    result, iota = conjugacy_iteration(A, M, float(settings['grid_radius']), lattice=G.lattice)
    report.holds("conjugacy iteration converged", result.converged)
    if float(settings['angle']) == 0.0:
        report.near("k at convergence", result.k_final, 0.0, 0.0)
    else:
        report.at_most("geometric step ratio", result.decay_ratio, run.tol('conjugacy_decay'))
    report.at_most("sup |iota o A - M o iota|", result.residual_conj, run.tol('conjugacy_residual'))
    report.at_most("sup |iota - Id| on lattice points", result.residual_lattice, run.tol('lattice_residual'))
    report.inputs['k_final'] = result.k_final
    report.tables['decay'] = result.to_frame()
    report.figures['conjugacy'] = result


def _render_julia(run: RunConfig, report: Report) -> None:
    setup = _family(run)
    raster_settings = run.raster
    window = run.params.get('window', setup.window)
    resolution = run.params.get('resolution', raster_settings['resolution'])
    iterations = int(run.params.get('iterations', setup.raster_iterations))
    raster = julia_render(setup.uqr, window, resolution, iterations,
                          escape_radius=raster_settings['escape_radius'],
                          convergence_radius=raster_settings['convergence_radius'],
                          slice_value=setup.slice_value, threads=run.threads)
    counts = raster.class_counts()
    report.holds("marked set is non-empty", counts['undecided'] > 0)
    if setup.julia_distance is not None:
        report.at_most("marked pixels from the known Julia set (px)",
                       marked_distance(raster, setup.julia_distance), run.tol('julia_pixels'))
    width, height = raster.resolution
    report.tables['classes'] = pd.DataFrame([{'width': width, 'height': height, **counts}])
    report.artifacts['julia.ppm'] = raster.to_ppm_bytes(raster_settings['colors'])
    report.figures['raster'] = raster


RUNNERS: Dict[str, Callable[[RunConfig, Report], None]] = {
    'verify-schroder': _verify_schroder,
    'periodic-points': _periodic_points,
    'linearize': _linearize,
    'infspace': _infspace,
    'chain-rule': _chain_rule,
    'inverse-rule': _inverse_rule,
    'conjugacy': _conjugacy,
    'render-julia': _render_julia,
}


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def run(command: str, config: RunConfig) -> Report:
    """
    Run one command under a validated configuration.

    Args:
        command: One of COMMANDS
        config: RunConfig from load_run_config

    Returns:
        Report with every criterion evaluated
    """
    if command not in RUNNERS:
        raise ConfigError(f"unknown command '{command}'")
    report = Report(command, inputs=_plain({'command': command, 'seed': config.seed,
                                            'params': config.params}))
    with applied(config):
        RUNNERS[command](config, report)
    logger.info("%s: %d criteria, %d failed", command, len(report.criteria), len(report.failures()))
    return report


# ---------------------------------------------------------------------------
# Emitters
# ---------------------------------------------------------------------------

def _criteria_frame(report: Report) -> pd.DataFrame:
    if not report.criteria:
        return pd.DataFrame(columns=CRITERION_COLUMNS)
    return pd.DataFrame([c.to_row() for c in report.criteria], columns=CRITERION_COLUMNS)


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{value:.17g}"
    return str(value)


def _text_report(report: Report) -> str:
    lines = []
    lines.append("=" * 60)
    lines.append(f"📊 QUASIREGULAR LAB REPORT: {report.command}")
    lines.append("=" * 60)
    lines.append("")
    lines.append("🔬 INPUTS")
    lines.append("-" * 40)
    for key, value in report.inputs.items():
        lines.append(f"{key}: {json.dumps(value, sort_keys=True)}")
    lines.append("")
    lines.append("🎯 CRITERIA")
    lines.append("-" * 40)
    for c in report.criteria:
        glyph = "✅" if c.passed else "❌"
        target = "" if c.target is None else f" target {_format(c.target)}"
        lines.append(f"{glyph} {c.name}: {_format(c.value)}{target} tolerance {_format(c.tolerance)}"
                     + (f" ({c.note})" if c.note else ""))
    for name, table in report.tables.items():
        lines.append("")
        lines.append(f"📈 {name.upper()}")
        lines.append("-" * 40)
        lines.append(table.to_string(index=False, float_format=_format) if not table.empty else "(empty)")
    lines.append("")
    lines.append(f"Verdict: {'PASS' if report.passed else 'FAIL'}")
    lines.append("=" * 60)
    return "\n".join(lines) + "\n"


def _json_report(report: Report) -> str:
    document = {
        'command': report.command,
        'inputs': report.inputs,
        'passed': report.passed,
        'criteria': [_plain(c.to_row()) for c in report.criteria],
        'tables': {name: _plain(table.to_dict(orient='records')) for name, table in report.tables.items()},
    }
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def emit(report: Report, fmt: str = 'csv', out_dir='results') -> List[Path]:
    """
    Write a report, its tables and its artifacts.

    Args:
        report: Finished report
        fmt: One of OUTPUT_FORMATS
        out_dir: Output directory (created if missing)

    Returns:
        Paths written, report first
    """
    if fmt not in OUTPUT_FORMATS:
        raise ConfigError(f"unknown format '{fmt}'")
    float_format = QR_CONFIG['output']['float_format']
    out = Path(out_dir)
    stem = report.command
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt == 'csv':
            path = out / f"{stem}_report.csv"
            _criteria_frame(report).to_csv(path, index=False, float_format=float_format)
        elif fmt == 'json':
            path = out / f"{stem}_report.json"
            path.write_text(_json_report(report), encoding='utf-8')
        else:
            path = out / f"{stem}_report.txt"
            path.write_text(_text_report(report), encoding='utf-8')
        written.append(path)
        for name, table in report.tables.items():
            path = out / f"{stem}_{name}.csv"
            table.to_csv(path, index=False, float_format=float_format)
            written.append(path)
        for name, payload in report.artifacts.items():
            path = out / f"{stem}_{name}"
            path.write_bytes(payload)
            written.append(path)
    except OSError as exc:
        raise EmitError(f"could not write report files to {out}: {exc}") from exc
    return written


def save_plots(report: Report, out_dir) -> List[Path]:
    """PNG figures for whatever the report carries (raster, profile, conjugacy decay)."""
    from qr_visualizer import QRVisualizer

    visualizer = QRVisualizer()
    out = Path(out_dir)
    written = []
    if 'raster' in report.figures:
        written.append(visualizer.save(visualizer.plot_julia(report.figures['raster']),
                                       out / f"{report.command}_julia.png"))
    if 'conjugacy' in report.figures:
        written.append(visualizer.save(visualizer.plot_conjugacy_decay(report.figures['conjugacy']),
                                       out / f"{report.command}_decay.png"))
    if 'profile' in report.figures:
        written.append(visualizer.save(visualizer.plot_mean_radius_profile(report.figures['profile']),
                                       out / f"{report.command}_profile.png"))
    return written


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='qr_lab', description='Quasiregular dynamics verification lab')
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help='TOML campaign file')
    parser.add_argument('--out', help='output directory')
    parser.add_argument('--seed', type=int, help='random seed (unsigned 64-bit)')
    parser.add_argument('--format', dest='fmt', default='csv', choices=OUTPUT_FORMATS)
    parser.add_argument('--threads', type=int, help='worker threads (overrides QR_LAB_THREADS)')
    parser.add_argument('--plots', action='store_true', help='also write PNG plots')
    return parser


def configure_logging() -> None:
    level = os.getenv('LOG_LEVEL', 'WARNING').upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; exit status 0 if every criterion passed, 1 on failures, 2 on bad configuration."""
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        config = load_run_config(args.command, args.config, args.out, args.seed,
                                 args.fmt, args.threads, args.plots)
    except ConfigError as exc:
        print(f"❌ Configuration error: {exc}")
        return 2

    print(f"🚀 Running {args.command}...")
    try:
        report = run(args.command, config)
    except ConfigError as exc:
        print(f"❌ Configuration error: {exc}")
        return 2
    except QRLabError as exc:
        print(f"❌ {args.command} aborted: {type(exc).__name__}: {exc}")
        return 1
    try:
        paths = emit(report, config.fmt, config.out_dir)
        if config.plots:
            paths += save_plots(report, config.out_dir)
    except EmitError as exc:
        print(f"❌ {exc}")
        return 1
    for path in paths:
        print(f"💾 Saved {path}")

    for criterion in report.criteria:
        glyph = "✅" if criterion.passed else "❌"
        print(f"  {glyph} {criterion.name}: {criterion.value:.6g}")
    try:
        report.raise_for_failures()
    except ToleranceFail as exc:
        print(f"⚠️ {exc}")
        return 1
    print(f"✅ {args.command}: all {len(report.criteria)} criteria passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
