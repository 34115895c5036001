# config.py
"""
Configuration for the Quasiregular Dynamics Lab
Every default tolerance, sample count and family parameter lives here so a
campaign is reproducible from one file.
"""

import copy
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

from dotenv import load_dotenv

from qr_errors import ConfigError

load_dotenv()

QR_CONFIG = {
    'tolerances': {
        'orthogonality_constructed': 1e-12,
        'orthogonality_extracted': 1e-9,
        'conformal_ratio': 1e-6,
        'group_membership': 1e-9,
        'finite_order': 1e-10,
        'branch_image': 1e-8,
        'inverse_branch': 1e-10,
        'inverse_branch_zorich': 1e-6,
        'automorphy': 1e-9,
        'automorphy_zorich': 1e-6,
        'periodic_residual': 1e-8,
        'dedup_chordal': 1e-9,
        'schroder_residual': 1e-12,
        'lattes_residual': 1e-6,
        'lattes_condition': 1e12,
        'conjugacy_step': 1e-10,
        'conjugacy_residual': 1e-8,
        'lattice_residual': 1e-10,
        'conjugacy_decay': 0.55,
        'linear_part': 1e-12,
        'equivariance': 1e-9,
        'decay_slack': 0.05,
        'simple_scale': 1e-3,
        'homogeneity_fit': 0.05,
        'homogeneity_degree': 1e-3,
        'homogeneity_unit': 1e-2,
        'method_agreement': 0.02,
        'method_disagreement': 0.05,
        'chain_rule': 1e-3,
        'inverse_rule': 2e-3,
        'inverse_matrix': 1e-6,
        'measure': 0.02,
        'degenerate_det': 1e-14,
        'linearizer_planar': 1e-10,
        'linearizer_zorich': 1e-5,
        'multiplier': 1e-6,
        'multiplier_zorich': 1e-2,
        'multiplier_implicit': 1e-5,
        'lattes_multiplier': 1e-6,
        'lattes_fourth_iterate': 1e-5,
        'lattes_eighth_iterate': 1e-4,
        'periodic_match': 1e-10,
        'julia_pixels': 2.0,
        'inverse_representation': 1e-3,
        'newton_atol': 1e-30,
        'classify_neighbourhood': 1e-3,
    },
    'sampling': {
        'seed': 4577,
        'automorphy_samples': 1000,
        'transitivity_pairs': 16,
        'schroder_samples': 400,
        'linearizer_samples': 400,
        'sphere_nodes': 256,
        'sphere_nodes_3d': 128,
        'montecarlo_cells_2d': 400,
        'montecarlo_cells_3d': 48,
        'qmc_log2_points': 16,
        'qmc_replicates': 8,
        'lattes_samples_per_degree': 12,
        'fd_relative_step': 1e-6,
        'word_length': 3,
        'point_group_limit': 10_000,
        'orthogonal_order_kmax': 1000,
        'conjugacy_grid': 41,
        'conjugacy_kmax': 60,
        'conjugacy_burn_in': 3,
        'conjugacy_patience': 5,
        'classify_directions': 16,
        'classify_epsilon': 1e-6,
        'classify_iterations': 80,
        'quadrature_epsrel': 1e-9,
        'quadrature_limit': 50,
        'homogeneity_nodes_3d': 64,
    },
    'families': {
        'power': {'lambda': 2.0, 'angle': 0.0},
        'chebyshev': {'lambda': 2.0, 'angle': 0.0},
        'lattes': {'lattice': [[1.0, 0.0], [0.0, 1.0]], 'multiplier': [1.0, 1.0],
                   'rows': 8, 'direct_terms': 40},
        'zorich': {'lambda': 3.0, 'slice': 0.0, 'raster_iterations': 7},
        'conjugacy': {'lattice': [[4.0, 0.0], [0.0, 4.0]], 'with_half_turn': True,
                      'lambda': 2.0, 'center': [1.0, 1.0], 'radius': 0.4,
                      'angle': 1.0471975511965976, 'grid_radius': 4.0},
    },
    'raster': {
        'escape_radius': 1e6,
        'convergence_radius': 1e-6,
        'resolution': [512, 512],
        'iterations': 11,
        'colors': {
            'escaped': (16, 24, 48),
            'converged': (102, 126, 234),
            'undecided': (255, 217, 61),
        },
    },
    'output': {
        'float_format': '%.17g',
        'directory': 'results',
    },
    'visualization': {
        'dpi': 150,
        'figure_size': (10, 8),
        'style': 'seaborn-v0_8-darkgrid',
    },
}

COMMANDS = (
    'verify-schroder',
    'periodic-points',
    'linearize',
    'infspace',
    'chain-rule',
    'inverse-rule',
    'conjugacy',
    'render-julia',
)

OUTPUT_FORMATS = ('csv', 'json', 'text')

THREADS_ENV = 'QR_LAB_THREADS'


def tolerance(name: str) -> float:
    """Look up a default tolerance by name."""
    return QR_CONFIG['tolerances'][name]


def sampling(name: str):
    """Look up a default sampling parameter by name."""
    return QR_CONFIG['sampling'][name]


def worker_count(override: Optional[int] = None) -> int:
    """
    Number of worker threads for chunked grid work.

    Args:
        override: Explicit value (from the command line); wins over the env var

    Returns:
        Positive thread count
    """
    if override is not None:
        if override < 1:
            raise ConfigError(f"thread count must be positive, got {override}")
        return override
    raw = os.getenv(THREADS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from exc
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be positive, got {value}")
        return value
    return min(8, os.cpu_count() or 1)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass(frozen=True)
class RunConfig:
    """Validated settings for one command run."""
    command: str
    params: Dict[str, Any]
    tolerances: Dict[str, float]
    sampling: Dict[str, Any]
    families: Dict[str, Any]
    raster: Dict[str, Any]
    seed: int
    out_dir: Path
    fmt: str = 'csv'
    threads: int = 1
    plots: bool = False
    source: Optional[Path] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def tol(self, name: str) -> float:
        return self.tolerances[name]

    def sample(self, name: str):
        return self.sampling[name]


@contextmanager
def applied(run: RunConfig) -> Iterator[RunConfig]:
    """Install a run's settings as the module defaults for its duration."""
    saved = {key: QR_CONFIG[key] for key in ('tolerances', 'sampling', 'families', 'raster')}
    QR_CONFIG['tolerances'] = dict(run.tolerances)
    QR_CONFIG['sampling'] = dict(run.sampling)
    QR_CONFIG['families'] = dict(run.families)
    QR_CONFIG['raster'] = dict(run.raster)
    try:
        yield run
    finally:
        QR_CONFIG.update(saved)


def _validate(settings: Dict[str, Any]) -> None:
    for name, value in settings['tolerances'].items():
        if not isinstance(value, (int, float)) or value <= 0:
            raise ConfigError(f"tolerance '{name}' must be a positive number, got {value!r}")
    seed = settings['sampling'].get('seed')
    if not isinstance(seed, int) or seed < 0 or seed >= 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")


def load_run_config(command: str,
                    path: Optional[str] = None,
                    out_dir: Optional[str] = None,
                    seed: Optional[int] = None,
                    fmt: str = 'csv',
                    threads: Optional[int] = None,
                    plots: bool = False) -> RunConfig:
    """
    Build a RunConfig for ``command`` from defaults, a TOML campaign file and flags.

    Args:
        command: One of COMMANDS
        path: Optional TOML file; its ``[command]`` table supplies parameters
        out_dir: Output directory (defaults to QR_CONFIG['output']['directory'])
        seed: Seed override
        fmt: Output format, one of OUTPUT_FORMATS
        threads: Worker thread override
        plots: Also write PNG plots

    Returns:
        Validated, immutable RunConfig
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}', expected one of {', '.join(COMMANDS)}")
    if fmt not in OUTPUT_FORMATS:
        raise ConfigError(f"unknown format '{fmt}', expected one of {', '.join(OUTPUT_FORMATS)}")

    document: Dict[str, Any] = {}
    source = None
    if path is not None:
        source = Path(path)
        try:
            with open(source, 'rb') as handle:
                document = tomllib.load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {source}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {source} is not valid TOML: {exc}") from exc

    settings = deep_merge(
        {key: QR_CONFIG[key] for key in ('tolerances', 'sampling', 'families', 'raster')},
        {key: document[key] for key in ('tolerances', 'sampling', 'families', 'raster')
         if key in document},
    )
    unknown = set(settings['tolerances']) - set(QR_CONFIG['tolerances'])
    if unknown:
        raise ConfigError(f"unknown tolerance fields: {', '.join(sorted(unknown))}")
    if 'seed' in document:
        settings['sampling']['seed'] = document['seed']
    if seed is not None:
        settings['sampling']['seed'] = seed
    _validate(settings)

    params = document.get(command, {})
    if not isinstance(params, dict):
        raise ConfigError(f"[{command}] must be a table")

    return RunConfig(
        command=command,
        params=dict(params),
        tolerances=settings['tolerances'],
        sampling=settings['sampling'],
        families=settings['families'],
        raster=settings['raster'],
        seed=settings['sampling']['seed'],
        out_dir=Path(out_dir or document.get('out', QR_CONFIG['output']['directory'])),
        fmt=fmt,
        threads=worker_count(threads),
        plots=plots,
        source=source,
    )
