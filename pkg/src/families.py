# families.py
"""
Named Schroder pairs (h, M) with their uqr maps, built from the ``families``
section of the configuration.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from automorphic import AutomorphicMap, CosTypeMap, ExpTypeMap, WeierstrassTypeMap, ZorichMap
from config import QR_CONFIG
from dynamics import distance_to_circle, distance_to_segment
from geometry import ConformalLinear, Lattice
from qr_errors import ConfigError
from schroder import ChebyshevMap, ImplicitUqrMap, LattesMap, PowerMap, UqrMap

logger = logging.getLogger(__name__)

FAMILIES = ('power', 'chebyshev', 'lattes', 'zorich')


@dataclass
class FamilySetup:
    """Everything a command needs about one family."""
    name: str
    h: AutomorphicMap
    M: ConformalLinear
    closed_form: Optional[UqrMap]
    raster_iterations: int
    window: Tuple[Tuple[float, float], Tuple[float, float]]
    julia_distance: Optional[Callable[[np.ndarray], np.ndarray]] = None
    normal_form: Optional[UqrMap] = None
    slice_value: Optional[float] = None

    @property
    def lam(self) -> float:
        return self.M.scale

    @cached_property
    def implicit(self) -> ImplicitUqrMap:
        return ImplicitUqrMap(self.h, self.M)

    @property
    def uqr(self) -> UqrMap:
        """The closed form where one exists, otherwise h o M o h^-1."""
        return self.closed_form if self.closed_form is not None else self.implicit


def _integer_degree(lam: float, angle: float) -> Optional[int]:
    if angle == 0.0 and float(lam).is_integer() and lam >= 2:
        return int(lam)
    return None


def build_family(name: str, params: Optional[Dict[str, Any]] = None) -> FamilySetup:
    """
    Build a family from its parameters, falling back to QR_CONFIG defaults.

    Args:
        name: One of FAMILIES
        params: Overrides for the family's entry in QR_CONFIG['families']

    Returns:
        FamilySetup
    """
    if name not in FAMILIES:
        raise ConfigError(f"unknown family '{name}', expected one of {', '.join(FAMILIES)}")
    settings = dict(QR_CONFIG['families'][name])
    settings.update(params or {})
    iterations = settings.get('raster_iterations', QR_CONFIG['raster']['iterations'])

    if name in ('power', 'chebyshev'):
        lam, angle = float(settings['lambda']), float(settings.get('angle', 0.0))
        M = ConformalLinear.from_complex(lam * np.exp(1j * angle))
        degree = _integer_degree(lam, angle)
        if name == 'power':
            return FamilySetup(name, ExpTypeMap(), M, PowerMap(degree) if degree else None,
                               iterations, ((-2.0, 2.0), (-2.0, 2.0)), distance_to_circle)
        return FamilySetup(name, CosTypeMap(), M, ChebyshevMap(degree) if degree else None,
                           iterations, ((-2.0, 2.0), (-2.0, 2.0)), distance_to_segment)

    if name == 'lattes':
        lattice = Lattice(np.asarray(settings['lattice'], dtype=float))
        c = complex(*settings['multiplier'])
        h = WeierstrassTypeMap(lattice, rows=int(settings['rows']))
        gaussian = np.allclose(lattice.basis, np.eye(2)) and c == 1 + 1j
        return FamilySetup(name, h, ConformalLinear.from_complex(c), None, iterations,
                           ((-1.5, 1.5), (-1.5, 1.5)), normal_form=LattesMap() if gaussian else None)

    slice_value = float(settings.get('slice', 0.0))
    radius = float(np.sqrt(max(1.0 - slice_value ** 2, 0.0)))
    return FamilySetup(name, ZorichMap(), ConformalLinear.dilation(float(settings['lambda']), 3), None,
                       iterations, ((-2.0, 2.0), (-2.0, 2.0)), lambda p: distance_to_circle(p, radius),
                       slice_value=slice_value)
