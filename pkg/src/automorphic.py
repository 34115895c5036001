# automorphic.py
"""
Strongly automorphic maps h with h o g = h for every g in a discrete group G.

Four families are provided: the exponential (Zorich-type in the plane), the
cosine (sine-type), the Weierstrass function on a planar lattice (p-type) and
the three-dimensional Zorich map on the beam [-1, 1]^2 x R.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from config import sampling, tolerance
from geometry import (DiscreteGroup, Isometry, Lattice, as_points, chordal_distance,
                      from_complex, is_infinite, to_complex)
from qr_errors import BranchImage, GeometryError, NoConvergence

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class AutomorphicMap(ABC):
    """
    Base class for the automorphic families.

    Subclasses supply evaluation, one preimage per target point and the
    branch-image test; inverse branches, automorphy checks and branch-set
    distances are shared.
    """

    family: str = ''
    uqr_type: str = ''

    def __init__(self, group: DiscreteGroup):
        self.group = group

    def __repr__(self) -> str:
        return f"{type(self).__name__}(group={self.group.name or 'custom'})"

    @property
    def dim(self) -> int:
        return self.group.dim

    @property
    def automorphy_tolerance(self) -> float:
        return tolerance('automorphy')

    @property
    def inverse_tolerance(self) -> float:
        return tolerance('inverse_branch')

    @property
    @abstractmethod
    def sample_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """Box used for random sampling in automorphy checks."""

    @abstractmethod
    def evaluate(self, x) -> np.ndarray:
        """h at each row of x; poles map to the point at infinity."""

    def evaluate_with_bound(self, x) -> Tuple[np.ndarray, np.ndarray]:
        values = self.evaluate(x)
        return values, np.zeros(values.shape[:-1])

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)

    @abstractmethod
    def base_preimage(self, y, hint) -> np.ndarray:
        """Some preimage of each y (not necessarily near the hint)."""

    @abstractmethod
    def is_branch_image(self, y) -> np.ndarray:
        """True where y lies within tolerance of h(branch set)."""

    def polish(self, x, y) -> np.ndarray:
        return x

    def branch_set_distance(self, x) -> np.ndarray:
        return self.group.branch_set_distance(x)

    def local_inverse(self, y, hint, check_branch: bool = True) -> np.ndarray:
        """
        Preimage of y in the fundamental set containing the hint.

        Args:
            y: Target points (…, n)
            hint: Points near the wanted preimage, broadcastable to y
            check_branch: Refuse branch images

        Returns:
            x with h(x) = y within the family's inverse tolerance
        """
        y = as_points(y)
        hint = np.broadcast_to(as_points(hint), y.shape)
        if check_branch and np.any(self.is_branch_image(y)):
            raise BranchImage(f"{self.family}: target is a branch image")
        base = self.base_preimage(y, hint)
        x, _, _ = self.group.orbit_nearest(base, hint)
        x = self.polish(x, y)
        error = chordal_distance(self.evaluate(x), y)
        worst = float(np.max(error, initial=0.0))
        if worst > self.inverse_tolerance:
            raise NoConvergence(f"{self.family}: inverse branch error {worst:.3e}")
        return x


class PlanarAutomorphicMap(AutomorphicMap):
    """Holomorphic planar families; points are (x, y) pairs read as x + iy."""

    @abstractmethod
    def _h(self, z: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _dh(self, z: np.ndarray) -> np.ndarray:
        ...

    def evaluate(self, x) -> np.ndarray:
        z = to_complex(x)
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            return from_complex(self._h(z))

    def polish(self, x, y) -> np.ndarray:
        z = to_complex(x)
        w = to_complex(y)
        finite = np.isfinite(w)
        with np.errstate(all='ignore'):
            for _ in range(3):
                slope = self._dh(z)
                step = np.where(finite & (np.abs(slope) > 1e-8), (self._h(z) - w) / slope, 0.0)
                step = np.where(np.isfinite(step) & (np.abs(step) < 1e-3), step, 0.0)
                z = z - step
        return from_complex(z)

    def _near_values(self, y, values) -> np.ndarray:
        y = as_points(y)
        hit = np.zeros(y.shape[:-1], dtype=bool)
        for value in values:
            target = from_complex(np.asarray(value, dtype=complex))
            hit |= chordal_distance(y, target) <= tolerance('branch_image')
        return hit


class ExpTypeMap(PlanarAutomorphicMap):
    """h(z) = e^z, automorphic under z -> z + 2 pi i."""

    family = 'exp'
    uqr_type = 'power'

    def __init__(self, group: Optional[DiscreteGroup] = None):
        if group is None:
            group = DiscreteGroup.from_lattice(Lattice([[0.0, TWO_PI]]), name='exp')
        super().__init__(group)

    @property
    def sample_box(self):
        return np.array([-2.0, -np.pi]), np.array([2.0, np.pi])

    def _h(self, z):
        return np.exp(z)

    def _dh(self, z):
        return np.exp(z)

    def base_preimage(self, y, hint):
        w = to_complex(y)
        if np.any((w == 0) | ~np.isfinite(w)):
            raise NoConvergence("exp omits 0 and infinity")
        return from_complex(np.log(w))

    def is_branch_image(self, y):
        return np.zeros(as_points(y).shape[:-1], dtype=bool)


class CosTypeMap(PlanarAutomorphicMap):
    """h(z) = cos z, automorphic under z -> z + 2 pi and z -> -z."""

    family = 'cos'
    uqr_type = 'chebyshev'

    def __init__(self, group: Optional[DiscreteGroup] = None):
        if group is None:
            group = DiscreteGroup.from_lattice(Lattice([[TWO_PI, 0.0]]),
                                               [Isometry(-np.eye(2), np.zeros(2))], name='cos')
        super().__init__(group)

    @property
    def sample_box(self):
        return np.array([-np.pi, -1.5]), np.array([np.pi, 1.5])

    def _h(self, z):
        return np.cos(z)

    def _dh(self, z):
        return -np.sin(z)

    def base_preimage(self, y, hint):
        w = to_complex(y)
        if np.any(~np.isfinite(w)):
            raise NoConvergence("cos omits infinity")
        return from_complex(np.arccos(w))

    def is_branch_image(self, y):
        return self._near_values(y, (1.0, -1.0))


@dataclass(frozen=True)
class WeierstrassValue:
    """Truncated Weierstrass sum together with a bound on the neglected tail."""
    value: np.ndarray
    tail_bound: np.ndarray


def _periods(lattice: Lattice) -> Tuple[complex, complex]:
    if lattice.dim != 2 or lattice.rank != 2:
        raise GeometryError("the Weierstrass function needs a rank-2 planar lattice")
    w1, w2 = (complex(b[0], b[1]) for b in lattice.basis)
    if (w2 / w1).imag < 0:
        w2 = -w2
    return w1, w2


def _direct_sum(z: np.ndarray, lattice: Lattice, N: int) -> WeierstrassValue:
    points = lattice.points_within(N)
    points = points[np.linalg.norm(points, axis=1) > 0]
    w = points[:, 0] + 1j * points[:, 1]
    nearest = lattice.nearest(from_complex(z))
    pole = np.abs(to_complex(nearest) - z) <= 1e-12
    with np.errstate(all='ignore'):
        terms = 1.0 / (z[..., None] - w) ** 2 - 1.0 / w ** 2
        value = 1.0 / z ** 2 + terms.sum(axis=-1)
    value = np.where(pole, complex(np.inf, 0.0), value)

    diam = lattice.cell_diameter
    r0 = N - 2.0 * diam
    modulus = np.abs(z)
    if r0 > 0:
        tail = 8.0 * modulus ** 2 * (TWO_PI / lattice.covolume) * (0.5 / r0 ** 2 + diam / (3.0 * r0 ** 3))
    else:
        tail = np.full(modulus.shape, np.inf)
    tail = np.where(modulus <= N / 2.0, tail, np.inf)
    return WeierstrassValue(value, tail)


def _reduce(z: np.ndarray, w1: complex, w2: complex) -> np.ndarray:
    """Representative u = z / w1 modulo Z + tau Z, near the origin."""
    tau = w2 / w1
    u = z / w1
    b = np.round(u.imag / tau.imag)
    u = u - b * tau
    return u - np.round(u.real)


def _row_sum(z: np.ndarray, lattice: Lattice, N: int, derivative: bool = False) -> WeierstrassValue:
    w1, w2 = _periods(lattice)
    tau = w2 / w1
    u = _reduce(np.asarray(z, dtype=complex), w1, w2)
    rows = np.arange(-N, N + 1)
    prefactor = (np.pi / w1) ** 2
    with np.errstate(all='ignore'):
        v = np.pi * (u[..., None] - rows * tau)
        csc2 = 1.0 / np.sin(v) ** 2
        if derivative:
            value = prefactor * (np.pi / w1) * np.sum(-2.0 * csc2 / np.tan(v), axis=-1)
        else:
            others = rows[rows != 0]
            constant = np.sum(1.0 / np.sin(np.pi * others * tau) ** 2)
            value = prefactor * (-1.0 / 3.0 + csc2.sum(axis=-1) - constant)
    pole = np.abs(u * w1) <= 1e-12
    value = np.where(pole, complex(np.inf, 0.0), value)

    height = tau.imag
    offset = np.minimum(np.abs(u.imag), height / 2.0)
    extra = np.arange(N + 1, N + 61)[:, None] * height

    def term(t):
        q = np.exp(-TWO_PI * np.maximum(t, 1e-3))
        return 4.0 * q / (1.0 - q) ** 2

    tail = abs(prefactor) * 2.0 * np.sum(term(extra - offset.ravel()) + term(extra), axis=0)
    return WeierstrassValue(value, tail.reshape(offset.shape))


def weierstrass_p(z, lattice: Lattice, N: int, method: str = 'direct') -> WeierstrassValue:
    """
    Weierstrass p-function of a planar lattice with a truncation bound.

    Args:
        z: Complex argument(s)
        lattice: Rank-2 lattice in R^2
        N: Truncation (lattice radius for ``direct``, row count for ``rows``)
        method: ``direct`` lattice sum over |w| <= N, or ``rows`` closed-form row sums

    Returns:
        WeierstrassValue with ``inf`` at lattice points
    """
    if N < 5:
        raise ValueError(f"truncation N must be at least 5, got {N}")
    z = np.asarray(z, dtype=complex)
    if method == 'direct':
        return _direct_sum(z, lattice, N)
    if method == 'rows':
        return _row_sum(z, lattice, N)
    raise ValueError(f"unknown Weierstrass method '{method}'")


class WeierstrassTypeMap(PlanarAutomorphicMap):
    """h = p, automorphic under the lattice translations and z -> -z."""

    family = 'weierstrass'
    uqr_type = 'lattes'

    def __init__(self, lattice: Optional[Lattice] = None, rows: int = 8,
                 group: Optional[DiscreteGroup] = None):
        lattice = lattice if lattice is not None else Lattice(np.eye(2))
        if group is None:
            group = DiscreteGroup.from_lattice(lattice, [Isometry(-np.eye(2), np.zeros(2))],
                                               name='weierstrass')
        super().__init__(group)
        self.lattice = lattice
        self.rows = rows
        self.periods = _periods(lattice)

    @property
    def sample_box(self):
        span = 0.5 * np.sum(np.abs(self.lattice.basis), axis=0)
        return -span, span

    def _h(self, z):
        return _row_sum(z, self.lattice, self.rows).value

    def _dh(self, z):
        return _row_sum(z, self.lattice, self.rows, derivative=True).value

    def evaluate_with_bound(self, x):
        result = _row_sum(to_complex(x), self.lattice, self.rows)
        return from_complex(result.value), result.tail_bound

    def half_period_values(self) -> np.ndarray:
        w1, w2 = self.periods
        return self._h(np.array([w1 / 2, w2 / 2, (w1 + w2) / 2]))

    def is_branch_image(self, y):
        return self._near_values(y, tuple(self.half_period_values()) + (complex(np.inf, 0.0),))

    def _newton(self, z: np.ndarray, w: np.ndarray, iterations: int = 60) -> Tuple[np.ndarray, np.ndarray]:
        big = np.abs(w) > 1.0
        step_cap = 0.25 * min(abs(p) for p in self.periods)
        with np.errstate(all='ignore'):
            for _ in range(iterations):
                p = self._h(z)
                dp = self._dh(z)
                residual = np.where(big, 1.0 / p - 1.0 / w, p - w)
                slope = np.where(big, -dp / p ** 2, dp)
                step = residual / slope
                step = np.where(np.isfinite(step), step, 0.0)
                size = np.abs(step)
                step = np.where(size > step_cap, step * step_cap / np.maximum(size, 1e-300), step)
                z = z - step
                if np.all(size < 1e-15):
                    break
            error = chordal_distance(from_complex(self._h(z)), from_complex(w))
        return z, error <= 0.1 * self.inverse_tolerance

    def base_preimage(self, y, hint):
        w = to_complex(y)
        z = to_complex(hint).astype(complex)
        out = np.array(z, dtype=complex, copy=True)
        infinite = ~np.isfinite(w)
        out = np.where(infinite, to_complex(self.lattice.nearest(from_complex(z))), out)
        todo = ~infinite
        if np.any(todo):
            flat_w, flat_z = w[todo], z[todo]
            solved, ok = self._newton(flat_z, flat_w)
            w1, w2 = self.periods
            starts = [(i + 0.5) / 6 * w1 + (j + 0.5) / 6 * w2 for i in range(6) for j in range(6)]
            for start in starts:
                if np.all(ok):
                    break
                retry, good = self._newton(np.full(np.count_nonzero(~ok), start), flat_w[~ok])
                idx = np.flatnonzero(~ok)
                solved[idx[good]] = retry[good]
                ok[idx[good]] = True
            if not np.all(ok):
                raise NoConvergence(f"p-inverse failed for {np.count_nonzero(~ok)} point(s)")
            out[todo] = solved
        return from_complex(out)


class ZorichMap(AutomorphicMap):
    """
    Zorich map of R^3: h(x, y, s) = e^s F(x, y) on the beam [-1, 1]^2 x R.

    F sends the square onto the closed upper hemisphere (centre to the pole,
    boundary to the equator) by a max-norm radial rescale followed by an
    equidistant lift. Reflection in a beam face corresponds to reflection in
    the equatorial plane, so h is automorphic under translations by 4Z^2 and
    half-turns about the beam edges.
    """

    family = 'zorich'
    uqr_type = 'power'

    def __init__(self, group: Optional[DiscreteGroup] = None):
        if group is None:
            lattice = Lattice([[4.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
            half_turn = Isometry(np.diag([-1.0, -1.0, 1.0]), np.array([2.0, 2.0, 0.0]))
            group = DiscreteGroup.from_lattice(lattice, [half_turn], name='zorich')
        super().__init__(group)

    @property
    def automorphy_tolerance(self) -> float:
        return tolerance('automorphy_zorich')

    @property
    def inverse_tolerance(self) -> float:
        return tolerance('inverse_branch_zorich')

    @property
    def sample_box(self):
        return np.array([-3.0, -3.0, -1.0]), np.array([3.0, 3.0, 1.0])

    @staticmethod
    def _fold(c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        c = np.mod(c + 1.0, 4.0) - 1.0
        flipped = c > 1.0
        return np.where(flipped, 2.0 - c, c), flipped

    @staticmethod
    def square_to_sphere(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        rho = np.maximum(np.abs(a), np.abs(b))
        r = np.hypot(a, b)
        safe = np.where(r > 0, r, 1.0)
        phi = 0.5 * np.pi * rho
        lateral = np.sin(phi) / safe
        return np.stack([lateral * a, lateral * b, np.cos(phi)], axis=-1)

    def evaluate(self, x) -> np.ndarray:
        x = as_points(x)
        a, flip_a = self._fold(x[..., 0])
        b, flip_b = self._fold(x[..., 1])
        point = self.square_to_sphere(a, b)
        point[..., 2] *= np.where(flip_a ^ flip_b, -1.0, 1.0)
        with np.errstate(over='ignore', invalid='ignore'):
            radius = np.exp(x[..., 2])
            out = point * radius[..., None]
        out[~np.isfinite(radius)] = np.inf
        return out

    def base_preimage(self, y, hint):
        y = as_points(y)
        r = np.linalg.norm(y, axis=-1)
        if np.any((r == 0) | ~np.isfinite(r)):
            raise NoConvergence("the Zorich map omits 0 and infinity")
        w = y / r[..., None]
        lateral = np.hypot(w[..., 0], w[..., 1])
        phi = np.arctan2(lateral, np.abs(w[..., 2]))
        rho = 2.0 * phi / np.pi
        safe = np.where(lateral > 0, lateral, 1.0)
        direction = np.stack([w[..., 0], w[..., 1]], axis=-1) / safe[..., None]
        peak = np.max(np.abs(direction), axis=-1)
        scale = np.where(peak > 0, rho / np.where(peak > 0, peak, 1.0), 0.0)
        square = direction * scale[..., None]
        qx = np.where(w[..., 2] < 0, 2.0 - square[..., 0], square[..., 0])
        return np.stack([qx, square[..., 1], np.log(r)], axis=-1)

    def is_branch_image(self, y) -> np.ndarray:
        y = as_points(y)
        hit = np.zeros(y.shape[:-1], dtype=bool)
        finite = ~is_infinite(y)
        safe = np.where(finite[..., None], y, 0.0)
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                ray = np.array([sx, sy, 0.0]) / np.sqrt(2.0)
                t = np.maximum(safe @ ray, 0.0)
                foot = t[..., None] * ray
                hit |= finite & (t > 0) & (chordal_distance(safe, foot) <= tolerance('branch_image'))
        return hit


def evaluate_h(h: AutomorphicMap, x, with_bound: bool = False):
    """h(x); with ``with_bound`` also the per-point truncation bound (zero for closed forms)."""
    if with_bound:
        return h.evaluate_with_bound(x)
    return h.evaluate(x)


def local_inverse_h(h: AutomorphicMap, y, branch_hint) -> np.ndarray:
    return h.local_inverse(y, branch_hint)


def branch_set_distance(h: AutomorphicMap, x) -> np.ndarray:
    return h.branch_set_distance(x)


def is_branch_image(h: AutomorphicMap, y) -> np.ndarray:
    return h.is_branch_image(y)


def zorich_eval(x) -> np.ndarray:
    """The Zorich map with the default beam and group."""
    return ZorichMap().evaluate(x)


def strong_automorphy_check(h: AutomorphicMap, samples: int = None, seed: int = None,
                            pairs: int = None) -> float:
    """
    Largest deviation from strong automorphy seen on random samples.

    Measures chordal(h(g(x)), h(x)) for every generator g, then for a few
    fibre pairs found by inverting from a displaced hint checks that some
    group element carries one preimage onto the other.

    Args:
        h: Automorphic map
        samples: Number of random points (at least 100)
        seed: Random seed
        pairs: Number of fibre pairs for the transitivity spot-check

    Returns:
        Maximum of the automorphy and transitivity residuals
    """
    samples = sampling('automorphy_samples') if samples is None else samples
    seed = sampling('seed') if seed is None else seed
    pairs = sampling('transitivity_pairs') if pairs is None else pairs
    if samples < 100:
        raise ValueError(f"need at least 100 samples, got {samples}")

    rng = np.random.default_rng(seed)
    low, high = h.sample_box
    x = rng.uniform(low, high, size=(samples, h.dim))
    base = h(x)
    residual = 0.0
    for g in h.group.generators:
        residual = max(residual, float(np.max(chordal_distance(h(g(x)), base))))

    transitivity = 0.0
    usable = x[(h.branch_set_distance(x) > 0.1) & ~is_infinite(base)][:pairs]
    if len(usable):
        span = np.linalg.norm(h.group.lattice.basis, axis=1).max()
        hints = usable + rng.uniform(-span, span, size=usable.shape)
        try:
            partners = h.local_inverse(h(usable), hints, check_branch=False)
            moved, _, _ = h.group.orbit_nearest(usable, partners)
            transitivity = float(np.max(np.linalg.norm(moved - partners, axis=-1)))
        except NoConvergence as exc:
            logger.warning("transitivity spot-check failed: %s", exc)
            transitivity = np.inf
    logger.debug("%s automorphy residual %.3e, transitivity %.3e", h.family, residual, transitivity)
    return max(residual, transitivity)
