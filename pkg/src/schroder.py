# schroder.py
"""
Uniformly quasiregular maps f solving the Schroder equation f o h = h o M.

Closed forms cover the power, Chebyshev and Lattes families; the implicit
form evaluates h(M(h^-1(y))) through an inverse branch of h. The module also
builds non-linear conformal traps A = psi^-1 o M o psi and runs the
conjugacy iteration iota_k = M^-k o A^k.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial, chebyshev

from automorphic import AutomorphicMap, WeierstrassTypeMap
from config import sampling, tolerance
from geometry import (ConformalLinear, DiscreteGroup, as_points, check_group_invariance,
                      chordal_distance, conjugate, from_complex, is_infinite, to_complex)
from qr_errors import GeometryError, IllConditioned, NotContracting, PoorFit

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# uqr maps
# ---------------------------------------------------------------------------

class UqrMap(ABC):
    """A uqr map of the extended space; points are rows, infinity is a row of inf."""

    name: str = ''

    @property
    @abstractmethod
    def dim(self) -> int:
        ...

    @abstractmethod
    def __call__(self, y, hint=None) -> np.ndarray:
        ...

    def iterate(self, m: int) -> 'UqrMap':
        if m < 1:
            raise ValueError(f"iterate count must be positive, got {m}")
        return self if m == 1 else IteratedMap(self, m)

    def step(self, y, hint=None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """One application of f, returning the hint for the next application."""
        return self(y, hint), hint


class ClosedFormMap(UqrMap):
    """Planar closed form given by a complex function and its derivative."""

    @property
    def dim(self) -> int:
        return 2

    @abstractmethod
    def complex_map(self, w: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def complex_derivative(self, w: np.ndarray) -> np.ndarray:
        ...

    def __call__(self, y, hint=None) -> np.ndarray:
        with np.errstate(all='ignore'):
            return from_complex(self.complex_map(to_complex(y)))


class PowerMap(ClosedFormMap):
    """f(w) = w^d, the Schroder solution for e^z and M = d Id."""

    def __init__(self, degree: int = 2):
        self.degree = int(degree)
        self.name = f"z^{self.degree}"

    def complex_map(self, w):
        return w ** self.degree

    def complex_derivative(self, w):
        return self.degree * w ** (self.degree - 1)


class ChebyshevMap(ClosedFormMap):
    """f(w) = T_d(w) = cos(d arccos w), the Schroder solution for cos z and M = d Id."""

    def __init__(self, degree: int = 2):
        self.degree = int(degree)
        self.coefficients = np.zeros(self.degree + 1)
        self.coefficients[-1] = 1.0
        self.name = f"T_{self.degree}"

    def complex_map(self, w):
        return chebyshev.chebval(w, self.coefficients)

    def complex_derivative(self, w):
        return chebyshev.chebval(w, chebyshev.chebder(self.coefficients))


class RationalMap(ClosedFormMap):
    """f = P / Q with coefficient arrays in increasing degree."""

    def __init__(self, numerator: Sequence[complex], denominator: Sequence[complex], name: str = ''):
        self.numerator = Polynomial(np.asarray(numerator, dtype=complex)).trim()
        self.denominator = Polynomial(np.asarray(denominator, dtype=complex)).trim()
        if np.all(self.denominator.coef == 0):
            raise ValueError("denominator is identically zero")
        self.name = name or 'P/Q'

    @classmethod
    def lattes(cls) -> 'RationalMap':
        """(w + 1/w) / (2i), the Lattes map of the square lattice."""
        return cls([1.0, 0.0, 1.0], [0.0, 2j], name='(z+1/z)/(2i)')

    @property
    def degree(self) -> int:
        return max(self.numerator.degree(), self.denominator.degree())

    def value_at_infinity(self) -> complex:
        dp, dq = self.numerator.degree(), self.denominator.degree()
        if dp > dq:
            return complex(np.inf, 0.0)
        if dp < dq:
            return 0j
        return complex(self.numerator.coef[-1] / self.denominator.coef[-1])

    def complex_map(self, w):
        w = np.asarray(w, dtype=complex)
        infinite = ~np.isfinite(w)
        safe = np.where(infinite, 0.0, w)
        with np.errstate(all='ignore'):
            top = self.numerator(safe)
            bottom = self.denominator(safe)
            value = np.where(bottom == 0, complex(np.inf, 0.0), top / bottom)
        return np.where(infinite, self.value_at_infinity(), value)

    def complex_derivative(self, w):
        p, q = self.numerator, self.denominator
        with np.errstate(all='ignore'):
            return (p.deriv()(w) * q(w) - p(w) * q.deriv()(w)) / q(w) ** 2


class LattesMap(RationalMap):
    """
    The normal-form Lattes map (w + 1/w) / (2i) of the square lattice and M = 1 + i.

    Fixed points are infinity and the two roots of w^2 = 1 / (2i - 1); the finite
    ones have multiplier modulus sqrt 2 and satisfy (f^4)' = -4.
    """

    def __init__(self):
        base = RationalMap.lattes()
        super().__init__(base.numerator.coef, base.denominator.coef, name=base.name)


class IteratedMap(UqrMap):
    """f composed with itself m times."""

    def __init__(self, base: UqrMap, m: int):
        self.base = base
        self.m = m
        self.name = f"({base.name})^{m}"

    @property
    def dim(self) -> int:
        return self.base.dim

    def __call__(self, y, hint=None):
        y = as_points(y)
        for _ in range(self.m):
            y = self.base(y)
        return y


class ImplicitUqrMap(UqrMap):
    """
    f = h o M o h^-1, well defined because M G M^-1 lies in G.

    Args:
        h: Automorphic map
        M: Conformal-linear map compatible with h's group
        checked: M is already known to normalise the group (powers of a checked M)
    """

    def __init__(self, h: AutomorphicMap, M: ConformalLinear, checked: bool = False):
        if M.dim != h.dim:
            raise GeometryError(f"M acts on R^{M.dim} but h on R^{h.dim}")
        if not checked and not check_group_invariance(M, h.group):
            raise GeometryError(f"M G M^-1 is not contained in the group of {h.family}")
        self.h = h
        self.M = M
        self._iterates: Dict[int, 'ImplicitUqrMap'] = {1: self}
        self.name = f"implicit({h.family}, {M.scale:g})"

    @property
    def dim(self) -> int:
        return self.h.dim

    def preimage(self, y, hint=None) -> np.ndarray:
        y = as_points(y)
        hint = np.zeros(y.shape) if hint is None else hint
        return self.h.local_inverse(y, hint, check_branch=False)

    def __call__(self, y, hint=None) -> np.ndarray:
        return self.h(self.M(self.preimage(y, hint)))

    def step(self, y, hint=None):
        moved = self.M(self.preimage(y, hint))
        return self.h(moved), moved

    def sweep(self, ys, hint=None) -> np.ndarray:
        """Evaluate along a path, carrying each preimage forward as the next hint."""
        ys = as_points(ys)
        hint = np.zeros(self.dim) if hint is None else as_points(hint)
        out = np.empty_like(ys)
        for i, y in enumerate(ys):
            x = self.preimage(y[None, :], hint[None, :])[0]
            out[i] = self.h(self.M(x))
            hint = x
        return out

    def iterate(self, m: int) -> 'ImplicitUqrMap':
        if m < 1:
            raise ValueError(f"iterate count must be positive, got {m}")
        if m not in self._iterates:
            self._iterates[m] = ImplicitUqrMap(self.h, self.M.power(m), checked=True)
        return self._iterates[m]


def uqr_eval(f: UqrMap, y, hint=None) -> np.ndarray:
    """f(y); implicit maps use ``hint`` to pick the inverse branch of h."""
    return f(y, hint)


def group_images(h: AutomorphicMap, x, rng: np.random.Generator) -> np.ndarray:
    """g(x) for a random group element g per row, always with a non-zero lattice part."""
    x = as_points(x)
    lattice = h.group.lattice
    representatives = h.group.coset_representatives
    which = rng.integers(len(representatives), size=len(x))
    out = np.empty_like(x)
    for index, rep in enumerate(representatives):
        rows = which == index
        out[rows] = rep(x[rows])
    steps = rng.integers(1, 3, size=(len(x), lattice.rank)) * rng.choice([-1, 1], size=(len(x), lattice.rank))
    return out + steps @ lattice.basis


def schroder_residual(f: UqrMap, h: AutomorphicMap, M: ConformalLinear,
                      domain: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
                      samples: int = None, seed: int = None) -> float:
    """
    sup chordal(f(h(x)), h(M(x))) over random x in a box.

    Implicit maps get their inverse branch from a group image of x in
    another cell, so the residual measures f's independence of the branch.

    Args:
        f: uqr map (closed form or implicit)
        h: Automorphic map
        M: Conformal-linear map
        domain: (low, high) corners; defaults to h's sample box
        samples: Number of samples
        seed: Random seed

    Returns:
        Largest chordal residual
    """
    samples = sampling('schroder_samples') if samples is None else samples
    seed = sampling('seed') if seed is None else seed
    low, high = domain if domain is not None else h.sample_box
    rng = np.random.default_rng(seed)
    x = rng.uniform(np.asarray(low, dtype=float), np.asarray(high, dtype=float), size=(samples, h.dim))
    lhs = f(h(x), hint=group_images(h, x, rng))
    rhs = h(M(x))
    return float(np.max(chordal_distance(lhs, rhs)))


# ---------------------------------------------------------------------------
# Lattes fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LattesFit:
    """Rational map fitted to p(Mz) = R(p(z)) with its diagnostics."""
    rational: RationalMap
    residual: float
    holdout_residual: float
    condition: float
    samples: int

    @property
    def numerator(self) -> np.ndarray:
        return self.rational.numerator.coef

    @property
    def denominator(self) -> np.ndarray:
        return self.rational.denominator.coef


def _lattes_samples(h: WeierstrassTypeMap, M: ConformalLinear, count: int,
                    rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    w1, w2 = h.periods
    kept_w, kept_t = [], []
    total = 0
    while total < count:
        s, t = rng.uniform(0.0, 1.0, size=(2, 4 * count))
        z = s * w1 + t * w2
        w = to_complex(h(from_complex(z)))
        target = to_complex(h(M(from_complex(z))))
        good = np.isfinite(w) & np.isfinite(target) & (np.abs(w) <= 50.0) & (np.abs(target) <= 1e3)
        kept_w.append(w[good])
        kept_t.append(target[good])
        total += int(np.count_nonzero(good))
    return np.concatenate(kept_w)[:count], np.concatenate(kept_t)[:count]


def fit_lattes_rational(h: WeierstrassTypeMap, M: ConformalLinear, degree: int,
                        seed: int = None) -> LattesFit:
    """
    Least-squares rational map R of the given degree with p(Mz) = R(p(z)).

    Solves the homogeneous system p(Mz_i) Q(w_i) - P(w_i) = 0, w_i = p(z_i),
    by SVD with column scaling and normalises P to a monic leading term.

    Args:
        h: Weierstrass-type automorphic map
        M: Conformal-linear map with M Lambda in Lambda
        degree: Degree bound for P and Q
        seed: Random seed for the sample points

    Returns:
        LattesFit with training and held-out chordal residuals
    """
    if degree < 1:
        raise ValueError(f"degree must be at least 1, got {degree}")
    seed = sampling('seed') if seed is None else seed
    count = sampling('lattes_samples_per_degree') * (degree + 1)
    rng = np.random.default_rng(seed)
    w, target = _lattes_samples(h, M, 2 * count, rng)
    train_w, train_t = w[:count], target[:count]

    powers = np.vander(train_w, degree + 1, increasing=True)
    system = np.hstack([train_t[:, None] * powers, -powers])
    scale = np.linalg.norm(system, axis=0)
    scale[scale == 0] = 1.0
    _, singular, vh = np.linalg.svd(system / scale, full_matrices=False)
    condition = float(singular[0] / singular[-2]) if singular[-2] > 0 else np.inf
    if condition > tolerance('lattes_condition'):
        raise IllConditioned(f"Lattes system condition number {condition:.3e}")
    solution = vh[-1].conj() / scale
    q, p = solution[:degree + 1], solution[degree + 1:]
    significant = np.flatnonzero(np.abs(p) > 1e-8 * np.abs(p).max())
    lead = p[significant[-1]]
    p, q = p / lead, q / lead
    p[np.abs(p) < 1e-12] = 0.0
    q[np.abs(q) < 1e-12] = 0.0
    rational = RationalMap(p, q, name=f"fitted degree {degree}")

    def residual(ws, ts):
        return float(np.max(chordal_distance(from_complex(rational.complex_map(ws)), from_complex(ts))))

    fit = LattesFit(rational, residual(train_w, train_t), residual(w[count:], target[count:]),
                    condition, count)
    logger.info("Lattes fit degree %d: residual %.3e, holdout %.3e, cond %.3e",
                degree, fit.residual, fit.holdout_residual, condition)
    return fit


def lattes_normal_form(fit: LattesFit, tol: float = 1e-6) -> complex:
    """
    Coefficient a of the scaling-normalised form a (zeta + 1/zeta).

    The fitted map must be odd of degree two, (p2 w^2 + p0) / (q1 w); the
    substitution w = k zeta with k^2 = p0/p2 gives a = p2/q1.
    """
    p = np.pad(fit.numerator, (0, 3))[:3]
    q = np.pad(fit.denominator, (0, 3))[:3]
    size = max(np.abs(p).max(), np.abs(q).max())
    if max(abs(p[1]), abs(q[0]), abs(q[2])) > tol * size or abs(q[1]) <= tol * size:
        raise PoorFit("fitted map is not an odd degree-2 map")
    return complex(p[2] / q[1])


def rational_fixed_points(f: RationalMap) -> np.ndarray:
    """Fixed points of a rational map as complex numbers, infinity included when fixed."""
    roots = (f.numerator - Polynomial([0, 1]) * f.denominator).trim().roots()
    if np.isinf(f.value_at_infinity()):
        roots = np.append(roots, complex(np.inf, 0.0))
    return roots


# ---------------------------------------------------------------------------
# Non-linear traps and the conjugacy iteration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Twist:
    """Rotation by angle * bump(|x - center|) in the first coordinate plane."""
    center: np.ndarray
    radius: float
    angle: float

    def __post_init__(self):
        object.__setattr__(self, 'center', np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError(f"twist radius must be positive, got {self.radius}")


def smooth_bump(t, r: float) -> np.ndarray:
    """C-infinity step: 1 on [0, r], 0 on [2r, inf)."""
    s = np.clip((np.asarray(t, dtype=float) - r) / r, 0.0, 1.0)

    def phi(u):
        return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)

    return phi(1.0 - s) / (phi(1.0 - s) + phi(s))


class TwistedConformalMap:
    """A = psi^-1 o M o psi with psi the G-equivariant extension of a twist."""

    def __init__(self, group: DiscreteGroup, M: ConformalLinear, twist: Twist):
        self.group = group
        self.M = M
        self.twist = twist

    @property
    def dim(self) -> int:
        return self.M.dim

    def _rotate(self, x, sign: float) -> np.ndarray:
        x = as_points(x)
        if self.twist.angle == 0:
            return x
        near, rots, shifts = self.group.orbit_nearest(x, self.twist.center)
        offset = near - self.twist.center
        radius = np.linalg.norm(offset, axis=-1)
        theta = sign * self.twist.angle * smooth_bump(radius, self.twist.radius)
        c, s = np.cos(theta), np.sin(theta)
        turned = offset.copy()
        turned[..., 0] = c * offset[..., 0] - s * offset[..., 1]
        turned[..., 1] = s * offset[..., 0] + c * offset[..., 1]
        moved = self.twist.center + turned
        back = np.einsum('...ji,...j->...i', rots, moved - shifts)
        inside = radius < 2.0 * self.twist.radius
        return np.where(inside[..., None], back, x)

    def psi(self, x) -> np.ndarray:
        return self._rotate(x, 1.0)

    def psi_inverse(self, x) -> np.ndarray:
        return self._rotate(x, -1.0)

    def __call__(self, x) -> np.ndarray:
        return self.psi_inverse(self.M(self.psi(x)))


def construct_nonlinear_A(G: DiscreteGroup, M: ConformalLinear, twist: Twist) -> TwistedConformalMap:
    """
    Non-linear map A with A o g = (M g M^-1) o A, A(0) = 0 and A = M on the lattice.

    Raises:
        GeometryError: the twist ball meets its own orbit or the orbit of 0
    """
    if M.dim != G.dim:
        raise GeometryError(f"M acts on R^{M.dim} but the group on R^{G.dim}")
    if not check_group_invariance(M, G):
        raise GeometryError("M G M^-1 is not contained in G")
    center, r = twist.center, twist.radius
    separation = G.min_orbit_separation(center)
    if separation <= 6.0 * r:
        raise GeometryError(f"twist ball of radius {r} overlaps its orbit (separation {separation:.3f})")
    origin, _, _ = G.orbit_nearest(np.zeros(G.dim), center)
    if np.linalg.norm(origin - center) <= 2.0 * r:
        raise GeometryError("twist support meets the orbit of the origin")
    return TwistedConformalMap(G, M, twist)


def equivariance_residual(A: Callable, G: DiscreteGroup, M: ConformalLinear,
                          samples: int = 200, seed: int = None, spread: float = 4.0) -> float:
    """sup |A(g x) - (M g M^-1)(A x)| over generators g and random x."""
    seed = sampling('seed') if seed is None else seed
    rng = np.random.default_rng(seed)
    x = rng.uniform(-spread, spread, size=(samples, G.dim))
    image = A(x)
    worst = 0.0
    for g in G.generators:
        worst = max(worst, float(np.max(np.linalg.norm(A(g(x)) - conjugate(M, g)(image), axis=-1))))
    return worst


@dataclass
class ConjugacyReport:
    """Outcome of iota_k = M^-k A^k on a grid."""
    k_final: int
    sup_deltas: List[float]
    residual_conj: float
    residual_lattice: float
    decay_ratio: float
    converged: bool
    grid_points: int = 0
    extra: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'k': np.arange(len(self.sup_deltas)), 'sup_step': self.sup_deltas})


class ConjugacyMap:
    """The sampled limit iota = M^-k A^k at a fixed k."""

    def __init__(self, A: Callable, M: ConformalLinear, k: int):
        self.A = A
        self.M = M
        self.k = k
        self._back = M.power(-k)

    def __call__(self, x) -> np.ndarray:
        y = as_points(x)
        for _ in range(self.k):
            y = self.A(y)
        return self._back(y)


def _disk_grid(R: float, n: int, per_axis: int) -> np.ndarray:
    axis = np.linspace(-R, R, per_axis)
    grid = np.stack(np.meshgrid(*([axis] * n), indexing='ij'), axis=-1).reshape(-1, n)
    return grid[np.linalg.norm(grid, axis=1) <= R + 1e-12]


def conjugacy_iteration(A: Callable, M: ConformalLinear, R: float, tol: float = None,
                        kmax: int = None, lattice=None, per_axis: int = None,
                        burn_in: int = None, patience: int = None) -> Tuple[ConjugacyReport, ConjugacyMap]:
    """
    Iterate iota_k = M^-k A^k on a grid in B(0, R) until the sup step is below tol.

    Args:
        A: Map with A(0) = 0 and A o g = (M g M^-1) o A
        M: Loxodromic repelling conformal-linear map
        R: Grid radius
        tol: Step tolerance
        kmax: Iteration cap
        lattice: Lattice whose points in B(0, R) give the lattice residual
        per_axis: Grid points per axis
        burn_in: Steps ignored before decay is monitored
        patience: Consecutive slow steps tolerated

    Returns:
        (ConjugacyReport, sampled iota)
    """
    tol = tolerance('conjugacy_step') if tol is None else tol
    kmax = sampling('conjugacy_kmax') if kmax is None else kmax
    per_axis = sampling('conjugacy_grid') if per_axis is None else per_axis
    burn_in = sampling('conjugacy_burn_in') if burn_in is None else burn_in
    patience = sampling('conjugacy_patience') if patience is None else patience
    if not M.is_loxodromic_repelling:
        raise ValueError(f"M must be loxodromic repelling, scale is {M.scale}")
    if np.linalg.norm(A(np.zeros(M.dim))) > tolerance('group_membership'):
        raise GeometryError("A(0) is not the origin")

    grid = _disk_grid(R, M.dim, per_axis)
    bound = 1.0 / M.scale + tolerance('decay_slack')
    forward = grid
    iota = grid
    deltas: List[float] = []
    slow = 0
    converged = False
    k = 0
    for k in range(kmax + 1):
        forward = A(forward)
        following = M.power(-(k + 1))(forward)
        step = float(np.max(np.linalg.norm(following - iota, axis=-1)))
        deltas.append(step)
        iota = following
        logger.debug("conjugacy step k=%d sup=%.3e", k, step)
        if step <= tol:
            converged = True
            break
        if k >= burn_in and len(deltas) > 1 and deltas[-2] > 0:
            slow = slow + 1 if step / deltas[-2] > bound else 0
            if slow >= patience:
                raise NotContracting(f"steps failed to decay for {patience} consecutive k (last ratio "
                                     f"{step / deltas[-2]:.3f} > {bound:.3f})")
    if not converged:
        logger.warning("conjugacy iteration hit kmax=%d with step %.3e", kmax, deltas[-1])

    iota_map = ConjugacyMap(A, M, k + 1)
    residual_conj = float(np.max(chordal_distance(iota_map(A(grid)), M(iota_map(grid)))))
    residual_lattice = 0.0
    if lattice is not None:
        points = lattice.points_within(R)
        residual_lattice = float(np.max(np.linalg.norm(iota_map(points) - points, axis=-1)))

    monitored = np.asarray(deltas[burn_in:])
    ratios = monitored[1:] / monitored[:-1] if len(monitored) > 1 else np.array([])
    ratios = ratios[np.isfinite(ratios) & (ratios > 0)]
    decay = float(np.exp(np.mean(np.log(ratios)))) if len(ratios) else 0.0

    report = ConjugacyReport(k_final=k, sup_deltas=deltas, residual_conj=residual_conj,
                             residual_lattice=residual_lattice, decay_ratio=decay,
                             converged=converged, grid_points=len(grid))
    logger.info("conjugacy iteration: k_final=%d decay=%.3f residual=%.3e", k, decay, residual_conj)
    return report, iota_map
