# geometry.py
"""
Vectors, conformal-linear maps, isometries, lattices and discrete isometry groups.

Points are numpy arrays whose last axis holds the n coordinates (n = 2 or 3).
The point at infinity is a row of ``inf``. Group membership is decided by a
normal form: the rotation part is matched against the enumerated point group
and the remaining translation is reduced modulo the lattice.
"""

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.transform import Rotation

from config import sampling, tolerance
from qr_errors import Diverged, GeometryError, NoFiniteOrder, NonConformal

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Points and the extended space
# ---------------------------------------------------------------------------

def as_points(x) -> np.ndarray:
    """Coerce input to a float array of points (last axis = coordinates)."""
    return np.asarray(x, dtype=float)


def infinity_point(n: int) -> np.ndarray:
    return np.full(n, np.inf)


def is_infinite(x) -> np.ndarray:
    """True for rows that represent the point at infinity."""
    return ~np.all(np.isfinite(as_points(x)), axis=-1)


def to_sphere(x) -> np.ndarray:
    """
    Inverse stereographic projection onto the unit sphere in R^{n+1}.

    Euclidean distance between images is the chordal distance, so ``inf``
    rows land on the north pole.
    """
    x = as_points(x)
    infinite = is_infinite(x)
    finite = np.where(infinite[..., None], 0.0, x)
    with np.errstate(over='ignore', invalid='ignore'):
        r2 = np.sum(finite ** 2, axis=-1)
        top = 2.0 * finite / (1.0 + r2)[..., None]
        last = 1.0 - 2.0 / (1.0 + r2)
    top = np.where(infinite[..., None], 0.0, np.nan_to_num(top))
    last = np.where(infinite, 1.0, last)
    return np.concatenate([top, last[..., None]], axis=-1)


def chordal_distance(a, b) -> np.ndarray:
    """Chordal distance on the one-point compactification, vectorized over rows."""
    return np.linalg.norm(to_sphere(a) - to_sphere(b), axis=-1)


def to_complex(x) -> np.ndarray:
    """Planar points (…, 2) to complex numbers; infinite rows become complex inf."""
    x = as_points(x)
    z = x[..., 0] + 1j * x[..., 1]
    return np.where(is_infinite(x), complex(np.inf, 0.0), z)


def from_complex(z) -> np.ndarray:
    """Complex numbers to planar points; non-finite values become the point at infinity."""
    z = np.asarray(z, dtype=complex)
    out = np.stack([z.real, z.imag], axis=-1)
    bad = ~np.isfinite(z)
    out[bad] = np.inf
    return out


def planar_rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# Conformal-linear maps and isometries
# ---------------------------------------------------------------------------

def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_orthogonal(matrix: np.ndarray, tol: float, name: str) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise GeometryError(f"{name} must be square, got shape {matrix.shape}")
    defect = np.max(np.abs(matrix.T @ matrix - np.eye(matrix.shape[0])))
    if defect > tol:
        raise GeometryError(f"{name} is not orthogonal (defect {defect:.3e} > {tol:.1e})")


@dataclass(frozen=True)
class ConformalLinear:
    """The map x -> scale * orth @ x."""
    scale: float
    orth: np.ndarray
    tol: float = field(default_factory=lambda: tolerance('orthogonality_constructed'),
                       repr=False, compare=False)

    def __post_init__(self):
        if not self.scale > 0:
            raise GeometryError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, 'scale', float(self.scale))
        object.__setattr__(self, 'orth', _frozen_array(self.orth, 'orth'))
        _check_orthogonal(self.orth, self.tol, 'orth')

    @classmethod
    def dilation(cls, scale: float, n: int) -> 'ConformalLinear':
        return cls(scale, np.eye(n))

    @classmethod
    def from_complex(cls, c: complex) -> 'ConformalLinear':
        """Planar multiplication by the complex number c."""
        c = complex(c)
        return cls(abs(c), planar_rotation(np.angle(c)))

    @classmethod
    def from_axis_angle(cls, scale: float, angle: float, axis: Optional[Sequence[float]] = None,
                        n: int = 2) -> 'ConformalLinear':
        if n == 2:
            return cls(scale, planar_rotation(angle))
        axis = np.asarray(axis if axis is not None else (0.0, 0.0, 1.0), dtype=float)
        axis = axis / np.linalg.norm(axis)
        return cls(scale, Rotation.from_rotvec(angle * axis).as_matrix())

    @property
    def dim(self) -> int:
        return self.orth.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.scale * self.orth

    def __call__(self, x) -> np.ndarray:
        return as_points(x) @ self.matrix.T

    def inverse(self) -> 'ConformalLinear':
        return ConformalLinear(1.0 / self.scale, self.orth.T, tol=self.tol)

    def power(self, k: int) -> 'ConformalLinear':
        if k < 0:
            return self.inverse().power(-k)
        return ConformalLinear(self.scale ** k, np.linalg.matrix_power(self.orth, k), tol=self.tol)

    def compose(self, other: 'ConformalLinear') -> 'ConformalLinear':
        return ConformalLinear(self.scale * other.scale, self.orth @ other.orth,
                               tol=max(self.tol, other.tol))

    @property
    def is_loxodromic_repelling(self) -> bool:
        return self.scale > 1.0


@dataclass(frozen=True)
class Isometry:
    """The map x -> rot @ x + shift."""
    rot: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'rot', _frozen_array(self.rot, 'rot'))
        object.__setattr__(self, 'shift', _frozen_array(self.shift, 'shift'))
        _check_orthogonal(self.rot, tolerance('orthogonality_constructed'), 'rot')
        if self.shift.shape != (self.rot.shape[0],):
            raise GeometryError(f"shift shape {self.shift.shape} does not match rot {self.rot.shape}")

    @classmethod
    def identity(cls, n: int) -> 'Isometry':
        return cls(np.eye(n), np.zeros(n))

    @classmethod
    def translation(cls, v) -> 'Isometry':
        v = np.asarray(v, dtype=float)
        return cls(np.eye(v.shape[0]), v)

    @property
    def dim(self) -> int:
        return self.rot.shape[0]

    def __call__(self, x) -> np.ndarray:
        return as_points(x) @ self.rot.T + self.shift

    def compose(self, other: 'Isometry') -> 'Isometry':
        """self after other."""
        if self.dim != other.dim:
            raise GeometryError(f"cannot compose isometries of dimension {self.dim} and {other.dim}")
        return Isometry(self.rot @ other.rot, self.rot @ other.shift + self.shift)

    def inverse(self) -> 'Isometry':
        return Isometry(self.rot.T, -self.rot.T @ self.shift)

    def is_translation(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.rot - np.eye(self.dim))) <= tol)


def compose(g1: Isometry, g2: Isometry) -> Isometry:
    """(g1 o g2)(x) = g1(g2(x))."""
    return g1.compose(g2)


def conjugate(M: ConformalLinear, g: Isometry) -> Isometry:
    """The isometry M o g o M^-1 (scale cancels in the rotation part)."""
    if M.dim != g.dim:
        raise GeometryError(f"map of dimension {M.dim} cannot conjugate isometry of dimension {g.dim}")
    return Isometry(M.orth @ g.rot @ M.orth.T, M.matrix @ g.shift)


# ---------------------------------------------------------------------------
# Lattices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    """Integer combinations of k independent vectors in R^n, k in {n-1, n}."""
    basis: np.ndarray

    def __post_init__(self):
        basis = _frozen_array(np.atleast_2d(self.basis), 'basis')
        k, n = basis.shape
        if n not in (2, 3):
            raise GeometryError(f"lattices live in R^2 or R^3, got R^{n}")
        if k not in (n - 1, n):
            raise GeometryError(f"lattice rank must be {n - 1} or {n}, got {k}")
        if np.linalg.matrix_rank(basis) != k:
            raise GeometryError("lattice basis is linearly dependent")
        object.__setattr__(self, 'basis', basis)

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @cached_property
    def _pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.basis)

    @cached_property
    def complement(self) -> Optional[np.ndarray]:
        """Unit direction orthogonal to a rank n-1 lattice (None at full rank)."""
        if self.rank == self.dim:
            return None
        return linalg.null_space(self.basis)[:, 0]

    @cached_property
    def covolume(self) -> float:
        return float(np.sqrt(np.linalg.det(self.basis @ self.basis.T)))

    @cached_property
    def cell_diameter(self) -> float:
        return float(np.sum(np.linalg.norm(self.basis, axis=1)))

    @cached_property
    def _stencil(self) -> np.ndarray:
        return np.array(list(itertools.product((-1, 0, 1), repeat=self.rank)), dtype=float)

    def coordinates(self, v) -> np.ndarray:
        return as_points(v) @ self._pinv

    def nearest(self, v) -> np.ndarray:
        """Nearest lattice vector to each row of v."""
        v = as_points(v)
        base = np.round(self.coordinates(v))
        candidates = (base[..., None, :] + self._stencil) @ self.basis
        dist = np.linalg.norm(candidates - v[..., None, :], axis=-1)
        best = np.argmin(dist, axis=-1)
        return np.take_along_axis(candidates, best[..., None, None], axis=-2)[..., 0, :]

    def contains(self, v, tol: float = None) -> np.ndarray:
        tol = tolerance('group_membership') if tol is None else tol
        v = as_points(v)
        return np.linalg.norm(v - self.nearest(v), axis=-1) <= tol

    def points_within(self, rho: float) -> np.ndarray:
        """All lattice vectors of norm <= rho, sorted by (norm, coordinates)."""
        if not rho > 0:
            raise ValueError(f"radius must be positive, got {rho}")
        sigma_min = np.linalg.svd(self.basis, compute_uv=False).min()
        bound = int(np.floor(rho / sigma_min)) + 1
        axis = np.arange(-bound, bound + 1, dtype=float)
        coords = np.stack(np.meshgrid(*([axis] * self.rank), indexing='ij'), axis=-1).reshape(-1, self.rank)
        points = coords @ self.basis
        norms = np.linalg.norm(points, axis=1)
        keep = norms <= rho * (1.0 + 1e-12)
        points, coords, norms = points[keep], coords[keep], norms[keep]
        order = np.lexsort(tuple(coords.T[::-1]) + (np.round(norms, 12),))
        return points[order]


def lattice_points_within(lattice: Lattice, rho: float) -> np.ndarray:
    """Exactly the lattice vectors of norm <= rho, one row each."""
    return lattice.points_within(rho)


# ---------------------------------------------------------------------------
# Discrete groups
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteGroup:
    """
    A discrete isometry group given by translation and point generators.

    The translation subgroup is the lattice; point generators carry the
    rotation parts, whose closure is the finite point group P.
    """
    translation_gens: Tuple[Isometry, ...]
    point_gens: Tuple[Isometry, ...]
    lattice: Lattice
    name: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'translation_gens', tuple(self.translation_gens))
        object.__setattr__(self, 'point_gens', tuple(self.point_gens))
        for g in self.translation_gens:
            if not g.is_translation():
                raise GeometryError("translation generator has a nontrivial rotation part")
            if not self.lattice.contains(g.shift):
                raise GeometryError(f"translation {g.shift} is not in the lattice")
        for g in self.generators:
            if g.dim != self.lattice.dim:
                raise GeometryError("generator dimension does not match the lattice")

    @classmethod
    def from_lattice(cls, lattice: Lattice, point_gens: Sequence[Isometry] = (),
                     name: str = '') -> 'DiscreteGroup':
        return cls(tuple(Isometry.translation(w) for w in lattice.basis), tuple(point_gens),
                   lattice, name)

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def generators(self) -> Tuple[Isometry, ...]:
        return self.translation_gens + self.point_gens

    @cached_property
    def coset_representatives(self) -> Tuple[Isometry, ...]:
        """One element per point-group rotation, identity first, shifts reduced mod the lattice."""
        limit = sampling('point_group_limit')
        tol = tolerance('group_membership')
        reps: List[Isometry] = [Isometry.identity(self.dim)]
        rotations = [reps[0].rot]
        queue = deque(reps)
        steps = list(self.point_gens) + [g.inverse() for g in self.point_gens]
        while queue:
            current = queue.popleft()
            for g in steps:
                candidate = current.compose(g)
                stack = np.asarray(rotations)
                if np.any(np.max(np.abs(stack - candidate.rot), axis=(1, 2)) <= tol):
                    continue
                shift = candidate.shift - self.lattice.nearest(candidate.shift)
                reduced = Isometry(candidate.rot, shift)
                reps.append(reduced)
                rotations.append(reduced.rot)
                queue.append(reduced)
                if len(reps) > limit:
                    raise Diverged(f"point group did not close within {limit} elements")
        return tuple(reps)

    @property
    def point_group(self) -> Tuple[np.ndarray, ...]:
        return tuple(g.rot for g in self.coset_representatives)

    @cached_property
    def _rotation_stack(self) -> np.ndarray:
        return np.asarray(self.point_group)

    def rotation_index(self, rot: np.ndarray, tol: float = None) -> Optional[int]:
        tol = tolerance('group_membership') if tol is None else tol
        err = np.max(np.abs(self._rotation_stack - rot), axis=(1, 2))
        idx = int(np.argmin(err))
        return idx if err[idx] <= tol else None

    def contains(self, g: Isometry, tol: float = None) -> bool:
        """Normal-form membership: rotation in P and translation remainder in the lattice."""
        tol = tolerance('group_membership') if tol is None else tol
        idx = self.rotation_index(g.rot, tol)
        if idx is None:
            return False
        remainder = g.shift - self.coset_representatives[idx].shift
        return bool(self.lattice.contains(remainder, tol))

    def orbit_nearest(self, x, target) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        For each point, the orbit point closest to ``target``.

        Args:
            x: Points (…, n)
            target: Points broadcastable to x

        Returns:
            (orbit points, rotation parts, shifts) of the group elements used
        """
        x = as_points(x)
        target = np.broadcast_to(as_points(target), x.shape)
        best_pts = best_rot = best_shift = None
        best_dist = None
        for rep in self.coset_representatives:
            moved = rep(x)
            lam = self.lattice.nearest(target - moved)
            pts = moved + lam
            dist = np.linalg.norm(pts - target, axis=-1)
            if best_pts is None:
                best_pts, best_dist = pts, dist
                best_rot = np.broadcast_to(rep.rot, x.shape[:-1] + rep.rot.shape).copy()
                best_shift = rep.shift + lam
                continue
            better = dist < best_dist - 1e-14
            best_pts = np.where(better[..., None], pts, best_pts)
            best_rot = np.where(better[..., None, None], rep.rot, best_rot)
            best_shift = np.where(better[..., None], rep.shift + lam, best_shift)
            best_dist = np.where(better, dist, best_dist)
        return best_pts, best_rot, best_shift

    def orbit_points_near(self, x, center, radius: float) -> List[Tuple[np.ndarray, Isometry]]:
        """All (orbit point, element) pairs with the orbit point of x within radius of center."""
        x = as_points(x)
        center = as_points(center)
        found = []
        nearby = self.lattice.points_within(radius + self.lattice.cell_diameter + 1e-9)
        for rep in self.coset_representatives:
            moved = rep(x)
            anchor = self.lattice.nearest(center - moved)
            for lam in nearby + anchor:
                point = moved + lam
                if np.linalg.norm(point - center) <= radius:
                    found.append((point, Isometry(rep.rot, rep.shift + lam)))
        return found

    def min_orbit_separation(self, x) -> float:
        """Distance from x to the nearest other point of its orbit (0 at rotation fixed points)."""
        x = as_points(x)
        radius = 2.0 * self.lattice.cell_diameter + 2.0 * float(np.linalg.norm(x)) + 1.0
        best = np.inf
        for point, g in self.orbit_points_near(x, x, radius):
            if g.is_translation() and np.linalg.norm(g.shift) <= 1e-12:
                continue
            best = min(best, float(np.linalg.norm(point - x)))
        return best

    def branch_set_distance(self, x) -> np.ndarray:
        """Distance from each point to the fixed-point set of the rotations in the group."""
        x = as_points(x)
        best = np.full(x.shape[:-1], np.inf)
        eye = np.eye(self.dim)
        for rep in self.coset_representatives[1:]:
            kernel = eye - rep.rot
            kernel_pinv = np.linalg.pinv(kernel)
            w = x @ kernel.T - rep.shift
            base = self.lattice.nearest(w)
            for offset in self.lattice._stencil @ self.lattice.basis:
                rhs = rep.shift + base + offset
                consistent = np.linalg.norm(rhs @ kernel_pinv.T @ kernel.T - rhs, axis=-1) <= 1e-9
                dist = np.linalg.norm((w - base - offset) @ kernel_pinv.T, axis=-1)
                best = np.where(consistent, np.minimum(best, dist), best)
        return best


def generator_words(G: DiscreteGroup, max_len: int) -> Iterator[Isometry]:
    """Every product of generators and their inverses of length 1..max_len."""
    letters = list(G.generators) + [g.inverse() for g in G.generators]
    for length in range(1, max_len + 1):
        for word in itertools.product(letters, repeat=length):
            element = word[0]
            for letter in word[1:]:
                element = element.compose(letter)
            yield element


def check_group_invariance(M: ConformalLinear, G: DiscreteGroup, word_len: int = None) -> bool:
    """True iff M g M^-1 lies in G for every generator word up to ``word_len``."""
    word_len = sampling('word_length') if word_len is None else word_len
    tol = tolerance('group_membership')
    for g in generator_words(G, word_len):
        if not G.contains(conjugate(M, g), tol):
            logger.debug("M g M^-1 left the group for g = (%s, %s)", g.rot.tolist(), g.shift.tolist())
            return False
    return True


def _complement_image(basis: np.ndarray, images: np.ndarray, normal: np.ndarray,
                      scale: float, orientation: int = 1) -> np.ndarray:
    """Image of the normal direction under the conformal extension with the given orientation."""
    n = basis.shape[1]
    if n == 2:
        turn = np.array([[0.0, -1.0], [1.0, 0.0]])
        sign = np.sign(normal @ (turn @ basis[0]))
        direction = turn @ images[0]
    else:
        sign = np.sign(normal @ np.cross(basis[0], basis[1]))
        direction = np.cross(images[0], images[1])
    return orientation * sign * scale * direction / np.linalg.norm(direction)


def extract_linear_part(A: Callable[[np.ndarray], np.ndarray], lattice: Lattice,
                        orientation: int = 1) -> ConformalLinear:
    """
    Recover the conformal-linear M with A = M on the lattice.

    A rank n-1 lattice does not fix the image of its normal direction: the
    two conformal extensions differ by a reflection, and ``orientation``
    picks one (+1 keeps det M > 0, -1 gives det M < 0).

    Args:
        A: Map evaluated at the origin and the lattice basis
        lattice: Lattice whose basis vectors are sampled
        orientation: Sign of det M, used only for rank n-1 lattices

    Returns:
        ConformalLinear M with M(w_i) = A(w_i)
    """
    if orientation not in (1, -1):
        raise ValueError(f"orientation must be 1 or -1, got {orientation}")
    n = lattice.dim
    origin = as_points(A(np.zeros(n)))
    if np.linalg.norm(origin) > tolerance('group_membership'):
        raise GeometryError(f"A(0) = {origin} is not the origin")
    basis = lattice.basis
    images = as_points(A(basis))
    if lattice.rank < n:
        scale = float(np.mean(np.linalg.norm(images, axis=1) / np.linalg.norm(basis, axis=1)))
        normal = lattice.complement
        extra = _complement_image(lattice.basis, images, normal, scale, orientation)
        basis = np.vstack([basis, normal])
        images = np.vstack([images, extra])
    matrix = np.linalg.solve(basis, images).T
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular.min() <= 0 or singular.max() / singular.min() > 1.0 + tolerance('conformal_ratio'):
        raise NonConformal(f"fitted linear map has singular values {singular.tolist()}")
    scale = float(np.prod(singular) ** (1.0 / n))
    return ConformalLinear(scale, matrix / scale, tol=tolerance('orthogonality_extracted'))


def point_group_order(G: DiscreteGroup) -> int:
    """q = |P|, the number of rotation parts in the group."""
    rotations = G.point_group
    q = len(rotations)
    for rot in rotations:
        if np.max(np.abs(np.linalg.matrix_power(rot, q) - np.eye(G.dim))) > tolerance('finite_order'):
            raise Diverged(f"rotation part does not satisfy R^{q} = Id")
    return q


def orthogonal_order(orth: np.ndarray, kmax: int = None) -> int:
    """Least p <= kmax with orth^p = Id."""
    kmax = sampling('orthogonal_order_kmax') if kmax is None else kmax
    orth = np.asarray(orth, dtype=float)
    power = np.eye(orth.shape[0])
    for p in range(1, kmax + 1):
        power = power @ orth
        if np.linalg.norm(power - np.eye(orth.shape[0])) <= tolerance('finite_order'):
            return p
    raise NoFiniteOrder(f"no finite order up to {kmax}")
