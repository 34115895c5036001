# dynamics.py
"""
Dynamics of the uqr maps built from a Schroder pair (h, M).

Repelling periodic points come straight from the group: h(M^m u) = h(u)
whenever M^m u = R u + v for some element (R, v) of G, so every solution of
u = (M^m - R)^-1 v gives a periodic point x' = h(u). The same u turns h into
a linearizer L = h(. + u) for f^{rm} at x'. The module also estimates
multipliers, classifies fixed points by orbit behaviour and renders
escape-time rasters of the Julia set.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from automorphic import AutomorphicMap
from config import QR_CONFIG, sampling, tolerance, worker_count
from geometry import (ConformalLinear, as_points, chordal_distance, is_infinite,
                      orthogonal_order, point_group_order, to_complex, to_sphere)
from infspace import fd_jacobian, local_degree, unit_directions
from qr_errors import BranchPoint, DegenerateJacobian, Inconclusive, MethodDisagreement, QRLabError
from schroder import ClosedFormMap, ImplicitUqrMap, IteratedMap, UqrMap

logger = logging.getLogger(__name__)

ESCAPED, CONVERGED, UNDECIDED = 0, 1, 2


# ---------------------------------------------------------------------------
# Periodic points
# ---------------------------------------------------------------------------

@dataclass
class PeriodicPointRecord:
    """A periodic point x' = h(u) of f^m with the group element (R, v) that produced it."""
    m: int
    R: np.ndarray
    R_index: int
    v: np.ndarray
    u: np.ndarray
    x: np.ndarray
    residual: float
    branch_flag: bool
    multiplier: Optional[np.ndarray] = None

    def to_row(self) -> Dict[str, float]:
        row: Dict[str, float] = {'m': self.m, 'R_index': self.R_index}
        for name, values in (('v', self.v), ('u', self.u), ('x', self.x)):
            for i, value in enumerate(values):
                row[f"{name}_{i}"] = float(value)
        row['branch_flag'] = bool(self.branch_flag)
        row['residual'] = float(self.residual)
        n = len(self.u)
        for i in range(n):
            for j in range(n):
                row[f"multiplier_{i}{j}"] = (float(self.multiplier[i, j])
                                             if self.multiplier is not None else float('nan'))
        return row


def default_radius(h: AutomorphicMap, M: ConformalLinear, m: int) -> float:
    """1.5 * max_R |M^m - R| * diam(sample box): every u in the box has |v| below this."""
    low, high = h.sample_box
    diameter = float(np.linalg.norm(np.asarray(high) - np.asarray(low)))
    Mm = M.power(m).matrix
    spread = max(np.linalg.norm(Mm - rot, 2) for rot in h.group.point_group)
    return 1.5 * spread * diameter


def _candidates(h: AutomorphicMap, M: ConformalLinear, m: int, rho: float):
    Mm = M.power(m).matrix
    lattice = h.group.lattice
    for index, rep in enumerate(h.group.coset_representatives):
        offset = float(np.linalg.norm(rep.shift))
        vs = rep.shift + lattice.points_within(rho + offset)
        vs = vs[np.linalg.norm(vs, axis=-1) <= rho + 1e-12]
        if len(vs) == 0:
            continue
        us = np.linalg.solve(Mm - rep.rot, vs.T).T
        yield index, rep.rot, vs, us


def _dedup(spheres: np.ndarray, tol: float) -> np.ndarray:
    keep = np.ones(len(spheres), dtype=bool)
    if len(spheres) == 0:
        return keep
    tree = cKDTree(spheres)
    for i in range(len(spheres)):
        if not keep[i]:
            continue
        for j in tree.query_ball_point(spheres[i], tol):
            if j > i:
                keep[j] = False
    return keep


def periodic_points(h: AutomorphicMap, M: ConformalLinear, m: int, rho: float = None,
                    f: Optional[UqrMap] = None) -> List[PeriodicPointRecord]:
    """
    Enumerate periodic points of period dividing m.

    Args:
        h: Automorphic map
        M: Conformal-linear map with M G M^-1 inside G
        m: Period
        rho: Bound on |v|; defaults to default_radius(h, M, m)
        f: Closed-form uqr map to verify against; without it f^m(x') is
           evaluated as h(M^m u), the Schroder equation applied to u

    Returns:
        Deduplicated records sorted by (|v|, rotation index)
    """
    if m < 1:
        raise ValueError(f"period must be positive, got {m}")
    rho = default_radius(h, M, m) if rho is None else float(rho)
    Mm = M.power(m)

    rows = []
    for index, rot, vs, us in _candidates(h, M, m, rho):
        for v, u in zip(vs, us):
            rows.append((float(np.linalg.norm(v)), index, rot, v, u))
    if not rows:
        return []
    rows.sort(key=lambda row: (round(row[0], 12), row[1]))
    us = np.array([row[4] for row in rows])
    xs = h(us)

    keep = _dedup(to_sphere(xs), tolerance('dedup_chordal'))
    rows = [row for row, kept in zip(rows, keep) if kept]
    us, xs = us[keep], xs[keep]

    if f is not None:
        images = as_points(f.iterate(m)(xs))
    else:
        images = h(Mm(us))
    residuals = chordal_distance(images, xs)
    branch = np.asarray(h.is_branch_image(xs))

    implicit = None if f is not None else ImplicitUqrMap(h, M)
    records = []
    for (_, index, rot, v, u), x, residual, flag in zip(rows, xs, residuals, branch):
        if residual > tolerance('periodic_residual'):
            logger.debug("dropping candidate u=%s (residual %.3e)", u, residual)
            continue
        record = PeriodicPointRecord(m=m, R=np.array(rot), R_index=index, v=np.array(v),
                                     u=np.array(u), x=np.array(x), residual=float(residual),
                                     branch_flag=bool(flag))
        if not flag and not is_infinite(x):
            try:
                if f is not None:
                    record.multiplier = multiplier(f, x, iterations=m)
                else:
                    record.multiplier = multiplier(implicit, x, iterations=m, hint=u)
            except QRLabError as exc:
                logger.warning("no multiplier at x=%s: %s", x, exc)
        records.append(record)
    logger.info("%s: %d periodic point(s) of period %d (rho=%.3g)", h.family, len(records), m, rho)
    return records


# ---------------------------------------------------------------------------
# Linearizers
# ---------------------------------------------------------------------------

@dataclass
class LinearizerSpec:
    """L(x) = h(x + u), a linearizer of f^{rm} at x' = L(0)."""
    h: AutomorphicMap
    u: np.ndarray
    m: int
    q: int
    p: int
    r: int
    lam: float
    orth: np.ndarray = field(repr=False)

    @property
    def period(self) -> int:
        return self.r * self.m

    def __call__(self, x) -> np.ndarray:
        return self.h(as_points(x) + self.u)


def build_linearizer(rec: PeriodicPointRecord, h: AutomorphicMap, M: ConformalLinear) -> LinearizerSpec:
    if rec.branch_flag:
        raise BranchPoint(f"x'={rec.x} is a branch image of {h.family}; h is no linearizer there")
    q = point_group_order(h.group)
    p = orthogonal_order(M.orth)
    return LinearizerSpec(h=h, u=np.array(rec.u), m=rec.m, q=q, p=p, r=math.lcm(p, q),
                          lam=M.scale, orth=np.array(M.orth))


def linearizer_residual(spec: LinearizerSpec, f: UqrMap,
                        domain: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
                        samples: int = None, seed: int = None) -> float:
    """
    sup chordal(f^{rm}(L(x)), L(lam^{rm} x)) over random x in the domain box.

    The orthogonal part drops out because p divides rm.
    """
    n = spec.h.dim
    samples = sampling('linearizer_samples') if samples is None else samples
    seed = sampling('seed') if seed is None else seed
    low, high = domain if domain is not None else (-np.ones(n), np.ones(n))
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=(samples, n))
    k = spec.period

    source = spec(x)
    if isinstance(f, ImplicitUqrMap):
        pushed = f.iterate(k)(source, hint=x + spec.u)
    else:
        pushed = f.iterate(k)(source)
    target = spec(spec.lam ** k * x)
    return float(np.max(chordal_distance(pushed, target)))


# ---------------------------------------------------------------------------
# Multipliers and classification
# ---------------------------------------------------------------------------

def _invert(y) -> np.ndarray:
    """The inversion y -> y / |y|^2 of the extended space, swapping 0 and infinity."""
    y = as_points(y)
    infinite = is_infinite(y)
    safe = np.where(infinite[..., None], 1.0, y)
    r2 = np.sum(safe ** 2, axis=-1)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = safe / r2[..., None]
    out = np.where((r2 == 0)[..., None], np.inf, out)
    return np.where(infinite[..., None], 0.0, out)


def _chart_map(f: UqrMap, hint=None) -> Callable[[np.ndarray], np.ndarray]:
    return lambda y: _invert(f(_invert(y), hint))


def _exact_planar_derivative(f: UqrMap, x: np.ndarray, iterations: int) -> Optional[np.ndarray]:
    base, count = f, iterations
    if isinstance(f, IteratedMap):
        base, count = f.base, f.m * iterations
    if not isinstance(base, ClosedFormMap):
        return None
    w = complex(to_complex(x))
    slope = 1.0 + 0j
    with np.errstate(all='ignore'):
        for _ in range(count):
            slope *= complex(base.complex_derivative(np.array(w)))
            w = complex(base.complex_map(np.array(w)))
    return np.array([[slope.real, -slope.imag], [slope.imag, slope.real]])


def multiplier(f: UqrMap, x, iterations: int = 1, hint=None) -> np.ndarray:
    """
    Jacobian of f^iterations at x by central differences.

    At infinity the derivative is taken in the chart y -> y / |y|^2. Planar
    closed forms are cross-checked against the chain-rule product of exact
    derivatives along the orbit.
    """
    x = as_points(x).reshape(-1)
    g = f.iterate(iterations)
    infinite = bool(is_infinite(x))
    if infinite:
        jacobian = fd_jacobian(_chart_map(g), np.zeros_like(x))
    else:
        jacobian = fd_jacobian(lambda y: g(y, hint), x)

    det = abs(float(np.linalg.det(jacobian)))
    if not np.isfinite(det) or det <= tolerance('degenerate_det'):
        raise DegenerateJacobian(f"|det (f^{iterations})'| = {det:.3e} at {x}")

    if not infinite:
        exact = _exact_planar_derivative(f, x, iterations)
        if exact is not None:
            gap = np.linalg.norm(jacobian - exact) / max(np.linalg.norm(exact), 1e-300)
            if gap > tolerance('multiplier'):
                raise MethodDisagreement(f"difference quotient and chain rule differ by {gap:.3e}")
    return jacobian


def classify_fixed_point(f: UqrMap, x, directions: int = None, epsilon: float = None,
                         iterations: int = None, hint=None) -> str:
    """
    Classify a fixed point by following orbits of x + epsilon * u.

    Args:
        f: uqr map
        x: Fixed point (the point at infinity is handled in the inversion chart)
        directions: Number of unit directions u
        epsilon: Size of the perturbation
        iterations: Orbit length
        hint: Preimage of x under h, for implicit maps

    Returns:
        'repelling', 'attracting', 'superattracting' or 'neutral'
    """
    directions = sampling('classify_directions') if directions is None else directions
    epsilon = sampling('classify_epsilon') if epsilon is None else epsilon
    iterations = sampling('classify_iterations') if iterations is None else iterations
    x = as_points(x).reshape(-1)
    n = x.shape[0]

    image = as_points(f(x[None, :], hint))
    if chordal_distance(image, x[None, :])[0] > tolerance('periodic_residual'):
        raise ValueError(f"{x} is not a fixed point of {f.name}")

    chart = bool(is_infinite(x))
    center = np.zeros(n) if chart else x
    points = center + epsilon * unit_directions(n, directions)
    hints = None if chart or hint is None else np.broadcast_to(as_points(hint), points.shape).copy()
    chart_f = _chart_map(f) if chart else None

    neighbourhood = tolerance('classify_neighbourhood')
    state = np.full(len(points), UNDECIDED, dtype=np.uint8)
    for _ in range(iterations):
        active = np.flatnonzero(state == UNDECIDED)
        if len(active) == 0:
            break
        if chart:
            moved, new_hints = chart_f(points[active]), None
        else:
            moved, new_hints = f.step(points[active], None if hints is None else hints[active])
        moved = as_points(moved)
        points[active] = moved
        if new_hints is not None:
            hints[active] = new_hints
        dist = np.linalg.norm(moved - center, axis=-1)
        dist = np.where(np.isfinite(dist), dist, np.inf)
        state[active[dist > neighbourhood]] = ESCAPED
        state[active[dist < neighbourhood * epsilon]] = CONVERGED

    if np.all(state == ESCAPED):
        return 'repelling'
    if np.all(state == CONVERGED):
        if n == 2:
            local = (chart_f if chart else (lambda y: f(y, hint)))
            if local_degree(local, center, epsilon) > 1:
                return 'superattracting'
        return 'attracting'
    if np.all(state == UNDECIDED):
        return 'neutral'
    counts = {name: int(np.sum(state == code))
              for name, code in (('escaped', ESCAPED), ('converged', CONVERGED), ('undecided', UNDECIDED))}
    raise Inconclusive(f"orbit behaviour depends on direction: {counts}")


# ---------------------------------------------------------------------------
# Julia rasters
# ---------------------------------------------------------------------------

@dataclass
class JuliaRaster:
    """Per-pixel classes after a fixed number of steps; the top row is y_max."""
    classes: np.ndarray
    window: Tuple[Tuple[float, float], Tuple[float, float]]
    iterations: int
    slice_value: Optional[float] = None

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.classes.shape[1], self.classes.shape[0]

    @property
    def pixel_size(self) -> float:
        (x0, x1), (y0, y1) = self.window
        width, height = self.resolution
        return min((x1 - x0) / width, (y1 - y0) / height)

    @property
    def pixel_centers(self) -> np.ndarray:
        return _pixel_centers(self.window, self.resolution)

    @property
    def marked(self) -> np.ndarray:
        return self.classes == UNDECIDED

    def class_counts(self) -> Dict[str, int]:
        return {name: int(np.sum(self.classes == code))
                for name, code in (('escaped', ESCAPED), ('converged', CONVERGED), ('undecided', UNDECIDED))}

    def to_ppm_bytes(self, colors: Optional[Dict[str, Sequence[int]]] = None) -> bytes:
        colors = colors or QR_CONFIG['raster']['colors']
        palette = np.zeros((3, 3), dtype=np.uint8)
        palette[ESCAPED] = colors['escaped']
        palette[CONVERGED] = colors['converged']
        palette[UNDECIDED] = colors['undecided']
        width, height = self.resolution
        header = f"P6\n{width} {height}\n255\n".encode('ascii')
        return header + palette[self.classes].tobytes()


def _pixel_centers(window, resolution) -> np.ndarray:
    (x0, x1), (y0, y1) = window
    width, height = resolution
    xs = x0 + (np.arange(width) + 0.5) * (x1 - x0) / width
    ys = y1 - (np.arange(height) + 0.5) * (y1 - y0) / height
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def _classify_chunk(f: UqrMap, points: np.ndarray, iterations: int,
                    escape_radius: float, convergence_radius: float) -> np.ndarray:
    state = np.full(len(points), UNDECIDED, dtype=np.uint8)
    hints = None
    if isinstance(f, ImplicitUqrMap):
        hints = np.zeros_like(points)
    with np.errstate(all='ignore'):
        for _ in range(iterations):
            active = np.flatnonzero(state == UNDECIDED)
            if len(active) == 0:
                break
            moved, new_hints = f.step(points[active], None if hints is None else hints[active])
            moved = as_points(moved)
            size = np.linalg.norm(moved, axis=-1)
            gone = ~np.isfinite(size) | (size > escape_radius)
            settled = ~gone & (np.linalg.norm(moved - points[active], axis=-1) < convergence_radius)
            points[active] = moved
            if new_hints is not None:
                hints[active] = new_hints
            state[active[gone]] = ESCAPED
            state[active[settled]] = CONVERGED
    return state


def julia_render(f: UqrMap, window, resolution: Sequence[int] = None, iterations: int = None,
                 escape_radius: float = None, convergence_radius: float = None,
                 slice_value: Optional[float] = None, threads: Optional[int] = None) -> JuliaRaster:
    """
    Escape-time raster of a planar uqr map, or of a 3-D map on the plane x_3 = slice_value.

    Args:
        f: uqr map
        window: ((x_min, x_max), (y_min, y_max))
        resolution: (width, height) in pixels
        iterations: Steps per pixel
        escape_radius: |f^k| beyond this counts as escaped
        convergence_radius: A step shorter than this counts as converged
        slice_value: Third coordinate of the plane for maps of R^3
        threads: Worker threads over row chunks

    Returns:
        JuliaRaster; pixels neither escaped nor converged form the marked set
    """
    raster = QR_CONFIG['raster']
    resolution = tuple(raster['resolution'] if resolution is None else resolution)
    iterations = raster['iterations'] if iterations is None else iterations
    escape_radius = raster['escape_radius'] if escape_radius is None else escape_radius
    convergence_radius = raster['convergence_radius'] if convergence_radius is None else convergence_radius
    window = tuple(tuple(float(c) for c in side) for side in window)
    if f.dim == 3 and slice_value is None:
        slice_value = 0.0

    centers = _pixel_centers(window, resolution)
    height, width = centers.shape[:2]
    if f.dim == 3:
        centers = np.concatenate([centers, np.full((height, width, 1), float(slice_value))], axis=-1)

    chunks = [rows for rows in np.array_split(np.arange(height), max(1, min(height, 4 * worker_count(threads))))
              if len(rows)]

    def work(rows):
        points = centers[rows].reshape(-1, f.dim).copy()
        return _classify_chunk(f, points, iterations, escape_radius, convergence_radius)

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        parts = list(pool.map(work, chunks))
    classes = np.concatenate(parts).reshape(height, width)
    result = JuliaRaster(classes=classes, window=window, iterations=iterations,
                         slice_value=slice_value if f.dim == 3 else None)
    logger.info("%s: raster %dx%d, %s", f.name, width, height, result.class_counts())
    return result


def distance_to_circle(points, radius: float = 1.0) -> np.ndarray:
    return np.abs(np.linalg.norm(as_points(points), axis=-1) - radius)


def distance_to_segment(points, a: float = -1.0, b: float = 1.0) -> np.ndarray:
    """Distance to the real segment [a, b] of the plane."""
    p = as_points(points)
    nearest = np.clip(p[..., 0], a, b)
    return np.hypot(p[..., 0] - nearest, p[..., 1])


def marked_distance(raster: JuliaRaster, distance: Callable[[np.ndarray], np.ndarray]) -> float:
    """Largest distance, in pixels, from a marked pixel centre to a known set (inf if none marked)."""
    marked = raster.marked
    if not np.any(marked):
        return float('inf')
    return float(np.max(distance(raster.pixel_centers[marked]))) / raster.pixel_size
