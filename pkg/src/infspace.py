# infspace.py
"""
Infinitesimal spaces of quasiregular maps.

Mean-radius functions, homogeneity fits and generalized derivatives, plus the
checks built on them: the chain rule, the inverse formula, the asymptotic
representation f ~ D and the dilatation estimate. Maps are plain vectorized
callables taking points (…, n) to points (…, n).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, interpolate, special, stats
from scipy.spatial import ConvexHull, cKDTree

from config import sampling, tolerance, worker_count
from geometry import as_points
from qr_errors import DegenerateJacobian, MethodDisagreement, NoConvergence, NotConverging, PoorFit

logger = logging.getLogger(__name__)

Map = Callable[[np.ndarray], np.ndarray]

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def unit_ball_volume(n: int) -> float:
    return float(np.pi ** (n / 2.0) / special.gamma(n / 2.0 + 1.0))


# ---------------------------------------------------------------------------
# Reference maps
# ---------------------------------------------------------------------------

def linear_map(matrix) -> Map:
    A = np.asarray(matrix, dtype=float)

    def f(x):
        return as_points(x) @ A.T
    return f


def power_map(d: int) -> Map:
    """Planar z -> z^d."""
    def f(x):
        x = as_points(x)
        w = (x[..., 0] + 1j * x[..., 1]) ** d
        return np.stack([w.real, w.imag], axis=-1)
    return f


def radial_stretch(alpha: float) -> Map:
    """x -> x |x|^(alpha - 1), a radial map with r(t) = t^alpha at the origin."""
    def f(x):
        x = as_points(x)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(divide='ignore', invalid='ignore'):
            factor = np.where(r > 0, r ** (alpha - 1.0), 0.0)
        return x * factor
    return f


# ---------------------------------------------------------------------------
# Sphere grids and sampled sphere maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereGrid:
    """Unit vectors: uniform angles on the circle, Fibonacci points on S^2."""
    n: int
    nodes: np.ndarray

    @property
    def count(self) -> int:
        return len(self.nodes)


def _fibonacci(count: int) -> np.ndarray:
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(1.0 - z ** 2)
    phi = i * GOLDEN_ANGLE
    nodes = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return nodes / np.linalg.norm(nodes, axis=-1, keepdims=True)


def _circle(count: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(count) / count
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def unit_directions(n: int, count: int) -> np.ndarray:
    """Evenly spread unit vectors in R^n (n = 2 or 3)."""
    return _circle(count) if n == 2 else _fibonacci(count)


def sphere_grid(n: int, count: int = None) -> SphereGrid:
    """Sphere grid of the given dimension (at least 64 nodes)."""
    if n not in (2, 3):
        raise ValueError(f"sphere grids exist for n = 2 or 3, got {n}")
    if count is None:
        count = sampling('sphere_nodes') if n == 2 else sampling('sphere_nodes_3d')
    if count < 64:
        raise ValueError(f"a sphere grid needs at least 64 nodes, got {count}")
    return SphereGrid(n, unit_directions(n, count))


def _dense_directions(n: int) -> np.ndarray:
    return _circle(4096) if n == 2 else _fibonacci(4000)


class SampledSphereMap:
    """
    A map sampled on sphere nodes and extended d-homogeneously:
    g(rho u) = rho^d value(u).
    """

    def __init__(self, grid: SphereGrid, values, d: float, scale_tag: float = 0.0):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        self.d = float(d)
        self.scale_tag = float(scale_tag)

    @property
    def n(self) -> int:
        return self.grid.n

    @cached_property
    def _interpolant(self):
        if self.n == 2:
            angles = np.mod(np.arctan2(self.grid.nodes[:, 1], self.grid.nodes[:, 0]), 2.0 * np.pi)
            order = np.argsort(angles)
            knots = np.append(angles[order], angles[order][0] + 2.0 * np.pi)
            values = np.vstack([self.values[order], self.values[order][:1]])
            spline = interpolate.CubicSpline(knots, values, bc_type='periodic', axis=0)
            start = knots[0]
            return lambda u: spline(start + np.mod(np.arctan2(u[..., 1], u[..., 0]) - start, 2.0 * np.pi))
        rbf = interpolate.RBFInterpolator(self.grid.nodes, self.values, kernel='thin_plate_spline')
        return lambda u: rbf(u.reshape(-1, 3)).reshape(u.shape)

    def on_sphere(self, u) -> np.ndarray:
        return self._interpolant(as_points(u))

    def __call__(self, x) -> np.ndarray:
        x = as_points(x)
        rho = np.linalg.norm(x, axis=-1, keepdims=True)
        safe = np.where(rho > 0, rho, 1.0)
        out = rho ** self.d * self.on_sphere(x / safe)
        return np.where(rho > 0, out, 0.0)

    @cached_property
    def _direction_index(self) -> Tuple[np.ndarray, np.ndarray, cKDTree]:
        dense = _dense_directions(self.n)
        image = self.on_sphere(dense)
        return dense, image, cKDTree(image / np.linalg.norm(image, axis=-1, keepdims=True))

    def inverse(self, v) -> np.ndarray:
        """g^-1(v), found by Newton from the nearest sampled image direction."""
        v = as_points(v)
        size = np.linalg.norm(v, axis=-1)
        out = np.zeros(v.shape)
        moving = size > 0
        if not np.any(moving):
            return out
        scale = size[moving][..., None]
        unit = v[moving] / scale
        dense, image, tree = self._direction_index
        _, idx = tree.query(unit)
        guess = dense[idx] * (np.linalg.norm(image[idx], axis=-1, keepdims=True) ** (-1.0 / self.d))
        out[moving] = newton_inverse(self, unit, guess) * scale ** (1.0 / self.d)
        return out


# ---------------------------------------------------------------------------
# Jacobians and inversion
# ---------------------------------------------------------------------------

def fd_jacobian(f: Map, x, scale=1.0) -> np.ndarray:
    """
    Central-difference Jacobians with step fd_relative_step * max(scale, |x|).

    Args:
        f: Vectorized map
        x: Points (…, n)
        scale: Length scale (scalar or per point) bounding the step from below

    Returns:
        Jacobians (…, n, n), J[..., i, j] = d f_i / d x_j
    """
    x = as_points(x)
    n = x.shape[-1]
    size = np.maximum(np.maximum(np.asarray(scale, dtype=float), np.linalg.norm(x, axis=-1)), 1e-12)
    h = sampling('fd_relative_step') * size
    eye = np.eye(n)
    columns = []
    for j in range(n):
        offset = h[..., None] * eye[j]
        columns.append((as_points(f(x + offset)) - as_points(f(x - offset))) / (2.0 * h[..., None]))
    return np.stack(columns, axis=-1)


def newton_inverse(f: Map, y, guess, iterations: int = 60, rtol: float = 1e-11,
                   atol: float = None) -> np.ndarray:
    """
    Batched damped Newton for f(x) = y with finite-difference Jacobians.

    A row stops once |f(x) - y| <= max(rtol |y|, atol); the absolute floor
    (tolerance ``newton_atol``) keeps targets at y = 0 reachable.
    """
    atol = tolerance('newton_atol') if atol is None else atol
    y = as_points(y)
    x = np.array(np.broadcast_to(as_points(guess), y.shape), dtype=float)
    target = np.maximum(rtol * np.linalg.norm(y, axis=-1), atol)
    residual = as_points(f(x)) - y
    error = np.linalg.norm(residual, axis=-1)
    for _ in range(iterations):
        todo = error > target
        if not np.any(todo):
            break
        jac = fd_jacobian(f, x, scale=1e-300)
        step = (np.linalg.pinv(jac) @ residual[..., None])[..., 0]
        step = np.where(todo[..., None], step, 0.0)
        factor = np.ones(error.shape)
        for _ in range(10):
            trial = x - factor[..., None] * step
            trial_residual = as_points(f(trial)) - y
            trial_error = np.linalg.norm(trial_residual, axis=-1)
            worse = todo & ~(trial_error < error)
            if not np.any(worse):
                break
            factor = np.where(worse, 0.5 * factor, factor)
        improved = todo & (trial_error < error)
        x = np.where(improved[..., None], trial, x)
        residual = np.where(improved[..., None], trial_residual, residual)
        error = np.where(improved, trial_error, error)
        if not np.any(improved):
            break
    if np.any(error > target):
        raise NoConvergence(f"Newton inversion left residual {float(error.max()):.3e}")
    return x


# ---------------------------------------------------------------------------
# Mean radius
# ---------------------------------------------------------------------------

def local_degree(f: Map, x0, t: float, grid: Optional[SphereGrid] = None) -> int:
    """Winding number of f around f(x0) along the circle of radius t (1 in R^3)."""
    x0 = as_points(x0)
    if x0.shape[-1] != 2:
        return 1
    count = max(1024, grid.count if grid is not None else 0)
    loop = as_points(f(x0 + t * _circle(count))) - as_points(f(x0))
    angles = np.unwrap(np.append(np.arctan2(loop[:, 1], loop[:, 0]),
                                 np.arctan2(loop[0, 1], loop[0, 0])))
    return max(1, abs(int(np.round((angles[-1] - angles[0]) / (2.0 * np.pi)))))


def _jacobian_volume(f: Map, x0: np.ndarray, t: float, grid: SphereGrid) -> float:
    n = grid.n
    sphere_area = n * unit_ball_volume(n)

    def shell(rho):
        points = x0 + rho * grid.nodes
        dets = np.abs(np.linalg.det(fd_jacobian(f, points, scale=rho)))
        return rho ** (n - 1) * sphere_area * np.mean(dets)

    volume, _ = integrate.quad_vec(shell, 0.0, t, epsrel=sampling('quadrature_epsrel'),
                                   limit=sampling('quadrature_limit'))
    return float(volume) / local_degree(f, x0, t, grid)


def _occupied_volume(image: np.ndarray, cells: int) -> float:
    n = image.shape[-1]
    low = image.min(axis=0)
    span = np.maximum(image.max(axis=0) - low, 1e-300)
    idx = np.clip(np.floor((image - low) / span * cells).astype(int), 0, cells - 1)
    occupied = np.zeros((cells,) * n, dtype=bool)
    occupied[tuple(idx.T)] = True
    padded = np.pad(occupied, 1)
    interior = occupied.copy()
    core = tuple(slice(1, -1) for _ in range(n))
    for axis in range(n):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[core]
    boundary = occupied & ~interior
    cell_volume = float(np.prod(span / cells))
    return (np.count_nonzero(interior) + 0.5 * np.count_nonzero(boundary)) * cell_volume


def _montecarlo_volume(f: Map, x0: np.ndarray, t: float, seed: int) -> float:
    n = x0.shape[-1]
    cells = sampling('montecarlo_cells_2d') if n == 2 else sampling('montecarlo_cells_3d')
    per_axis = (3 if n == 2 else 2) * cells
    rng = np.random.default_rng(seed)
    axes = np.meshgrid(*([np.arange(per_axis)] * n), indexing='ij')
    strata = np.stack(axes, axis=-1).reshape(-1, n)
    offsets = -1.0 + 2.0 * (strata + rng.uniform(size=strata.shape)) / per_axis
    offsets = offsets[np.linalg.norm(offsets, axis=-1) <= 1.0]
    image = as_points(f(x0 + t * offsets))
    return _occupied_volume(image, cells)


def mean_radius(f: Map, x0, t: float, method: str = 'jacobian',
                grid: Optional[SphereGrid] = None, seed: int = None) -> float:
    """
    r_f(x0, t) = (|f(B(x0, t))| / Omega_n)^(1/n).

    Args:
        f: Vectorized map
        x0: Centre
        t: Ball radius
        method: ``jacobian`` (quadrature of |J_f| divided by the local degree),
            ``montecarlo`` (occupied image cells) or ``compare`` (both, returning
            the jacobian value)
        grid: Angular grid for the jacobian quadrature
        seed: Seed for the Monte-Carlo sampler

    Returns:
        Mean radius
    """
    x0 = as_points(x0)
    n = x0.shape[-1]
    if not t > 0:
        raise ValueError(f"radius must be positive, got {t}")
    grid = grid if grid is not None else sphere_grid(n)
    seed = sampling('seed') if seed is None else seed
    omega = unit_ball_volume(n)
    if method == 'jacobian':
        return (_jacobian_volume(f, x0, t, grid) / omega) ** (1.0 / n)
    if method == 'montecarlo':
        return (_montecarlo_volume(f, x0, t, seed) / omega) ** (1.0 / n)
    if method == 'compare':
        quad = mean_radius(f, x0, t, 'jacobian', grid, seed)
        counted = mean_radius(f, x0, t, 'montecarlo', grid, seed)
        gap = abs(quad - counted) / quad
        if gap > tolerance('method_disagreement'):
            raise MethodDisagreement(f"jacobian {quad:.6g} vs montecarlo {counted:.6g} ({gap:.2%})")
        if gap > tolerance('method_agreement'):
            logger.warning("mean radius methods differ by %.2f%% at t=%g", 100 * gap, t)
        return quad
    raise ValueError(f"unknown mean-radius method '{method}'")


def mean_radius_of_inverse(f: Map, x0, s: float, inverse: Map,
                           grid: Optional[SphereGrid] = None) -> float:
    """Mean radius of the local inverse at f(x0): integrates 1/|J_f(f^-1(y))| over B(f(x0), s)."""
    x0 = as_points(x0)
    n = x0.shape[-1]
    grid = grid if grid is not None else sphere_grid(n)
    base = as_points(f(x0))
    sphere_area = n * unit_ball_volume(n)

    def shell(rho):
        x = inverse(base + rho * grid.nodes)
        dets = np.abs(np.linalg.det(fd_jacobian(f, x, scale=np.linalg.norm(x - x0, axis=-1))))
        return rho ** (n - 1) * sphere_area * np.mean(1.0 / dets)

    volume, _ = integrate.quad_vec(shell, 0.0, s, epsrel=1e-8)
    return (float(volume) / unit_ball_volume(n)) ** (1.0 / n)


# ---------------------------------------------------------------------------
# Homogeneity
# ---------------------------------------------------------------------------

@dataclass
class MeanRadiusProfile:
    """Mean radii on a geometric sequence of scales."""
    center: np.ndarray
    t: np.ndarray
    r: np.ndarray
    fitted_d: float = np.nan
    fit_residual: float = np.nan

    def __post_init__(self):
        if np.any(np.diff(self.t) >= 0):
            raise ValueError("profile scales must be strictly decreasing")
        if np.any(self.r <= 0):
            raise ValueError("mean radii must be positive")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'t': self.t, 'r': self.r})


def _loglog_fit(t, r) -> Tuple[float, float, float]:
    """Slope d, intercept log c and max deviation of log r = log c + d log t."""
    lt, lr = np.log(t), np.log(r)
    d, c = np.polyfit(lt, lr, 1)
    return float(d), float(c), float(np.max(np.abs(lr - (c + d * lt))))


def geometric_scales(t0: float, count: int, factor: float = 0.5) -> np.ndarray:
    return t0 * factor ** np.arange(count)


def mean_radius_profile(f: Map, x0, t0: float = 0.1, count: int = 8, factor: float = 0.5,
                        method: str = 'jacobian', grid: Optional[SphereGrid] = None,
                        threads: int = None) -> MeanRadiusProfile:
    """Mean radii at t0, t0*factor, ... computed concurrently, with the log-log fit attached."""
    x0 = as_points(x0)
    ts = geometric_scales(t0, count, factor)
    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        rs = np.array(list(pool.map(lambda t: mean_radius(f, x0, t, method, grid), ts)))
    d, _, residual = _loglog_fit(ts, rs)
    return MeanRadiusProfile(x0, ts, rs, d, residual)


def fit_homogeneity(profile: MeanRadiusProfile) -> float:
    """
    Least-squares slope of log r against log t.

    Raises:
        ValueError: fewer than 6 samples or fewer than 3 dyadic scales
        PoorFit: max log-log deviation above the homogeneity tolerance
    """
    if len(profile.t) < 6:
        raise ValueError(f"need at least 6 samples, got {len(profile.t)}")
    if np.log2(profile.t.max() / profile.t.min()) < 3.0 - 1e-9:
        raise ValueError("samples must span at least 3 dyadic scales")
    d, _, residual = _loglog_fit(profile.t, profile.r)
    profile.fitted_d, profile.fit_residual = d, residual
    if residual > tolerance('homogeneity_fit'):
        raise PoorFit(f"log-log residual {residual:.3e} for slope {d:.4f}")
    return d


# ---------------------------------------------------------------------------
# Generalized derivatives
# ---------------------------------------------------------------------------

@dataclass
class GeneralizedDerivative:
    """Rescaled maps (f(x0 + t u) - f(x0)) / r_f(t) and the simpleness verdict."""
    g: SampledSphereMap
    simple: bool
    discrepancies: List[float]
    t: np.ndarray
    r: np.ndarray
    coefficient: float = 1.0

    @property
    def d(self) -> float:
        return self.g.d


def _check_scales(t_seq) -> np.ndarray:
    ts = np.asarray(t_seq, dtype=float)
    if len(ts) < 4:
        raise ValueError(f"need at least 4 scales, got {len(ts)}")
    ratios = ts[1:] / ts[:-1]
    if np.any(ratios >= 1) or np.ptp(ratios) > 1e-6 * ratios.mean():
        raise ValueError("scales must form a decreasing geometric sequence")
    return ts


def generalized_derivative(f: Map, x0, t_seq, grid: Optional[SphereGrid] = None,
                           radius: Callable[[float], float] = None,
                           threads: int = None) -> GeneralizedDerivative:
    """
    Element of the infinitesimal space T(x0, f) from a geometric scale sequence.

    Args:
        f: Vectorized map
        x0: Centre
        t_seq: Decreasing geometric scales (at least 4)
        grid: Sphere grid for the sampled map
        radius: Mean-radius function t -> r_f(x0, t); defaults to the jacobian method
        threads: Worker count for the per-scale radii

    Returns:
        GeneralizedDerivative sampled at the smallest scale

    Raises:
        NotConverging: consecutive discrepancies grow and stay above the simpleness scale
    """
    x0 = as_points(x0)
    n = x0.shape[-1]
    grid = grid if grid is not None else sphere_grid(n)
    ts = _check_scales(t_seq)
    if radius is None:
        def radius(t):
            return mean_radius(f, x0, t, grid=grid)
    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        rs = np.array(list(pool.map(radius, ts)))
    base = as_points(f(x0))
    rescaled = [(as_points(f(x0 + t * grid.nodes)) - base) / r for t, r in zip(ts, rs)]
    discrepancies = [float(np.max(np.linalg.norm(b - a, axis=-1)))
                     for a, b in zip(rescaled[:-1], rescaled[1:])]

    settling = all(later <= earlier + 1e-9 for earlier, later in zip(discrepancies, discrepancies[1:]))
    final = discrepancies[-1]
    threshold = tolerance('simple_scale')
    if not settling and final > threshold:
        raise NotConverging(f"rescaled maps do not settle (discrepancies {discrepancies})")
    d, log_c, _ = _loglog_fit(ts, rs)
    g = SampledSphereMap(grid, rescaled[-1], d, scale_tag=ts[-1])
    logger.debug("generalized derivative at %s: d=%.4f final discrepancy %.3e", x0, d, final)
    return GeneralizedDerivative(g, settling and final <= threshold, discrepancies, ts, rs, float(np.exp(log_c)))


def _require_simple(result: GeneralizedDerivative, label: str) -> GeneralizedDerivative:
    if not result.simple:
        raise NotConverging(f"{label} is not simple (discrepancies {result.discrepancies})")
    return result


# ---------------------------------------------------------------------------
# Image measure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureEstimate:
    volume: float
    stderr: float
    method: str


def _boundary_volume(g: SampledSphereMap) -> float:
    if g.n == 2:
        curve = g.on_sphere(_circle(4096))
        nxt = np.roll(curve, -1, axis=0)
        area = 0.5 * np.sum(curve[:, 0] * nxt[:, 1] - nxt[:, 0] * curve[:, 1])
        angles = np.unwrap(np.append(np.arctan2(curve[:, 1], curve[:, 0]),
                                     np.arctan2(curve[0, 1], curve[0, 0])))
        winding = int(np.round((angles[-1] - angles[0]) / (2.0 * np.pi)))
        return abs(area) / max(1, abs(winding))
    nodes = _fibonacci(4000)
    hull = ConvexHull(nodes)
    tri = hull.simplices.copy()
    a, b, c = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    flip = np.einsum('ij,ij->i', np.cross(b - a, c - a), a + b + c) < 0
    tri[flip] = tri[flip][:, ::-1]
    image = g.on_sphere(nodes)
    volume = np.sum(np.linalg.det(image[tri])) / 6.0
    return abs(float(volume))


def _montecarlo_measure(g: SampledSphereMap, seed: int, replicates: int,
                        log2_points: int) -> Tuple[float, float]:
    dense = _dense_directions(g.n)
    image = g.on_sphere(dense)
    radii = np.linalg.norm(image, axis=-1)
    tree = cKDTree(image / radii[:, None])
    neighbours = 2 if g.n == 2 else 3
    reach = float(radii.max())
    box = (2.0 * reach) ** g.n
    estimates = []
    for child in np.random.SeedSequence(seed).spawn(replicates):
        sobol = stats.qmc.Sobol(d=g.n, scramble=True, seed=np.random.default_rng(child))
        points = reach * (2.0 * sobol.random_base2(m=log2_points) - 1.0)
        size = np.linalg.norm(points, axis=-1)
        _, idx = tree.query(points / np.maximum(size, 1e-300)[:, None], k=neighbours)
        inside = size <= radii[idx].max(axis=-1)
        estimates.append(box * np.mean(inside))
    estimates = np.asarray(estimates)
    return float(estimates.mean()), float(estimates.std(ddof=1) / np.sqrt(replicates))


def image_ball_measure(g: SampledSphereMap, method: str = 'auto', seed: int = None,
                       replicates: int = None, log2_points: int = None) -> MeasureEstimate:
    """
    Volume of g(B(0, 1)) as a set.

    ``montecarlo`` tests Sobol points against the radial function of the
    starlike image (replicates give the standard error); ``boundary``
    integrates over the image of the sphere and divides out its degree.
    ``auto`` selects ``boundary``.
    """
    if method in ('auto', 'boundary'):
        return MeasureEstimate(_boundary_volume(g), 0.0, 'boundary')
    if method == 'montecarlo':
        seed = sampling('seed') if seed is None else seed
        replicates = sampling('qmc_replicates') if replicates is None else replicates
        log2_points = sampling('qmc_log2_points') if log2_points is None else log2_points
        volume, stderr = _montecarlo_measure(g, seed, replicates, log2_points)
        return MeasureEstimate(volume, stderr, 'montecarlo')
    raise ValueError(f"unknown measure method '{method}'")


def _normalizer(g: SampledSphereMap) -> float:
    measure = image_ball_measure(g)
    return (unit_ball_volume(g.n) / measure.volume) ** (1.0 / g.n)


# ---------------------------------------------------------------------------
# Chain rule and inverse formula
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainRuleResult:
    discrepancy: float
    C: float
    d_f: float
    d_h: float
    d_composite: float
    normalized: Optional[SampledSphereMap] = field(default=None, repr=False, compare=False)


def chain_rule_check(f: Map, h: Map, grid: Optional[SphereGrid] = None,
                     t_seq=None, n: int = 2) -> ChainRuleResult:
    """
    Compare g_{f o h} with C (g_f o g_h) at the origin.

    C is chosen so that C (g_f o g_h) maps B(0, 1) onto a set of measure Omega_n.
    """
    grid = grid if grid is not None else sphere_grid(n)
    origin = np.zeros(grid.n)
    for label, m in (('f', f), ('h', h)):
        if np.linalg.norm(as_points(m(origin))) > 1e-12:
            raise ValueError(f"{label} must fix the origin")
    ts = geometric_scales(0.1, 6) if t_seq is None else t_seq

    g_f = _require_simple(generalized_derivative(f, origin, ts, grid), 'f').g
    g_h = _require_simple(generalized_derivative(h, origin, ts, grid), 'h').g
    composite = _require_simple(generalized_derivative(lambda x: f(h(x)), origin, ts, grid), 'f o h').g

    product = SampledSphereMap(grid, g_f(g_h.values), g_f.d * g_h.d)
    C = _normalizer(product)
    discrepancy = float(np.max(np.linalg.norm(composite.values - C * product.values, axis=-1)))
    logger.info("chain rule: C=%.6f discrepancy=%.3e", C, discrepancy)
    normalized = SampledSphereMap(grid, C * product.values, product.d)
    return ChainRuleResult(discrepancy, C, g_f.d, g_h.d, composite.d, normalized)


class AsymptoticRepresentation:
    """D(x) = f(x0) + c |x - x0|^d g((x - x0) / |x - x0|) and its inverse."""

    def __init__(self, x0, base, derivative: GeneralizedDerivative):
        self.x0 = as_points(x0)
        self.base = as_points(base)
        self.g = derivative.g
        self.coefficient = derivative.coefficient

    @classmethod
    def from_map(cls, f: Map, x0, t_seq, grid: Optional[SphereGrid] = None) -> 'AsymptoticRepresentation':
        derivative = _require_simple(generalized_derivative(f, x0, t_seq, grid), 'f')
        return cls(x0, f(as_points(x0)), derivative)

    def radius(self, t):
        return self.coefficient * np.asarray(t) ** self.g.d

    def radius_inverse(self, s):
        return (np.asarray(s) / self.coefficient) ** (1.0 / self.g.d)

    def __call__(self, x) -> np.ndarray:
        v = as_points(x) - self.x0
        t = np.linalg.norm(v, axis=-1, keepdims=True)
        unit = v / np.where(t > 0, t, 1.0)
        return self.base + np.where(t > 0, self.radius(t) * self.g.on_sphere(unit), 0.0)

    def inverse(self, y) -> np.ndarray:
        v = as_points(y) - self.base
        s = np.linalg.norm(v, axis=-1)
        out = np.array(np.broadcast_to(self.x0, v.shape), dtype=float)
        moving = s > 0
        if np.any(moving):
            size = s[moving][..., None]
            out[moving] += self.radius_inverse(size) * self.g.inverse(v[moving] / size)
        return out


@dataclass(frozen=True)
class InverseFormulaResult:
    discrepancy: float
    C: float
    d: float
    d_inverse: float


def local_inverse_map(f: Map, representation: AsymptoticRepresentation) -> Map:
    """Numerical local inverse of f near x0, seeded by D^-1."""
    def inverse(y):
        y = as_points(y)
        out = representation.inverse(y)
        moving = np.linalg.norm(y - representation.base, axis=-1) > 0
        if np.any(moving):
            out[moving] = newton_inverse(f, y[moving], out[moving])
        return out
    return inverse


def inverse_formula_check(f: Map, grid: Optional[SphereGrid] = None, x0=None,
                          t_seq=None, n: int = 2) -> InverseFormulaResult:
    """
    Compare T(x0, f^-1), computed from the numerical inverse, with C g^-1.

    The inverse's mean radius comes from the change of variables
    |f^-1(B)| = integral of 1 / |J_f(f^-1(y))| over B.
    """
    grid = grid if grid is not None else sphere_grid(n)
    x0 = np.zeros(grid.n) if x0 is None else as_points(x0)
    ts = geometric_scales(0.1, 6) if t_seq is None else np.asarray(t_seq, dtype=float)
    representation = AsymptoticRepresentation.from_map(f, x0, ts, grid)
    g = representation.g
    finv = local_inverse_map(f, representation)
    y0 = as_points(f(x0))

    image_scales = representation.radius(ts)
    inverse_derivative = generalized_derivative(
        finv, y0, image_scales, grid,
        radius=lambda s: mean_radius_of_inverse(f, x0, s, finv, grid))
    inverse_derivative = _require_simple(inverse_derivative, 'f^-1')

    g_inverse = SampledSphereMap(grid, g.inverse(grid.nodes), 1.0 / g.d)
    C = _normalizer(g_inverse)
    discrepancy = float(np.max(np.linalg.norm(inverse_derivative.g.values - C * g_inverse.values, axis=-1)))
    logger.info("inverse formula: C=%.6f discrepancy=%.3e d_inv=%.4f", C, discrepancy, inverse_derivative.d)
    return InverseFormulaResult(discrepancy, C, g.d, inverse_derivative.d)


# ---------------------------------------------------------------------------
# Asymptotic checks
# ---------------------------------------------------------------------------

def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    gap = np.linalg.norm(a - b, axis=-1)
    size = np.linalg.norm(a, axis=-1) + np.linalg.norm(b, axis=-1)
    return float(np.max(gap / np.maximum(size, 1e-300)))


def asymptotic_rep_check(f: Map, x0, radii: Sequence[float] = None,
                         grid: Optional[SphereGrid] = None) -> pd.DataFrame:
    """
    sup |F - D| / (|F| + |D|) on spheres of decreasing radius, where
    F = f - f(x0) and D(x) = r_f(|x - x0|) g((x - x0)/|x - x0|).
    """
    x0 = as_points(x0)
    grid = grid if grid is not None else sphere_grid(x0.shape[-1])
    radii = np.sort(np.asarray(radii if radii is not None else [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]))[::-1]
    derivative = _require_simple(generalized_derivative(f, x0, geometric_scales(radii[-1] / 2, 6), grid), 'f')
    base = as_points(f(x0))
    rows = []
    for t in radii:
        F = as_points(f(x0 + t * grid.nodes)) - base
        D = mean_radius(f, x0, t, grid=grid) * derivative.g.values
        rows.append({'radius': t, 'ratio': _relative_gap(F, D)})
    return pd.DataFrame(rows)


def equivalence_decay(u: Map, v: Map, x0, radii: Sequence[float],
                      grid: Optional[SphereGrid] = None) -> pd.DataFrame:
    """sup |u - v| / (|u| + |v|) on spheres about x0 (values taken relative to x0's images)."""
    x0 = as_points(x0)
    grid = grid if grid is not None else sphere_grid(x0.shape[-1])
    u0, v0 = as_points(u(x0)), as_points(v(x0))
    rows = []
    for t in radii:
        points = x0 + t * grid.nodes
        rows.append({'radius': t, 'ratio': _relative_gap(as_points(u(points)) - u0, as_points(v(points)) - v0)})
    return pd.DataFrame(rows)


def is_starlike(g: SampledSphereMap, steps: int = 32) -> bool:
    """Every ray rho u, 0 < rho <= 1, must map to a radial segment traced outward."""
    rho = np.linspace(1.0 / steps, 1.0, steps)
    path = g(rho[:, None, None] * g.grid.nodes[None, :, :])
    size = np.linalg.norm(path, axis=-1)
    outward = np.all(np.diff(size, axis=0) > 0)
    unit = path / np.maximum(size, 1e-300)[..., None]
    aligned = np.max(np.linalg.norm(unit - unit[-1], axis=-1)) <= 1e-8
    return bool(outward and aligned)


def inverse_rep_check(f: Map, x0, radii: Sequence[float] = None, grid: Optional[SphereGrid] = None,
                      t_seq=None) -> pd.DataFrame:
    """Relative gap between the numerical f^-1 and D^-1 on image spheres of decreasing radius."""
    x0 = as_points(x0)
    grid = grid if grid is not None else sphere_grid(x0.shape[-1])
    radii = np.sort(np.asarray(radii if radii is not None else [1e-1, 1e-2, 1e-3]))[::-1]
    ts = geometric_scales(0.01, 6) if t_seq is None else t_seq
    representation = AsymptoticRepresentation.from_map(f, x0, ts, grid)
    finv = local_inverse_map(f, representation)
    y0 = as_points(f(x0))
    rows = []
    for s in radii:
        y = y0 + s * grid.nodes
        rows.append({'radius': s, 'ratio': _relative_gap(finv(y) - x0, representation.inverse(y) - x0)})
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class DilatationEstimate:
    K_O: float
    K_I: float
    K: float
    samples: int
    skipped: int


def dilatation_estimate(f: Map, region: Tuple[Sequence[float], Sequence[float]],
                        samples: int = 500, seed: int = None) -> DilatationEstimate:
    """
    Outer and inner dilatation from finite-difference Jacobians at random points.

    Samples with |det J| <= degenerate_det are skipped and counted.
    """
    seed = sampling('seed') if seed is None else seed
    low, high = (np.asarray(c, dtype=float) for c in region)
    n = low.shape[0]
    x = np.random.default_rng(seed).uniform(low, high, size=(samples, n))
    jac = fd_jacobian(f, x)
    det = np.abs(np.linalg.det(jac))
    usable = det > tolerance('degenerate_det')
    skipped = int(np.count_nonzero(~usable))
    if not np.any(usable):
        raise DegenerateJacobian(f"all {samples} sampled Jacobians are degenerate")
    if skipped:
        logger.warning("skipped %d degenerate Jacobians", skipped)
    singular = np.linalg.svd(jac[usable], compute_uv=False)
    outer = float(np.max(singular[:, 0] ** n / det[usable]))
    inner = float(np.max(det[usable] / singular[:, -1] ** n))
    return DilatationEstimate(outer, inner, max(outer, inner), samples, skipped)
