"""
Hardy-inequality machinery for inverse-square potentials.

Test-function Rayleigh quotients for the supercritical single-centre
potential, the potential comparison for tight clusters, the constants of the
L1 lower bound, the multipolar eigenvalue bound with its partition of unity,
and the trigonometric inequality sup F <= N behind it.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bounds_oracles import h_d
from cloud_geometry import gamma
from errors import DomainError, PreconditionError
from kernels import TruncatedKernel, potential_eval
from point_process import PointCloud, RegionDescriptor
from spectral import DEFAULT_TOL, grid_cap, lambda_max, radial_lambda_max
from utils import make_rng, unit_sphere_area

logger = logging.getLogger(__name__)

WINDOW_TOLERANCE = 1e-12


def inverse_square(d: int) -> TruncatedKernel:
    """The untruncated kernel |x|^-2."""
    return TruncatedKernel(math.inf, d)


def v_tilde(rho: np.ndarray) -> np.ndarray:
    """1 on the unit ball, rho^-2 outside."""
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(rho <= 1.0, 1.0, 1.0 / rho ** 2)


def v_inverse_square(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore"):
        return 1.0 / rho ** 2


@dataclass
class HardyRayleigh:
    numerator: float
    denominator: float
    ratio: float
    middle_energy: float
    outer_energy: float

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def _power_integral(m: int) -> float:
    """int_1^2 s^m ds."""
    if m == -1:
        return math.log(2.0)
    return (2.0 ** (m + 1) - 1.0) / (m + 1)


def hardy_rayleigh(n: float, K: float, eps: float, d: int) -> HardyRayleigh:
    """(h_d + eps) int g^2 V~ against 1/2 int |grad g|^2 for the piecewise test function g_n.

    g_n is 1 on the unit ball, |x|^-(d-2)/2 up to n, linear down to zero on
    (n, 2n]. Every piece has a closed form; the outer ones are scale free in
    s = rho/n.
    """
    if n < 2:
        raise DomainError(f"n must be at least 2, got {n}")
    if not K > 2 * n:
        raise DomainError(f"K must exceed 2n = {2 * n}, got {K}")
    hd = h_d(d)
    sigma = unit_sphere_area(d)
    log_n = math.log(n)

    # mass: inner ball, middle shell (rho^-d rho^(d-1) = 1/rho, so 1 in log-radius), linear cap
    inner_mass = 1.0 / d
    middle_mass = log_n
    outer_mass = 4.0 * _power_integral(d - 3) - 4.0 * _power_integral(d - 2) + _power_integral(d - 1)

    half_slope = (d - 2) ** 2 / 8.0
    middle_energy = half_slope * log_n
    outer_energy = 0.5 * _power_integral(d - 1)

    numerator = sigma * (hd + eps) * (inner_mass + middle_mass + outer_mass)
    denominator = sigma * (middle_energy + outer_energy)
    return HardyRayleigh(numerator, denominator, numerator / denominator, sigma * middle_energy, sigma * outer_energy)


@dataclass
class HardyThreshold:
    n0: int
    K_star: float
    ratio: float


def hardy_threshold(eps: float, d: int, n_limit: float = 1e300) -> HardyThreshold:
    """Smallest integer n >= 2 whose Rayleigh ratio exceeds 1, and K_star = 2 n0 + 1."""
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")

    def ratio(n: float) -> float:
        return hardy_rayleigh(n, 2 * n + 1, eps, d).ratio

    hi = 2.0
    while ratio(hi) <= 1.0:
        hi *= hi
        if hi > n_limit:
            raise PreconditionError(f"No n below {n_limit:.3g} makes the Rayleigh ratio exceed 1")
    lo = max(2.0, math.sqrt(hi))
    if ratio(lo) > 1.0:
        lo = 2.0
    lo, hi = math.floor(lo), math.ceil(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ratio(mid) > 1.0:
            hi = mid
        else:
            lo = mid
    n0 = hi if ratio(lo) <= 1.0 else lo
    return HardyThreshold(int(n0), 2.0 * n0 + 1.0, ratio(n0))


def delta_star(d: int, M: int, theta: float) -> float:
    hd = h_d(d)
    if not theta > hd / M:
        raise DomainError(f"delta_star needs theta > h_d/M = {hd / M}, got {theta}")
    return 0.25 * (1.0 - hd / (theta * M))


@dataclass
class LbPotentialVerdict:
    min_ratio: float
    violations: int
    samples: int

    @property
    def holds(self) -> bool:
        return self.violations == 0


def lb_potential_check(cloud: PointCloud, theta: float, sample_points: np.ndarray) -> LbPotentialVerdict:
    """theta V(x) >= (h_d + 2 theta M delta_star) V~(x) for a cloud inside B_{delta_star}."""
    d, M = cloud.dim, len(cloud)
    delta = delta_star(d, M, theta)
    if np.any(np.linalg.norm(cloud.points, axis=1) > delta * (1 + 1e-12)):
        raise PreconditionError(f"All points must lie in the ball of radius delta_star = {delta}")
    x = np.atleast_2d(np.asarray(sample_points, dtype=float))
    dist = np.linalg.norm(x[:, None, :] - cloud.points[None, :, :], axis=2)
    x = x[dist.min(axis=1) > 1e-9]
    lhs = theta * potential_eval(cloud, inverse_square(d), x)
    rhs = (h_d(d) + 2 * theta * M * delta) * v_tilde(np.linalg.norm(x, axis=1))
    ratio = lhs / rhs
    violations = int(np.sum(lhs < rhs * (1 - 1e-12)))
    return LbPotentialVerdict(float(ratio.min()), violations, len(x))


@dataclass
class KeyLowerBound:
    K_star: float
    n0: int
    eps: float
    delta_star: float
    lambda_tilde: float
    c1: float
    c2: float
    mesh_step: float
    nodes: int

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def key_lower_bound_constants(d: int, M: int, theta: float, h: float = 1.0 / 128,
                              tol: float = DEFAULT_TOL) -> KeyLowerBound:
    """K_star, c1 = delta^-d ||e1||_1^2 and c2 = delta^2 lambda~ for the L1 lower bound.

    lambda~ is the top Dirichlet eigenvalue of 1/2 Laplacian + (h_d + eps) V~
    on B_{K_star}, solved radially on a graded mesh with relative step h.
    """
    hd = h_d(d)
    if not (hd / M < theta <= hd * (1 + WINDOW_TOLERANCE)):
        raise DomainError(f"theta must lie in (h_d/M, h_d] = ({hd / M}, {hd}], got {theta}")
    delta = delta_star(d, M, theta)
    eps = 2 * theta * M * delta
    threshold = hardy_threshold(eps, d)
    result = radial_lambda_max(threshold.K_star, lambda rho: (hd + eps) * v_tilde(rho), d, h=h, inner=1.0)

    sigma = unit_sphere_area(d)
    u = result.eigenvector / math.sqrt(sigma * np.sum(result.weights * result.eigenvector ** 2))
    l1 = sigma * float(np.sum(result.weights * np.abs(u)))
    c1 = delta ** (-d) * l1 ** 2
    c2 = delta ** 2 * result.lambda_
    if c2 <= 0:
        logger.warning(f"c2={c2:.3e} is not positive; mesh step {h} is too coarse")
    logger.info(f"Key lower bound: K_star={threshold.K_star:.6g}, c1={c1:.6g}, c2={c2:.6g}")
    return KeyLowerBound(threshold.K_star, threshold.n0, eps, delta, result.lambda_, c1, c2, h, result.size)


def _check_window(d: int, M: int, theta: float) -> None:
    hd = h_d(d)
    lo, hi = hd / M, hd / (M - 1)
    if not (lo * (1 + WINDOW_TOLERANCE) < theta <= hi * (1 + WINDOW_TOLERANCE)):
        raise DomainError(f"theta must lie in (h_d/M, h_d/(M-1)] = ({lo}, {hi}], got {theta}")


def multipolar_bound(cloud: PointCloud, theta: float) -> float:
    """M (pi^2 + 3 theta) / (2 Gamma^2)."""
    M = len(cloud)
    if M < 2:
        raise PreconditionError(f"The multipolar bound needs at least two points, got {M}")
    _check_window(cloud.dim, M, theta)
    radius = gamma(cloud)
    if radius <= 0:
        raise PreconditionError("Coincident points: connectivity radius is zero")
    return M * (math.pi ** 2 + 3 * theta) / (2 * radius ** 2)


@dataclass
class MultipolarCheck:
    bound: float
    lambda_: float
    slack: float
    theta: float
    gamma: float

    @property
    def holds(self) -> bool:
        return self.lambda_ <= self.bound + self.slack

    def to_row(self) -> Dict:
        return {"theta": self.theta, "gamma": self.gamma, "lambda": self.lambda_, "bound": self.bound,
                "slack": self.slack, "pass": self.holds}


def multipolar_check(cloud: PointCloud, theta: float, h: float, cap: Optional[float] = None, radius: Optional[float] = None,
                     tol: float = DEFAULT_TOL, refine: bool = False) -> MultipolarCheck:
    """Discretized lambda_max on a large ball around the cloud against the multipolar bound.

    With ``refine`` the slack includes |lambda_h - lambda_2h|.
    """
    bound = multipolar_bound(cloud, theta)
    cap = cap if cap is not None else grid_cap(h)
    center = cloud.points.mean(axis=0)
    spread = float(np.linalg.norm(cloud.points - center, axis=1).max())
    radius = radius if radius is not None else 4.0 * (spread + gamma(cloud))
    domain = RegionDescriptor.ball(tuple(center), radius)
    kernel = inverse_square(cloud.dim)
    lam = lambda_max(domain, cloud, kernel, theta, h, cap, tol).lambda_
    slack = 2 * tol * max(1.0, abs(lam))
    if refine:
        coarse = lambda_max(domain, cloud, kernel, theta, 2 * h, cap, tol).lambda_
        slack += abs(lam - coarse)
    return MultipolarCheck(bound, lam, slack, theta, gamma(cloud))


def random_multipolar_cloud(M: int, d: int, seed: int, index: int) -> Tuple[PointCloud, float]:
    """M uniform points in the unit ball and a theta drawn inside the admissible window."""
    rng = make_rng(seed, index)
    points = RegionDescriptor.ball((0.0,) * d, 1.0).sample_uniform(M, rng)
    hd = h_d(d)
    lo, hi = hd / M, hd / (M - 1)
    theta = lo + (hi - lo) * float(rng.uniform(0.05, 1.0))
    return PointCloud.manual(points), theta


@dataclass
class CriticalityRow:
    cap: float
    lambda_: float


@dataclass
class CriticalityReport:
    theta: float
    radius: float
    rows: List[CriticalityRow]

    @property
    def relative_change(self) -> float:
        first, last = self.rows[0].lambda_, self.rows[-1].lambda_
        return abs(last - first) / max(abs(first), 1e-300)

    def to_dict(self) -> Dict:
        return {"theta": self.theta, "radius": self.radius, "relative_change": self.relative_change,
                "rows": [r.__dict__ for r in self.rows]}


def single_pole_criticality(theta: float, caps: Sequence[float], d: int = 3, radius: float = 64.0,
                            h: float = 1.0 / 64) -> CriticalityReport:
    """lambda_max(B_radius, theta min(|x|^-2, m)) for a pole at the centre, over a cap sweep."""
    rows = []
    for cap in caps:
        inner = 0.1 / math.sqrt(cap)
        result = radial_lambda_max(radius, lambda rho, m=cap: theta * np.minimum(v_inverse_square(rho), m),
                                   d, h=h, inner=inner)
        rows.append(CriticalityRow(float(cap), result.lambda_))
    return CriticalityReport(theta, radius, rows)


@dataclass
class FEtaResult:
    N: int
    sup: float
    argmax: Tuple[float, ...]
    boundary_sup: float

    @property
    def holds(self) -> bool:
        return self.sup <= self.N + 1e-9 and self.boundary_sup <= self.N + 1e-9

    def to_row(self) -> Dict:
        return {"N": self.N, "sup": self.sup, "boundary_sup": self.boundary_sup,
                "argmax": list(self.argmax), "pass": self.holds}


def f_eta(eta: np.ndarray) -> np.ndarray:
    """F(eta) = (sum_i cos eta_i prod_{j != i} sin eta_j)^2 / (1 - prod sin^2 eta_i), rows of (0, pi/2)^N."""
    eta = np.atleast_2d(eta)
    log_p = np.sum(np.log(np.sin(eta)), axis=1)
    cot_sum = np.sum(1.0 / np.tan(eta), axis=1)
    p2 = np.exp(2 * log_p)
    return p2 * cot_sum ** 2 / -np.expm1(2 * log_p)


def f_eta_sup(N: int, grid_points_per_axis: int, chunk: int = 1 << 20) -> FEtaResult:
    """Grid maximum of F over the open cube plus the face eta_1 = 0, where F = prod_{j>1} sin^2."""
    if N < 1:
        raise DomainError(f"N must be at least 1, got {N}")
    G = grid_points_per_axis
    nodes = (np.arange(G) + 0.5) * (math.pi / 2) / G
    total = G ** N
    best, best_at = -math.inf, None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        eta = nodes[np.stack(np.unravel_index(flat, (G,) * N), axis=1)]
        values = f_eta(eta)
        i = int(np.argmax(values))
        if values[i] > best:
            best, best_at = float(values[i]), tuple(float(v) for v in eta[i])

    # face eta_1 = 0 (any coordinate, by symmetry)
    if N == 1:
        boundary = 1.0
    else:
        boundary = float(np.sin(nodes[-1]) ** (2 * (N - 1)))
    return FEtaResult(N, best, best_at, boundary)


def _bump(t: np.ndarray) -> np.ndarray:
    """J(t): 0 on [0, 1/2], -cos(pi t) on [1/2, 1], 1 beyond."""
    t = np.asarray(t, dtype=float)
    return np.where(t <= 0.5, 0.0, np.where(t >= 1.0, 1.0, -np.cos(math.pi * t)))


def partition_functions(points: np.ndarray, r: float, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """J_1 = prod_y J(|x - y|/r) and J_2 = (1 - J_1^2)^1/2 at each row of x."""
    dist = np.linalg.norm(x[:, None, :] - points[None, :, :], axis=2)
    j1 = np.prod(_bump(dist / r), axis=1)
    j2 = np.sqrt(np.maximum(1.0 - j1 ** 2, 0.0))
    return j1, j2


@dataclass
class PartitionVerdict:
    max_identity_error: float
    max_gradient_ratio: float
    samples: int
    N: int
    rtol: float = field(default=1e-3)

    @property
    def holds(self) -> bool:
        return self.max_identity_error <= 1e-12 and self.max_gradient_ratio <= 1.0 + self.rtol

    def to_row(self) -> Dict:
        return {"N": self.N, "samples": self.samples, "max_identity_error": self.max_identity_error,
                "max_gradient_ratio": self.max_gradient_ratio, "pass": self.holds}


def partition_of_unity_check(cloud: PointCloud, r: float, sample_points: np.ndarray,
                             subset: Optional[Sequence[int]] = None, step: Optional[float] = None,
                             rtol: float = 1e-3) -> PartitionVerdict:
    """J_1^2 + J_2^2 = 1 and |grad J_1|^2 + |grad J_2|^2 <= N pi^2 / r^2 by central differences.

    J_1 is built on the sub-cloud ``subset`` (default: the whole cloud); r
    must stay below the connectivity radius of the full cloud.
    """
    if len(cloud) >= 2 and not r < gamma(cloud):
        raise PreconditionError(f"r={r} must be below the connectivity radius {gamma(cloud)}")
    points = cloud.points if subset is None else cloud.points[list(subset)]
    N = len(points)
    step = step if step is not None else r / 1000.0
    x = np.atleast_2d(np.asarray(sample_points, dtype=float))
    j1, j2 = partition_functions(points, r, x)
    grad_sq = np.zeros(len(x))
    for axis in range(cloud.dim):
        shift = np.zeros(cloud.dim)
        shift[axis] = step
        p1, p2 = partition_functions(points, r, x + shift)
        m1, m2 = partition_functions(points, r, x - shift)
        grad_sq += ((p1 - m1) / (2 * step)) ** 2 + ((p2 - m2) / (2 * step)) ** 2
    identity_error = float(np.max(np.abs(j1 ** 2 + j2 ** 2 - 1.0)))
    ratio = float(np.max(grad_sq) * r * r / (N * math.pi ** 2))
    return PartitionVerdict(identity_error, ratio, len(x), N, rtol)


def partition_samples(cloud: PointCloud, r: float, n: int, seed: int) -> np.ndarray:
    """Uniform samples in the union of balls B_r(y), drawn ball by ball."""
    rng = make_rng(seed, n)
    owners = rng.integers(0, len(cloud), size=n)
    offsets = RegionDescriptor.ball((0.0,) * cloud.dim, r).sample_uniform(n, rng)
    return cloud.points[owners] + offsets
