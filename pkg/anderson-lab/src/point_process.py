"""
Homogeneous Poisson point processes on bounded regions.

This module samples Poisson clouds on boxes and balls, answers ball-counting
queries (including the supremum of the count over ball centres in a region),
and evaluates the closed-form clustering probability bounds together with
their Monte-Carlo verification.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize
from scipy.spatial import cKDTree
from scipy.stats import chisquare, poisson

from errors import BoundVacuousError, CloudFormatError, InvalidRegionError, PreconditionError
from utils import bernoulli_summary, binomial_interval, format_float, make_rng, unit_ball_volume

logger = logging.getLogger(__name__)

EXACT_SUBSET_LIMIT = 6
GRID_FALLBACK_DIVISOR = 20
BOUND_CONFIDENCE = 0.997


@dataclass(frozen=True, eq=False)
class RegionDescriptor:
    """Axis-aligned box (``size`` = half width) or centred ball (``size`` = radius)."""
    kind: str
    center: Tuple[float, ...]
    size: float

    def __post_init__(self):
        if self.kind not in ("box", "ball"):
            raise InvalidRegionError(f"Unknown region kind '{self.kind}'")
        center = tuple(float(c) for c in self.center)
        object.__setattr__(self, "center", center)
        if not center or not all(math.isfinite(c) for c in center):
            raise InvalidRegionError("Region center must be a finite vector")
        if not math.isfinite(self.size) or self.size <= 0:
            raise InvalidRegionError(f"Region size must be finite and positive, got {self.size}")

    @classmethod
    def box(cls, center: Sequence[float], half_width: float) -> "RegionDescriptor":
        return cls("box", tuple(center), float(half_width))

    @classmethod
    def ball(cls, center: Sequence[float], radius: float) -> "RegionDescriptor":
        return cls("ball", tuple(center), float(radius))

    @classmethod
    def parse(cls, text: str, dim: int, center: Optional[Sequence[float]] = None) -> "RegionDescriptor":
        """Parse ``box:HALF`` or ``ball:R`` (centred at the origin unless given)."""
        try:
            kind, value = text.split(":", 1)
            size = float(value)
        except ValueError:
            raise InvalidRegionError(f"Region must look like box:HALF or ball:R, got '{text}'")
        origin = tuple(center) if center is not None else (0.0,) * dim
        return cls(kind.strip(), origin, size)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        if self.kind == "box":
            return (2.0 * self.size) ** self.dim
        return unit_ball_volume(self.dim) * self.size ** self.dim

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "center": list(self.center), "size": self.size}

    @classmethod
    def from_dict(cls, data: Dict) -> "RegionDescriptor":
        return cls(data["kind"], tuple(data["center"]), float(data["size"]))

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        return c - self.size, c + self.size

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Open-region membership for an (m, d) array."""
        rel = np.atleast_2d(points) - np.asarray(self.center)
        if self.kind == "box":
            return np.all(np.abs(rel) < self.size, axis=1)
        return np.linalg.norm(rel, axis=1) < self.size

    def distance_to(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to the region (0 inside)."""
        rel = np.atleast_2d(points) - np.asarray(self.center)
        if self.kind == "box":
            excess = np.maximum(np.abs(rel) - self.size, 0.0)
            return np.linalg.norm(excess, axis=1)
        return np.maximum(np.linalg.norm(rel, axis=1) - self.size, 0.0)

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        """Distance from interior points to the complement (negative outside)."""
        rel = np.atleast_2d(points) - np.asarray(self.center)
        if self.kind == "box":
            return np.min(self.size - np.abs(rel), axis=1)
        return self.size - np.linalg.norm(rel, axis=1)

    def expanded(self, delta: float) -> "RegionDescriptor":
        """Same-kind region containing the delta-neighbourhood of this one."""
        return RegionDescriptor(self.kind, self.center, self.size + delta)

    def neighbourhood_volume(self, r: float) -> float:
        """Exact volume of the open r-neighbourhood (Steiner formula)."""
        d = self.dim
        if self.kind == "ball":
            return unit_ball_volume(d) * (self.size + r) ** d
        side = 2.0 * self.size
        return sum(math.comb(d, j) * side ** (d - j) * unit_ball_volume(j) * r ** j for j in range(d + 1))

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.dim
        c = np.asarray(self.center)
        if self.kind == "box":
            return c + rng.uniform(-self.size, self.size, size=(n, d))
        directions = rng.standard_normal(size=(n, d))
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radii = self.size * rng.uniform(size=(n, 1)) ** (1.0 / d)
        return c + directions / norms * radii


@dataclass(frozen=True, eq=False)
class PointCloud:
    """A finite set of distinct points, optionally tagged with its sampling region."""
    dim: int
    points: np.ndarray
    region: Optional[RegionDescriptor] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, self.dim) if np.size(self.points) else np.zeros((0, self.dim))
        if not np.all(np.isfinite(pts)):
            raise PreconditionError("Cloud points must be finite")
        if self.region is not None:
            if self.region.dim != self.dim:
                raise PreconditionError("Region and cloud dimensions differ")
            lo, hi = self.region.bounds()
            if pts.size and self.region.kind == "ball":
                outside = np.linalg.norm(pts - np.asarray(self.region.center), axis=1) > self.region.size
            else:
                outside = np.any((pts < lo) | (pts > hi), axis=1) if pts.size else np.zeros(0, dtype=bool)
            if np.any(outside):
                raise PreconditionError("Cloud points must lie inside their region")
        elif len(pts) > 1 and len(np.unique(pts, axis=0)) != len(pts):
            raise PreconditionError("Manual clouds must not contain duplicate points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def manual(cls, points) -> "PointCloud":
        arr = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(arr.shape[1], arr)

    @classmethod
    def empty(cls, dim: int) -> "PointCloud":
        return cls(dim, np.zeros((0, dim)))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_manual(self) -> bool:
        return self.region is None

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.dim, self.points[np.asarray(list(indices), dtype=int)])

    def union(self, other: "PointCloud") -> "PointCloud":
        return PointCloud.manual(np.vstack([self.points, other.points]))

    def restricted(self, region: RegionDescriptor) -> "PointCloud":
        return PointCloud(self.dim, self.points[region.contains(self.points)], region)

    def scaled(self, factor: float) -> "PointCloud":
        return PointCloud.manual(self.points * factor)

    def to_dict(self) -> Dict:
        return {
            "dim": self.dim,
            "points": self.points.tolist(),
            "region": self.region.to_dict() if self.region else "manual",
        }


def write_cloud(cloud: PointCloud, path: str) -> None:
    """Write the cloud as CSV with a ``# dim=D`` header and 17 significant digits."""
    with open(path, "w") as f:
        f.write(f"# dim={cloud.dim}\n")
        for row in cloud.points:
            f.write(",".join(format_float(v) for v in row) + "\n")


def read_cloud(path: str) -> PointCloud:
    try:
        with open(path, "r") as f:
            lines = [line.strip() for line in f if line.strip()]
    except OSError as e:
        raise CloudFormatError(f"Cannot read cloud file {path}: {str(e)}")
    if not lines or not lines[0].startswith("#") or "dim=" not in lines[0]:
        raise CloudFormatError(f"{path}: first line must be '# dim=D'")
    try:
        dim = int(lines[0].split("dim=", 1)[1].strip())
    except ValueError:
        raise CloudFormatError(f"{path}: cannot parse dimension from '{lines[0]}'")
    if dim < 1:
        raise CloudFormatError(f"{path}: dimension must be positive")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise CloudFormatError(f"{path}:{lineno}: non-numeric entry in '{line}'")
        if len(row) != dim:
            raise CloudFormatError(f"{path}:{lineno}: expected {dim} coordinates, got {len(row)}")
        rows.append(row)
    try:
        return PointCloud(dim, np.array(rows).reshape(-1, dim))
    except PreconditionError as e:
        raise CloudFormatError(f"{path}: {str(e)}")


def sample_ppp(region: RegionDescriptor, intensity: float, seed: int, stream: Tuple[int, ...] = ()) -> PointCloud:
    """Sample a Poisson point process of the given intensity on ``region``."""
    volume = region.volume
    if not math.isfinite(volume) or volume <= 0:
        raise InvalidRegionError(f"Region volume must be finite and positive, got {volume}")
    if intensity <= 0:
        raise InvalidRegionError(f"Intensity must be positive, got {intensity}")
    rng = make_rng(seed, *stream)
    count = int(rng.poisson(intensity * volume))
    return PointCloud(region.dim, region.sample_uniform(count, rng), region)


def count_in_ball(cloud: PointCloud, center, r: float) -> int:
    """Number of cloud points strictly within distance r of ``center``."""
    if len(cloud) == 0:
        return 0
    dist = np.linalg.norm(cloud.points - np.asarray(center, dtype=float), axis=1)
    return int(np.count_nonzero(dist < r))


def minimum_enclosing_ball(points: np.ndarray) -> Tuple[np.ndarray, float]:
    """Exact minimum enclosing ball of a handful of points.

    The optimal ball is the circumscribed ball (within the affine hull) of
    some support subset of at most d+1 points; all such subsets are tried.
    """
    pts = np.atleast_2d(points)
    n, d = pts.shape
    if n == 1:
        return pts[0].copy(), 0.0
    best_center, best_radius = None, math.inf
    for size in range(2, min(n, d + 1) + 1):
        for support in itertools.combinations(range(n), size):
            sub = pts[list(support)]
            base = sub[1:] - sub[0]
            gram = base @ base.T
            try:
                coef = np.linalg.solve(gram, 0.5 * np.diag(gram))
            except np.linalg.LinAlgError:
                continue
            center = sub[0] + base.T @ coef
            radius = float(np.linalg.norm(center - sub[0]))
            if radius >= best_radius:
                continue
            if np.all(np.linalg.norm(pts - center, axis=1) <= radius * (1 + 1e-12) + 1e-15):
                best_center, best_radius = center, radius
    return best_center, best_radius


def _constrained_center(points: np.ndarray, region: RegionDescriptor, start: np.ndarray):
    """Minimise the largest distance to ``points`` over centres in ``region``."""
    d = points.shape[1]
    c = np.asarray(region.center)
    if region.kind == "box":
        x0 = np.clip(start, c - region.size, c + region.size)
        bounds = [(lo, hi) for lo, hi in zip(c - region.size, c + region.size)] + [(0.0, None)]
        constraints = []
    else:
        offset = start - c
        norm = np.linalg.norm(offset)
        x0 = start if norm <= region.size else c + offset * (region.size / norm)
        bounds = None
        constraints = [{"type": "ineq", "fun": lambda z: region.size ** 2 - np.sum((z[:d] - c) ** 2)}]
    constraints.append({"type": "ineq", "fun": lambda z: z[d] - np.sum((points - z[:d]) ** 2, axis=1)})
    s0 = float(np.max(np.sum((points - x0) ** 2, axis=1)))
    result = minimize(
        lambda z: z[d], np.append(x0, s0), method="SLSQP", bounds=bounds, constraints=constraints,
        options={"ftol": 1e-14, "maxiter": 200},
    )
    center = result.x[:d]
    return center, float(np.sqrt(np.max(np.sum((points - center) ** 2, axis=1))))


def fitting_center(points: np.ndarray, r: float, region: RegionDescriptor) -> Optional[np.ndarray]:
    """A centre x in ``region`` with all points strictly within r of x, or None."""
    center, radius = minimum_enclosing_ball(points)
    if radius >= r:
        return None
    if region.contains(center)[0]:
        return center
    center, radius = _constrained_center(points, region, center)
    if radius < r and region.distance_to(center)[0] <= 1e-12:
        return center
    return None


def _fitting_subsets(cloud: PointCloud, r: float, region: RegionDescriptor, max_size: int):
    """Level-wise growth of index subsets that fit in one r-ball centred in ``region``.

    Yields ``(size, [(subset, centre), ...])`` for size = 1, 2, ... while
    subsets of that size exist.
    """
    pts = cloud.points
    eligible = np.flatnonzero(region.distance_to(pts) < r) if len(pts) else np.zeros(0, dtype=int)
    if eligible.size == 0:
        return
    tree = cKDTree(pts[eligible])
    adjacency = {int(i): set() for i in eligible}
    for a, b in tree.query_pairs(2.0 * r):
        i, j = int(eligible[a]), int(eligible[b])
        if np.linalg.norm(pts[i] - pts[j]) < 2.0 * r:
            adjacency[i].add(j)
            adjacency[j].add(i)
    level = []
    for i in eligible:
        center = fitting_center(pts[[i]], r, region)
        if center is not None:
            level.append(((int(i),), center))
    size = 1
    while level:
        yield size, level
        if size >= max_size:
            return
        nxt = []
        for subset, _ in level:
            common = set.intersection(*(adjacency[i] for i in subset))
            for j in sorted(c for c in common if c > subset[-1]):
                candidate = subset + (j,)
                center = fitting_center(pts[list(candidate)], r, region)
                if center is not None:
                    nxt.append((candidate, center))
        level = nxt
        size += 1


@dataclass
class MaxBallCount:
    value: int
    exact: bool


def max_ball_count_detailed(cloud: PointCloud, r: float, search_region: RegionDescriptor) -> MaxBallCount:
    """Supremum over centres x in ``search_region`` of the open-ball count."""
    best, last_level = 0, []
    for size, level in _fitting_subsets(cloud, r, search_region, EXACT_SUBSET_LIMIT):
        best, last_level = size, level
    if best < EXACT_SUBSET_LIMIT:
        return MaxBallCount(best, True)

    # Grid fallback around the largest exactly-verified clusters.
    spacing = r / GRID_FALLBACK_DIVISOR
    tree = cKDTree(cloud.points)
    lo_region, hi_region = search_region.bounds()
    grid_best = best
    for _, center in last_level:
        lo = np.maximum(center - r, lo_region)
        hi = np.minimum(center + r, hi_region)
        axes = [np.arange(l, h + spacing / 2, spacing) for l, h in zip(lo, hi)]
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, cloud.dim)
        nodes = nodes[search_region.contains(nodes)]
        if len(nodes):
            counts = tree.query_ball_point(nodes, r * (1 - 1e-12), return_length=True)
            grid_best = max(grid_best, int(np.max(counts)))
    logger.warning(f"max_ball_count reached {grid_best} points; value from grid fallback at spacing r/{GRID_FALLBACK_DIVISOR}")
    return MaxBallCount(grid_best, False)


def max_ball_count(cloud: PointCloud, r: float, search_region: RegionDescriptor) -> int:
    return max_ball_count_detailed(cloud, r, search_region).value


def prob_chain_bound(volume_D: float, r: float, k: int, d: int, intensity: float = 1.0) -> float:
    """Union bound |D| |B_r|^k / (k+1)! for a (k+1)-point r-chain rooted in D.

    At intensity lambda every volume is measured in units of 1/lambda.
    """
    return intensity * volume_D * (intensity * unit_ball_volume(d) * r ** d) ** k / math.factorial(k + 1)


def prob_chain_mecke_bound(volume_D: float, r: float, k: int, d: int, intensity: float = 1.0) -> float:
    """|D| |B_r|^k, the expected number of ordered r-chains y_0..y_k with y_0 in D.

    Unlike prob_chain_bound this does not divide by (k+1)!: an unordered
    (k+1)-set can be a chain in several orders, so only the ordered count
    bounds the chain probability.
    """
    return intensity * volume_D * (intensity * unit_ball_volume(d) * r ** d) ** k


def prob_max_count_bound(region: RegionDescriptor, r: float, k: int, intensity: float = 1.0) -> float:
    """|B_r(D)| |B_{2r}|^k / (k+1)!, bounding P(sup_x count(B_r(x)) >= k+1)."""
    d = region.dim
    ball = intensity * unit_ball_volume(d) * (2 * r) ** d
    return intensity * region.neighbourhood_volume(r) * ball ** k / math.factorial(k + 1)


def prob_cluster_lower(volume_D: float, r: float, k: int, d: int, intensity: float = 1.0) -> float:
    """Lower bound on P(some r-ball centred in D holds exactly k+1 points)."""
    ball = intensity * unit_ball_volume(d) * r ** d
    rate = intensity * volume_D * (intensity * r ** d) ** k * math.exp(-ball) / (2 ** d * math.factorial(k + 1))
    return -math.expm1(-rate)


def prob_no_cluster_lower(regions: List[Tuple[RegionDescriptor, float]], k: int, intensity: float = 1.0) -> float:
    """Product lower bound on P(every r_i-ball centred in D_i holds at most k points)."""
    from cloud_geometry import covering_number

    bound = 1.0
    for region, r in regions:
        d = region.dim
        cell = intensity * (2 * r) ** d
        ball = intensity * unit_ball_volume(d) * (2 * r) ** d
        base = 1.0 - cell * ball ** k / math.factorial(k + 1)
        if base <= 0:
            raise BoundVacuousError(f"Factor base {base:.4g} <= 0 at r={r}, k={k}, d={d}")
        bound *= base ** covering_number(region, r).count
    return bound


def chain_event(cloud: PointCloud, region: RegionDescriptor, r: float, k: int) -> bool:
    """Whether distinct y_0..y_k exist with y_0 in D and consecutive gaps below r."""
    pts = cloud.points
    if len(pts) < k + 1:
        return False
    starts = np.flatnonzero(region.contains(pts))
    if starts.size == 0:
        return False
    if k == 0:
        return True
    neighbours = {i: [] for i in range(len(pts))}
    for i, j in cKDTree(pts).query_pairs(r):
        if np.linalg.norm(pts[i] - pts[j]) < r:
            neighbours[i].append(j)
            neighbours[j].append(i)

    def extend(path: List[int]) -> bool:
        if len(path) == k + 1:
            return True
        for j in neighbours[path[-1]]:
            if j not in path and extend(path + [j]):
                return True
        return False

    return any(extend([int(s)]) for s in starts)


def cluster_event(cloud: PointCloud, region: RegionDescriptor, r: float, k: int) -> bool:
    """Sufficient test for: some x in D has exactly k+1 points in B_r(x).

    A fitting (k+1)-subset is accepted when its minimax centre holds exactly
    k+1 points; this sub-event can only under-count the true event.
    """
    for size, level in _fitting_subsets(cloud, r, region, k + 1):
        if size == k + 1:
            return any(count_in_ball(cloud, center, r) == k + 1 for _, center in level)
    return False


@dataclass
class BoundParams:
    lemma: str
    dim: int
    r: float
    k: int
    region: Optional[RegionDescriptor] = None
    regions: List[Tuple[RegionDescriptor, float]] = field(default_factory=list)
    intensity: float = 1.0

    def to_dict(self) -> Dict:
        data = {"lemma": self.lemma, "dim": self.dim, "r": self.r, "k": self.k, "intensity": self.intensity}
        if self.region is not None:
            data["region"] = self.region.to_dict()
        if self.regions:
            data["regions"] = [{"region": reg.to_dict(), "r": ri} for reg, ri in self.regions]
        return data


@dataclass
class BoundCheck:
    params: BoundParams
    empirical: float
    bound: float
    stderr: float
    trials: int
    upper: bool
    passed: bool
    stated_bound: Optional[float] = None
    interval: Tuple[float, float] = (0.0, 1.0)

    def to_row(self) -> Dict:
        return {
            "lemma": self.params.lemma,
            "dim": self.params.dim,
            "r": self.params.r,
            "k": self.params.k,
            "intensity": self.params.intensity,
            "volume": self.params.region.volume if self.params.region else "",
            "trials": self.trials,
            "empirical": self.empirical,
            "bound": self.bound,
            "stated_bound": self.bound if self.stated_bound is None else self.stated_bound,
            "stderr": self.stderr,
            "ci_low": self.interval[0],
            "ci_high": self.interval[1],
            "pass": self.passed,
        }


def _bound_value(params: BoundParams) -> Tuple[float, bool]:
    """Bound value and whether it is an upper bound on the event probability."""
    lam = params.intensity
    if params.lemma == "chain":
        return prob_chain_mecke_bound(params.region.volume, params.r, params.k, params.dim, lam), True
    if params.lemma == "maxcount":
        return prob_max_count_bound(params.region, params.r, params.k, lam), True
    if params.lemma == "cluster":
        return prob_cluster_lower(params.region.volume, params.r, params.k, params.dim, lam), False
    if params.lemma == "nocluster":
        return prob_no_cluster_lower(params.regions, params.k, lam), False
    raise PreconditionError(f"Unknown lemma '{params.lemma}'")


def covering_box(regions: Sequence[RegionDescriptor]) -> RegionDescriptor:
    """Smallest axis-aligned cube holding every region."""
    lows, highs = zip(*(region.bounds() for region in regions))
    lo, hi = np.min(lows, axis=0), np.max(highs, axis=0)
    return RegionDescriptor.box((lo + hi) / 2.0, float(np.max(hi - lo)) / 2.0)


def _event_in_trial(params: BoundParams, seed: int, trial: int) -> bool:
    lemma = params.lemma
    if lemma == "nocluster":
        # one cloud per trial: the event is joint over all windows
        window = covering_box([region.expanded(ri) for region, ri in params.regions])
        cloud = sample_ppp(window, params.intensity, seed, (trial,))
        return all(max_ball_count(cloud, ri, region) <= params.k for region, ri in params.regions)
    margin = params.k * params.r if lemma == "chain" else params.r
    cloud = sample_ppp(params.region.expanded(margin), params.intensity, seed, (trial,))
    if lemma == "chain":
        return chain_event(cloud, params.region, params.r, params.k)
    if lemma == "maxcount":
        return max_ball_count(cloud, params.r, params.region) >= params.k + 1
    return cluster_event(cloud, params.region, params.r, params.k)


def verify_bound(params: BoundParams, trials: int, seed: int, n_jobs: int = 1,
                 confidence: float = BOUND_CONFIDENCE) -> BoundCheck:
    """Monte-Carlo frequency of the lemma's event against its closed-form bound.

    The check passes when the bound is compatible with the exact binomial
    confidence interval of the frequency, so zero or full hit counts are
    judged by the interval width rather than a vanishing plug-in stderr.
    """
    if trials < 1:
        raise PreconditionError(f"Bound verification needs at least one trial, got {trials}")
    bound, upper = _bound_value(params)
    hits = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_event_in_trial)(params, seed, trial) for trial in range(trials)
    )
    empirical, stderr = bernoulli_summary(hits)
    low, high = binomial_interval(sum(bool(h) for h in hits), trials, confidence)
    passed = low <= bound if upper else bound <= high
    logger.info(
        f"{params.lemma} bound check (r={params.r}, k={params.k}): "
        f"empirical={empirical:.6g} bound={bound:.6g} interval=[{low:.3g}, {high:.3g}] pass={passed}"
    )
    stated = None
    if params.lemma == "chain":
        stated = prob_chain_bound(params.region.volume, params.r, params.k, params.dim, params.intensity)
    return BoundCheck(params, empirical, bound, stderr, trials, upper, passed, stated, (low, high))


def default_sweep(lemma: str, intensity: float = 1.0) -> List[BoundParams]:
    """Parameter sweep used by ``verify-bounds`` and the suite."""
    unit_box = RegionDescriptor.box((0.5, 0.5, 0.5), 0.5)
    if lemma in ("chain", "maxcount"):
        return [BoundParams(lemma, 3, r, k, unit_box, intensity=intensity) for k in (1, 2) for r in (0.1, 0.2, 0.3)]
    if lemma == "cluster":
        half = 100.0 ** (1.0 / 3.0) / 2.0
        return [BoundParams(lemma, 3, 0.3, 2, RegionDescriptor.box((0.0, 0.0, 0.0), half), intensity=intensity)]
    if lemma == "nocluster":
        regions = [
            (RegionDescriptor.box((0.0, 0.0, 0.0), 0.5), 0.1),
            (RegionDescriptor.box((3.0, 0.0, 0.0), 0.5), 0.2),
        ]
        return [BoundParams(lemma, 3, 0.2, 2, regions=regions, intensity=intensity)]
    raise PreconditionError(f"Unknown lemma '{lemma}'")


@dataclass
class CountFit:
    p_value: float
    mean: float
    expected_mean: float
    trials: int


def poisson_count_gof(region: RegionDescriptor, intensity: float, ball_center, ball_radius: float,
                      trials: int, seed: int) -> CountFit:
    """Chi-square test of ball counts over independent samples against Poisson."""
    counts = np.array([
        count_in_ball(sample_ppp(region, intensity, seed, (trial,)), ball_center, ball_radius)
        for trial in range(trials)
    ])
    mu = intensity * unit_ball_volume(region.dim) * ball_radius ** region.dim
    # Bins 0..top-1 plus a lumped tail, each with expected frequency >= 5.
    top = 0
    while trials * poisson.pmf(top, mu) >= 5 and top < 200:
        top += 1
    top = max(top, 1)
    observed = [np.count_nonzero(counts == j) for j in range(top)] + [np.count_nonzero(counts >= top)]
    expected = [trials * poisson.pmf(j, mu) for j in range(top)] + [trials * poisson.sf(top - 1, mu)]
    _, p_value = chisquare(observed, expected)
    return CountFit(float(p_value), float(counts.mean()), mu, trials)
