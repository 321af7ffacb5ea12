"""
Excursions of a path between the cloud and the far field.

An excursion starts when the path enters the closed 3a-neighbourhood of the
cloud and ends when it leaves B_r(cloud). The path-expansion bound controls
the discounted Feynman-Kac functional outside B_r(cloud) through the
number of such excursions.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial import cKDTree

from bounds_oracles import h_d
from cloud_geometry import ComponentDecomposition, components
from errors import DomainError, IllPosedError, PreconditionError
from feynman_kac import (CalibratedConstants, FKEstimate, PathConfig, PotentialField, brownian_paths,
                         estimate_from_log_weights, run_paths)
from kernels import TruncatedKernel
from point_process import PointCloud, RegionDescriptor
from spectral import fill_component_eigenvalues, grid_cap
from utils import make_rng

logger = logging.getLogger(__name__)

MIN_BIN_COUNT = 10


@dataclass
class ExcursionRecord:
    entrances: List[float]
    exits: List[float]
    component_ids: List[int]
    horizon: float

    def __post_init__(self):
        previous = 0.0
        for n, (enter, leave) in enumerate(zip(self.entrances, self.exits)):
            if not (enter > previous or (n == 0 and enter >= previous)) or not leave > enter:
                raise PreconditionError(f"Excursion {n + 1} is out of order: enter={enter}, exit={leave}")
            previous = leave

    def count_before(self, t: float) -> int:
        """E_t: the number of entrances at or before t."""
        return sum(1 for enter in self.entrances if enter <= t)

    @property
    def E_t(self) -> int:
        return self.count_before(self.horizon)

    def to_dict(self) -> Dict:
        return {
            "entrances": self.entrances,
            "exits": [None if math.isinf(x) else x for x in self.exits],
            "component_ids": self.component_ids,
            "horizon": self.horizon,
            "E_t": self.E_t,
        }


def _check_radii(a: float, r: float) -> None:
    if not a > 0 or not r > 4 * a:
        raise DomainError(f"Excursions need a > 0 and r > 4a, got a={a}, r={r}")


def excursion_decompose(path: np.ndarray, dt: float, cloud: PointCloud, a: float, r: float,
                        decomposition: Optional[ComponentDecomposition] = None) -> ExcursionRecord:
    """Entrance times into the closed B_{3a}(cloud), exit times from B_r(cloud), on a sampled path.

    ``path`` has one row per time k * dt. Entrances are searched strictly
    after the previous exit (after time 0 for the first one); an excursion
    still running at the end of the path has exit time inf.
    """
    _check_radii(a, r)
    path = np.atleast_2d(np.asarray(path, dtype=float))
    horizon = (len(path) - 1) * dt
    if len(cloud) == 0:
        return ExcursionRecord([], [], [], horizon)
    decomposition = decomposition or components(cloud, r)
    dist, nearest = cKDTree(cloud.points).query(path)
    close = dist <= 3 * a
    away = dist >= r

    entrances, exits, ids = [], [], []
    k = 1
    while k < len(path):
        hits = np.flatnonzero(close[k:])
        if hits.size == 0:
            break
        enter = k + int(hits[0])
        entrances.append(enter * dt)
        ids.append(int(decomposition.labels[nearest[enter]]))
        leaves = np.flatnonzero(away[enter + 1:])
        if leaves.size == 0:
            exits.append(math.inf)
            break
        leave = enter + 1 + int(leaves[0])
        exits.append(leave * dt)
        k = leave + 1
    return ExcursionRecord(entrances, exits, ids, horizon)


@dataclass
class ExcursionHistogram:
    """Path counts per E_t value and the weight mass they carry, scaled by exp(-log_scale)."""
    counts: Dict[int, int]
    mass: Dict[int, float]
    n_paths: int
    t: float
    log_scale: float = 0.0

    def ratios(self, min_count: int = MIN_BIN_COUNT) -> Dict[int, float]:
        """mass[n + 1] / mass[n] for n >= 1 where both bins hold at least ``min_count`` paths."""
        out = {}
        for n in sorted(self.counts):
            if n < 1 or n + 1 not in self.counts:
                continue
            if self.counts[n] >= min_count and self.counts[n + 1] >= min_count and self.mass[n] > 0:
                out[n] = self.mass[n + 1] / self.mass[n]
        return out

    def max_ratio(self, min_count: int = MIN_BIN_COUNT) -> Optional[float]:
        ratios = self.ratios(min_count)
        return max(ratios.values()) if ratios else None

    def to_dict(self) -> Dict:
        return {"counts": self.counts, "mass": self.mass, "log_scale": self.log_scale, "n_paths": self.n_paths,
                "t": self.t, "ratios": self.ratios(), "max_ratio": self.max_ratio()}


def _histogram_batch(cloud, decomposition, a, r, theta, gamma, t, x0, cfg, size, b):
    steps = cfg.steps_for(t)
    paths = brownian_paths(x0, size, steps, cfg.dt, make_rng(cfg.seed, b))
    field_ = PotentialField(cloud, TruncatedKernel(a, cloud.dim), theta, cfg.cap, 0.0)
    q, _ = field_.value(paths.reshape(-1, cloud.dim))
    q = q.reshape(size, steps + 1)
    log_weights = 0.5 * cfg.dt * (q[:, :-1] + q[:, 1:]).sum(axis=1) - gamma * t
    counts = [excursion_decompose(p, cfg.dt, cloud, a, r, decomposition).E_t for p in paths]
    return counts, log_weights


def excursion_histogram(cloud: PointCloud, a: float, r: float, theta: float, gamma: float, t: float, x0,
                        cfg: PathConfig, n_jobs: int = 1) -> ExcursionHistogram:
    """Distribution of E_t over paths from x0, with the discounted weight mass carried by each count.

    The weight exp(int_0^t theta min(V^(a), m) - gamma ds) uses the base-step
    trapezoid; mass[n] is the sample mean of weight * 1{E_t = n}, divided by
    exp(log_scale) (the largest weight) so heavy discounts do not underflow.
    """
    _check_radii(a, r)
    if len(cloud) == 0:
        raise PreconditionError("Excursion histogram needs a non-empty cloud")
    decomposition = components(cloud, r)
    x0 = np.asarray(x0, dtype=float).ravel()
    sizes = [min(cfg.batch_size, cfg.n_paths - start) for start in range(0, cfg.n_paths, cfg.batch_size)]
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_histogram_batch)(cloud, decomposition, a, r, theta, gamma, t, x0, cfg, size, b)
        for b, size in enumerate(sizes)
    )
    counts = np.concatenate([np.asarray(c, dtype=int) for c, _ in results])
    log_weights = np.concatenate([w for _, w in results])
    top = float(log_weights.max())
    weights = np.exp(log_weights - top)
    histogram_counts, mass = {}, {}
    for n in np.unique(counts):
        members = counts == n
        histogram_counts[int(n)] = int(members.sum())
        mass[int(n)] = math.fsum(weights[members]) / counts.size
    return ExcursionHistogram(histogram_counts, mass, int(counts.size), t, top)


@dataclass
class PathExpansionConstants:
    L: float
    rho: float
    K: float
    c: float
    Lambda: float
    N_r: int
    gamma: float
    constants: CalibratedConstants = field(repr=False)

    @property
    def contracting(self) -> bool:
        return self.rho <= 0.5

    @property
    def sup_bound(self) -> float:
        return 1.0 / (1.0 - self.rho) if self.rho < 1 else math.inf

    def decay_bound(self, R: float, t: float, r: float) -> float:
        """2 K L ((R/r) e^{-c R^2/t} + rho^{R/(4 r N_r)}), valid for R >= 8 r N_r."""
        return 2 * self.K * self.L * ((R / r) * math.exp(-self.c * R * R / t) + self.rho ** (R / (4 * r * self.N_r)))

    def to_dict(self) -> Dict:
        data = {k: v for k, v in asdict(self).items() if k != "constants"}
        data["constants"] = self.constants.to_dict()
        data["contracting"] = self.contracting
        return data


def path_expansion_constants(cloud: PointCloud, theta: float, a: float, r: float, gamma: float,
                             constants: Optional[CalibratedConstants] = None, h: Optional[float] = None,
                             cap: Optional[float] = None, Lambda: Optional[float] = None) -> PathExpansionConstants:
    """L and rho = L exp(-a c_* sqrt(gamma)) for the cloud's r-components."""
    _check_radii(a, r)
    if not 0 < theta <= h_d(cloud.dim) * (1 + 1e-12):
        raise DomainError(f"theta must lie in (0, h_d], got {theta}")
    if len(cloud) == 0:
        raise PreconditionError("Path expansion needs a non-empty cloud")
    constants = constants or CalibratedConstants.analytic(cloud.dim)
    decomposition = components(cloud, r)
    if Lambda is None:
        h = h or r / 12
        Lambda = fill_component_eigenvalues(decomposition, cloud, TruncatedKernel(a, cloud.dim), theta, h,
                                            cap if cap is not None else grid_cap(h))
    if gamma <= Lambda:
        raise IllPosedError(f"gamma={gamma} must exceed Lambda={Lambda:.6g}")
    N = decomposition.N_r
    L = constants.K * N ** 2.5 * (r / a) ** (cloud.dim / 2) * (1 + (gamma + (1 + theta) / r ** 2) / (gamma - Lambda))
    rho = L * math.exp(-a * constants.c_star * math.sqrt(gamma))
    if rho > 0.5:
        logger.warning(f"rho={rho:.4g} exceeds 1/2; the path-expansion bound does not apply")
    return PathExpansionConstants(L, rho, constants.K, constants.c, float(Lambda), N, gamma, constants)


def contracting_gamma(cloud: PointCloud, theta: float, a: float, r: float,
                      constants: Optional[CalibratedConstants] = None, h: Optional[float] = None,
                      cap: Optional[float] = None, max_iterations: int = 50) -> Tuple[float, float]:
    """Smallest gamma of the fixed-point iteration gamma = (log(2L(gamma)) / (a c_*))^2, with Lambda.

    At the returned gamma rho <= 1/2.
    """
    constants = constants or CalibratedConstants.analytic(cloud.dim)
    decomposition = components(cloud, r)
    h = h or r / 12
    Lambda = fill_component_eigenvalues(decomposition, cloud, TruncatedKernel(a, cloud.dim), theta, h,
                                        cap if cap is not None else grid_cap(h))
    gamma = max(Lambda, 0.0) + 1.0
    for _ in range(max_iterations):
        pe = path_expansion_constants(cloud, theta, a, r, gamma, constants, Lambda=Lambda)
        if pe.contracting:
            return gamma, Lambda
        gamma = max(gamma * 1.01, (math.log(2 * pe.L) / (a * constants.c_star)) ** 2)
    raise PreconditionError(f"No contracting gamma found after {max_iterations} iterations")


def boundary_starts(cloud: PointCloud, r: float, n: int, seed: int) -> np.ndarray:
    """Points on the sphere of radius r around random cloud points that lie outside B_r(cloud)."""
    rng = make_rng(seed, 0)
    tree = cKDTree(cloud.points)
    found: List[np.ndarray] = []
    for _ in range(1000):
        centers = cloud.points[rng.integers(len(cloud), size=4 * n)]
        directions = rng.standard_normal((4 * n, cloud.dim))
        candidates = centers + r * (1 + 1e-9) * directions / np.linalg.norm(directions, axis=1, keepdims=True)
        dist, _ = tree.query(candidates)
        found.extend(candidates[dist >= r])
        if len(found) >= n:
            return np.array(found[:n])
    raise PreconditionError("Could not place start points on the boundary of B_r(cloud)")


@dataclass
class PathExpansionVerdict:
    constants: PathExpansionConstants
    sup_estimate: FKEstimate
    decay_rows: List[Dict]

    @property
    def holds(self) -> bool:
        sup_ok = self.sup_estimate.mean <= self.constants.sup_bound + 3 * self.sup_estimate.stderr
        return sup_ok and all(row["holds"] for row in self.decay_rows)

    def to_dict(self) -> Dict:
        return {"constants": self.constants.to_dict(), "sup_estimate": self.sup_estimate.to_dict(),
                "sup_bound": self.constants.sup_bound, "decay_rows": self.decay_rows, "holds": self.holds}


def verify_path_expansion(cloud: PointCloud, theta: float, a: float, r: float, gamma: float, t: float,
                          cfg: PathConfig, n_starts: int = 8, constants: Optional[CalibratedConstants] = None,
                          h: Optional[float] = None, Lambda: Optional[float] = None,
                          n_jobs: int = 1) -> PathExpansionVerdict:
    """Monte-Carlo check of the sup bound 1/(1-rho) and of the far-exit decay over R = 8, 16, 32 r N_r.

    Only meaningful when rho <= 1/2; otherwise a PreconditionError is raised.
    """
    pe = path_expansion_constants(cloud, theta, a, r, gamma, constants, h, Lambda=Lambda)
    if not pe.contracting:
        raise PreconditionError(f"rho={pe.rho:.4g} > 1/2: increase gamma or a")
    steps = cfg.steps_for(t)
    kernel = TruncatedKernel(a, cloud.dim)
    potential = PotentialField(cloud, kernel, theta, cfg.cap, cfg.near_pole_radius)
    starts = boundary_starts(cloud, r, n_starts, cfg.seed)

    best: Optional[FKEstimate] = None
    decay: Dict[float, float] = {}
    decay_err: Dict[float, float] = {}
    for i, z in enumerate(starts):
        batch = run_paths(potential, z, cfg, steps, None, "free", gamma, n_jobs, stream=(i,))
        estimate = estimate_from_log_weights(batch.log_weights, batch.clipped, batch.evaluations)
        if best is None or estimate.mean > best.mean:
            best = estimate
        for multiple in (8, 16, 32):
            R = multiple * r * pe.N_r
            far = run_paths(potential, z, cfg, steps, RegionDescriptor.ball(tuple(z), R), "free", gamma, n_jobs,
                            stream=(i,))
            masked = np.where(far.exited, far.log_weights, -np.inf)
            est = estimate_from_log_weights(masked, far.clipped, far.evaluations)
            if est.mean >= decay.get(R, -1.0):
                decay[R], decay_err[R] = est.mean, est.stderr

    rows = []
    for R in sorted(decay):
        bound = pe.decay_bound(R, t, r)
        rows.append({"R": R, "estimate": decay[R], "stderr": decay_err[R], "bound": bound,
                     "holds": decay[R] <= bound + 3 * decay_err[R]})
    verdict = PathExpansionVerdict(pe, best, rows)
    logger.info(f"Path expansion: sup={best.mean:.6g} bound={pe.sup_bound:.6g} holds={verdict.holds}")
    return verdict
