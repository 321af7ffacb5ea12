"""
Monte-Carlo Feynman-Kac functionals.

Brownian paths are generated in fixed-size batches, batch b drawing from the
stream (seed, b), so estimates do not depend on the worker count. Every base
step draws ``substep_factor`` Gaussian substeps for every path; paths within
``near_pole_radius`` of a pole (or leaving the domain during the step)
integrate the capped potential on the substeps, the others use one
trapezoid over the whole step. Weights are reduced in log space.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.integrate import simpson
from scipy.sparse.linalg import expm_multiply
from scipy.spatial import cKDTree

from bounds_oracles import h_d
from errors import DomainError, IllPosedError, OnPoleError, PreconditionError
from kernels import POLE_TOLERANCE, KernelSpec, TruncatedKernel, capped_potential
from point_process import PointCloud, RegionDescriptor
from spectral import DiscretizedOperator, grid_cap, lambda_max, semigroup_apply
from utils import bernoulli_summary, make_rng

logger = logging.getLogger(__name__)

CAP_DOMINATED_FRACTION = 0.05


@dataclass
class PathConfig:
    dt: float = 1e-3
    near_pole_radius: float = 0.05
    substep_factor: int = 8
    cap: float = 1e4
    n_paths: int = 10000
    seed: int = 0
    batch_size: int = 1000
    max_substeps: int = 1_000_000

    def validate(self) -> List[str]:
        errors = []
        if not self.dt > 0:
            errors.append("dt must be positive")
        if not self.near_pole_radius >= 0:
            errors.append("near_pole_radius must be non-negative")
        if self.substep_factor < 1:
            errors.append("substep_factor must be at least 1")
        if not self.cap > 0:
            errors.append("cap must be positive")
        if self.n_paths < 1:
            errors.append("n_paths must be at least 1")
        if self.batch_size < 1:
            errors.append("batch_size must be at least 1")
        if self.max_substeps < self.substep_factor:
            errors.append("max_substeps must allow at least one step")
        return errors

    def steps_for(self, t: float) -> int:
        """Number of base steps covering [0, t]; dt must divide t."""
        steps = int(round(t / self.dt))
        if steps < 1 or abs(steps * self.dt - t) > 1e-9 * max(t, 1.0):
            raise PreconditionError(f"dt={self.dt} does not divide t={t}")
        return steps

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "PathConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass
class FKEstimate:
    mean: float
    stderr: float
    log_mean: float
    n_effective: float
    clipped_fraction: float
    n_paths: int
    censored_fraction: float = 0.0

    @property
    def cap_dominated(self) -> bool:
        return self.clipped_fraction > CAP_DOMINATED_FRACTION

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["cap_dominated"] = self.cap_dominated
        return data


class PotentialField:
    """theta * min(V, cap) along paths, with the near-pole test used for substepping."""

    def __init__(self, cloud: PointCloud, kernel: Optional[KernelSpec], theta: float, cap: float,
                 near_pole_radius: float):
        self.cloud = cloud
        self.kernel = kernel
        self.theta = theta
        self.cap = cap
        self.near_pole_radius = near_pole_radius
        self._tree = cKDTree(cloud.points) if len(cloud) else None

    def value(self, points: np.ndarray):
        if self._tree is None or self.theta == 0:
            return np.zeros(len(points)), np.zeros(len(points), dtype=bool)
        capped = capped_potential(self.cloud, self.kernel, points, self.cap)
        return self.theta * capped, capped >= self.cap

    def near(self, points: np.ndarray) -> np.ndarray:
        if self._tree is None or self.near_pole_radius <= 0:
            return np.zeros(len(points), dtype=bool)
        dist, _ = self._tree.query(points)
        return dist < self.near_pole_radius

    def check_start(self, x: np.ndarray) -> None:
        if self._tree is not None and self._tree.query(x)[0] < POLE_TOLERANCE:
            raise OnPoleError("Start point lies on a pole")


@dataclass
class PathBatch:
    log_weights: np.ndarray
    exited: np.ndarray
    censored: np.ndarray
    clipped: int
    evaluations: int


def run_batch(potential: PotentialField, x0: np.ndarray, n: int, cfg: PathConfig, rng: np.random.Generator,
              steps: Optional[int], domain=None, mode: str = "free", gamma: float = 0.0) -> PathBatch:
    """Simulate ``n`` paths from ``x0`` and integrate the discounted potential.

    mode "free" ignores ``domain`` (exits are still recorded when one is
    given); "confined" kills paths at their first substep outside; "stopped"
    stops integrating there. ``steps=None`` (stopped mode only) runs until
    every path has exited or exhausted ``cfg.max_substeps``.
    """
    d = x0.size
    S = cfg.substep_factor
    sub_dt = cfg.dt / S
    scale = math.sqrt(sub_dt)
    pos = np.tile(x0, (n, 1))
    q_prev, clip = potential.value(pos)
    clipped, evaluations = int(clip.sum()), n
    logw = np.zeros(n)
    exited = np.zeros(n, dtype=bool)
    censored = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    if domain is not None:
        exited = ~np.asarray(domain.contains(pos))
        if mode == "confined":
            logw[exited] = -np.inf
        if mode in ("confined", "stopped"):
            active &= ~exited

    step = 0
    while active.any():
        if steps is not None and step >= steps:
            break
        if steps is None and (step + 1) * S > cfg.max_substeps:
            censored |= active
            break
        increments = rng.standard_normal((n, S, d)) * scale
        step += 1
        idx = np.flatnonzero(active)
        traj = pos[idx, None, :] + np.cumsum(increments[idx], axis=1)

        first_out = np.full(idx.size, S)
        if domain is not None:
            inside = np.asarray(domain.contains(traj.reshape(-1, d))).reshape(idx.size, S)
            leaving = ~inside.all(axis=1) & ~exited[idx]
            first_out[leaving] = np.argmin(inside[leaving], axis=1)
        else:
            leaving = np.zeros(idx.size, dtype=bool)

        fine = potential.near(pos[idx]) | potential.near(traj[:, -1]) | leaving
        increment = np.zeros(idx.size)
        elapsed = np.full(idx.size, cfg.dt)
        q_end = np.empty(idx.size)

        coarse = ~fine
        if coarse.any():
            q, clip = potential.value(traj[coarse, -1])
            clipped += int(clip.sum())
            evaluations += int(coarse.sum())
            increment[coarse] = 0.5 * cfg.dt * (q_prev[idx[coarse]] + q)
            q_end[coarse] = q
        if fine.any():
            f = int(fine.sum())
            q, clip = potential.value(traj[fine].reshape(-1, d))
            clipped += int(clip.sum())
            evaluations += q.size
            q = q.reshape(f, S)
            left = np.concatenate([q_prev[idx[fine], None], q[:, :-1]], axis=1)
            segments = 0.5 * sub_dt * (left + q)
            if mode in ("stopped", "confined"):
                keep = np.arange(S)[None, :] <= first_out[fine, None]
                segments = np.where(keep, segments, 0.0)
                elapsed[fine] = sub_dt * keep.sum(axis=1)
            increment[fine] = segments.sum(axis=1)
            q_end[fine] = q[:, -1]

        logw[idx] += increment - gamma * elapsed
        pos[idx] = traj[:, -1]
        q_prev[idx] = q_end
        if domain is not None:
            newly = leaving
            exited[idx[newly]] = True
            if mode == "confined":
                logw[idx[newly]] = -np.inf
            if mode in ("confined", "stopped"):
                active[idx[newly]] = False

    return PathBatch(logw, exited, censored, clipped, evaluations)


def run_paths(potential: PotentialField, x0, cfg: PathConfig, steps: Optional[int], domain=None,
              mode: str = "free", gamma: float = 0.0, n_jobs: int = 1, stream: Sequence[int] = ()) -> PathBatch:
    """All ``cfg.n_paths`` paths, batch b on stream (seed, *stream, b), concatenated in batch order."""
    problems = cfg.validate()
    if problems:
        raise PreconditionError("Invalid path configuration: " + "; ".join(problems))
    x0 = np.asarray(x0, dtype=float).ravel()
    potential.check_start(x0)
    sizes = [min(cfg.batch_size, cfg.n_paths - start) for start in range(0, cfg.n_paths, cfg.batch_size)]
    batches = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(run_batch)(potential, x0, size, cfg, make_rng(cfg.seed, *stream, b), steps, domain, mode, gamma)
        for b, size in enumerate(sizes)
    )
    return PathBatch(
        np.concatenate([b.log_weights for b in batches]),
        np.concatenate([b.exited for b in batches]),
        np.concatenate([b.censored for b in batches]),
        sum(b.clipped for b in batches),
        sum(b.evaluations for b in batches),
    )


def estimate_from_log_weights(log_weights: np.ndarray, clipped: int = 0, evaluations: int = 1,
                              censored: Optional[np.ndarray] = None) -> FKEstimate:
    """Mean and standard error of exp(log_weights), scaled by the largest finite weight."""
    n = log_weights.size
    finite = np.isfinite(log_weights)
    clipped_fraction = clipped / max(evaluations, 1)
    censored_fraction = float(np.mean(censored)) if censored is not None and n else 0.0
    if not finite.any():
        return FKEstimate(0.0, 0.0, -math.inf, 0.0, clipped_fraction, n, censored_fraction)
    top = float(log_weights[finite].max())
    scaled = np.where(finite, np.exp(np.where(finite, log_weights, top) - top), 0.0)
    total = math.fsum(scaled)
    mean_scaled = total / n
    variance = math.fsum((scaled - mean_scaled) ** 2) / (n - 1) if n > 1 else 0.0
    factor = math.exp(top)
    estimate = FKEstimate(
        mean=factor * mean_scaled,
        stderr=factor * math.sqrt(variance / n),
        log_mean=top + math.log(mean_scaled),
        n_effective=total ** 2 / math.fsum(scaled ** 2),
        clipped_fraction=clipped_fraction,
        n_paths=n,
        censored_fraction=censored_fraction,
    )
    if estimate.cap_dominated:
        logger.warning(f"Cap-dominated estimate: {clipped_fraction:.2%} of evaluations hit the cap")
    if censored_fraction > 0:
        logger.warning(f"{censored_fraction:.2%} of paths exhausted the substep budget")
    return estimate


def _summarise(batch: PathBatch) -> FKEstimate:
    return estimate_from_log_weights(batch.log_weights, batch.clipped, batch.evaluations, batch.censored)


def simulate_fk(cloud: PointCloud, kernel: KernelSpec, theta: float, t: float, x, cfg: PathConfig,
                confinement=None, stop_on_exit: bool = False, gamma: float = 0.0, n_jobs: int = 1) -> FKEstimate:
    """E_x[exp(int_0^t (theta min(V, m) - gamma) ds)], optionally confined to (or stopped at the exit of) a region."""
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta}")
    if not isinstance(kernel, TruncatedKernel) and theta > h_d(cloud.dim) / 2 * (1 + 1e-12):
        raise DomainError(f"theta must lie in (0, h_d/2] for this kernel, got {theta}")
    steps = cfg.steps_for(t)
    potential = PotentialField(cloud, kernel, theta, cfg.cap, cfg.near_pole_radius)
    mode = "free" if confinement is None else ("stopped" if stop_on_exit else "confined")
    batch = run_paths(potential, x, cfg, steps, confinement, mode, gamma, n_jobs)
    estimate = _summarise(batch)
    logger.info(f"FK estimate mean={estimate.mean:.6g} stderr={estimate.stderr:.3g} paths={cfg.n_paths}")
    return estimate


def _default_grid_step(domain) -> float:
    lo, hi = domain.bounds()
    return float(np.min(np.asarray(hi) - np.asarray(lo))) / 24.0


def stopped_lambda_estimate(cloud: PointCloud, kernel: KernelSpec, theta: float, domain, cfg: PathConfig,
                            h: Optional[float] = None) -> float:
    h = h or _default_grid_step(domain)
    return lambda_max(domain, cloud, kernel, theta, h, min(cfg.cap, grid_cap(h))).lambda_


def simulate_stopped_fk(cloud: PointCloud, kernel: KernelSpec, theta: float, gamma: float, domain, x,
                        cfg: PathConfig, lambda_estimate: Optional[float] = None, h: Optional[float] = None,
                        n_jobs: int = 1, stream: Sequence[int] = ()) -> FKEstimate:
    """E_x[exp(int_0^tau (theta min(V, m) - gamma) ds)], tau the first substep outside ``domain``."""
    x = np.asarray(x, dtype=float).ravel()
    if not bool(np.asarray(domain.contains(x))[0]):
        raise PreconditionError("Start point must lie inside the domain")
    lam = lambda_estimate if lambda_estimate is not None else stopped_lambda_estimate(cloud, kernel, theta, domain, cfg, h)
    if gamma <= lam:
        raise IllPosedError(f"gamma={gamma} must exceed lambda_max={lam:.6g}")
    potential = PotentialField(cloud, kernel, theta, cfg.cap, cfg.near_pole_radius)
    batch = run_paths(potential, x, cfg, None, domain, "stopped", gamma, n_jobs, stream)
    return _summarise(batch)


def stopped_closed_form(R: float, gamma: float, distance: float = 0.0) -> float:
    """E_x e^{-gamma tau} for 3-d Brownian motion leaving B_R from |x| = distance."""
    s = math.sqrt(2.0 * gamma)
    if distance == 0.0:
        return s * R / math.sinh(s * R)
    return R * math.sinh(s * distance) / (distance * math.sinh(s * R))


def _volume(domain, seed: int = 0) -> float:
    return float(domain.volume) if hasattr(domain, "volume") else domain.volume_estimate(seed=seed)


def _boundary_distance(domain, cloud: PointCloud) -> float:
    if len(cloud) == 0:
        return math.inf
    distance = float(np.min(domain.distance_to_boundary(cloud.points)))
    if distance <= 0:
        raise PreconditionError("All cloud points must lie inside the domain")
    return distance


@dataclass
class L1Verdict:
    lhs: float
    stderr: float
    rhs: float
    starts: int
    lambda_: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 3 * self.stderr

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["holds"] = self.holds
        return data


def l1_bound_check(cloud: PointCloud, kernel: KernelSpec, theta: float, gamma: float, domain,
                   start_region: RegionDescriptor, cfg: PathConfig, grid_per_axis: int = 4, c: float = 1.0,
                   lambda_estimate: Optional[float] = None, h: Optional[float] = None,
                   n_jobs: int = 1) -> L1Verdict:
    """int_{D'} E_x[...] dx <= |D'| + c sqrt(|D||D' n D|) (gamma + (M^2 + theta) dist^-2)/(gamma - lambda).

    The left side is a midpoint rule over a grid of starts in D'; starts
    outside D contribute exactly 1.
    """
    lam = lambda_estimate if lambda_estimate is not None else stopped_lambda_estimate(cloud, kernel, theta, domain, cfg, h)
    if gamma <= lam:
        raise IllPosedError(f"gamma={gamma} must exceed lambda_max={lam:.6g}")
    lo, hi = start_region.bounds()
    width = (np.asarray(hi) - np.asarray(lo)) / grid_per_axis
    axes = [l + (np.arange(grid_per_axis) + 0.5) * w for l, w in zip(lo, width)]
    starts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, start_region.dim)
    starts = starts[start_region.contains(starts)]
    if len(starts) == 0:
        raise PreconditionError("No start point of the grid lies in the start region")

    values, variances = [], []
    for i, x in enumerate(starts):
        if not bool(np.asarray(domain.contains(x))[0]):
            values.append(1.0)
            variances.append(0.0)
            continue
        estimate = simulate_stopped_fk(cloud, kernel, theta, gamma, domain, x, cfg, lam, n_jobs=n_jobs, stream=(i,))
        values.append(estimate.mean)
        variances.append(estimate.stderr ** 2)

    volume_start = start_region.volume
    cell = volume_start / len(starts)
    lhs = cell * math.fsum(values)
    stderr = cell * math.sqrt(math.fsum(variances))

    rng = make_rng(cfg.seed, len(starts), 1)
    samples = start_region.sample_uniform(20000, rng)
    overlap = volume_start * float(np.mean(domain.contains(samples)))
    distance = _boundary_distance(domain, cloud)
    M = len(cloud)
    attraction = 0.0 if math.isinf(distance) else (M * M + theta) / distance ** 2
    rhs = volume_start + c * math.sqrt(_volume(domain) * overlap) * (gamma + attraction) / (gamma - lam)
    return L1Verdict(lhs, stderr, rhs, len(starts), lam)


@dataclass
class CalibratedConstants:
    K_star: float
    c_star: float
    K_1: float
    source: str = "analytic"

    @classmethod
    def analytic(cls, d: int) -> "CalibratedConstants":
        # P(sup|W| > R) <= 2d exp(-R^2 / (2 d t)) by a union bound over coordinates.
        return cls(2.0 * d, 1.0 / (4.0 * d), 1.0, "analytic")

    @property
    def K(self) -> float:
        return 2.0 * self.K_star ** 2 * self.K_1

    @property
    def c(self) -> float:
        return self.c_star / 16.0

    def to_dict(self) -> Dict:
        return {"K_star": self.K_star, "c_star": self.c_star, "K_1": self.K_1, "source": self.source,
                "note": "numerical surrogates, not closed-form constants"}

    @classmethod
    def from_dict(cls, data: Dict) -> "CalibratedConstants":
        return cls(float(data["K_star"]), float(data["c_star"]), float(data["K_1"]), data.get("source", "manifest"))


def brownian_paths(x0: np.ndarray, n: int, steps: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """(n, steps + 1, d) discretized Brownian trajectories started at x0."""
    x0 = np.asarray(x0, dtype=float).ravel()
    increments = rng.standard_normal((n, steps, x0.size)) * math.sqrt(dt)
    paths = np.empty((n, steps + 1, x0.size))
    paths[:, 0] = x0
    np.cumsum(increments, axis=1, out=paths[:, 1:])
    paths[:, 1:] += x0
    return paths


def _sup_norm_exceeds(t: float, R: float, d: int, n_paths: int, seed: int, dt: float, batch: int = 2000) -> List[bool]:
    steps = max(1, int(round(t / dt)))
    hits = []
    for b, start in enumerate(range(0, n_paths, batch)):
        size = min(batch, n_paths - start)
        paths = brownian_paths(np.zeros(d), size, steps, t / steps, make_rng(seed, b))
        hits.extend(np.linalg.norm(paths[:, 1:], axis=2).max(axis=1) > R)
    return hits


def sup_abs_tail_1d(t: float, R: float, terms: int = 200) -> float:
    """P(sup_{s<=t} |W_s| > R) for one-dimensional Brownian motion (series for the strip exit)."""
    if R <= 0:
        return 1.0
    k = np.arange(terms)
    series = (-1.0) ** k / (2 * k + 1) * np.exp(-((2 * k + 1) ** 2) * math.pi ** 2 * t / (8 * R * R))
    stay = 4.0 / math.pi * math.fsum(series)
    return float(min(1.0, max(0.0, 1.0 - stay)))


@dataclass
class TailCheck:
    empirical: float
    stderr: float
    bound: float
    oracle: Optional[float] = None

    @property
    def holds(self) -> bool:
        return self.empirical <= self.bound + 3 * self.stderr

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["holds"] = self.holds
        return data


def brownian_tail_check(t: float, R: float, d: int, n_paths: int, seed: int,
                        constants: Optional[CalibratedConstants] = None, dt: float = 1e-3) -> TailCheck:
    """Empirical P(sup_{s<=t} |W_s| > R) against K_* exp(-c_* R^2 / t)."""

    constants = constants or CalibratedConstants.analytic(d)
    hits = _sup_norm_exceeds(t, R, d, n_paths, seed, dt)
    p, stderr = bernoulli_summary(hits)
    bound = constants.K_star * math.exp(-constants.c_star * R * R / t)
    oracle = sup_abs_tail_1d(t, R) if d == 1 else None
    return TailCheck(p, stderr, bound, oracle)


def exit_laplace_check(a: float, u: float, d: int, n_paths: int, seed: int,
                       constants: Optional[CalibratedConstants] = None, dt: float = 1e-4,
                       n_jobs: int = 1) -> TailCheck:
    """E_0 exp(-u tau_a) against K_* exp(-c_* a sqrt(u)); the d = 3 oracle is x / sinh x, x = a sqrt(2u)."""
    constants = constants or CalibratedConstants.analytic(d)
    cfg = PathConfig(dt=dt, near_pole_radius=0.0, substep_factor=1, cap=1.0, n_paths=n_paths, seed=seed)
    potential = PotentialField(PointCloud.empty(d), None, 0.0, 1.0, 0.0)
    batch = run_paths(potential, np.zeros(d), cfg, None, RegionDescriptor.ball((0.0,) * d, a), "stopped", u, n_jobs)
    estimate = _summarise(batch)
    bound = constants.K_star * math.exp(-constants.c_star * a * math.sqrt(u))
    oracle = stopped_closed_form(a, u) if d == 3 else None
    return TailCheck(estimate.mean, estimate.stderr, bound, oracle)


def calibrate_constants(d: int, seed: int, n_paths: int = 20000, include_k1: bool = True,
                        c_star: Optional[float] = None) -> CalibratedConstants:
    """Smallest K_* making the tail and exit bounds hold with 3 sigma slack over two decades, then K_1."""
    c_star = c_star if c_star is not None else 1.0 / (4.0 * d)
    K_star = 1.0
    for i, ratio in enumerate(np.geomspace(0.3, 3.0, 5)):
        check = brownian_tail_check(1.0, float(ratio), d, n_paths, seed + i, CalibratedConstants(1.0, c_star, 1.0), dt=1e-2)
        K_star = max(K_star, (check.empirical + 3 * check.stderr) / math.exp(-c_star * ratio ** 2))
    for i, u in enumerate(np.geomspace(0.1, 10.0, 5)):
        check = exit_laplace_check(1.0, float(u), d, max(n_paths // 10, 200), seed + 100 + i,
                                   CalibratedConstants(1.0, c_star, 1.0), dt=1e-3)
        K_star = max(K_star, (check.empirical + 3 * check.stderr) / math.exp(-c_star * math.sqrt(u)))
    K_1 = _calibrate_k1(d, seed, max(n_paths // 10, 200), K_star, c_star) if include_k1 else 1.0
    constants = CalibratedConstants(float(K_star), c_star, float(K_1), f"calibrated:d={d},seed={seed}")
    logger.info(f"Calibrated constants: {constants.to_dict()}")
    return constants


def _calibrate_k1(d: int, seed: int, n_paths: int, K_star: float, c_star: float) -> float:
    """Stopped functionals on a one-point component against N^{5/2} (r/a)^{d/2} (1 + (gamma + (1+theta) r^-2)/(gamma - lambda_C))."""
    r, a = 1.0, 0.125
    theta = h_d(d) / 2
    cloud = PointCloud.manual(np.zeros((1, d)))
    domain = RegionDescriptor.ball((0.0,) * d, r)
    kernel = TruncatedKernel(a, d)
    cfg = PathConfig(dt=1e-3, near_pole_radius=0.05, substep_factor=8, cap=1e3, n_paths=n_paths, seed=seed)
    lam = stopped_lambda_estimate(cloud, kernel, theta, domain, cfg, h=r / 12)
    K_1 = 1.0
    for i, gamma in enumerate([max(lam, 0.0) + 1.0, max(lam, 0.0) + 10.0]):
        x = np.zeros(d)
        x[0] = 2.5 * a
        estimate = simulate_stopped_fk(cloud, kernel, theta, gamma, domain, x, cfg, lam, stream=(i,))
        envelope = (r / a) ** (d / 2) * (1 + (gamma + (1 + theta) / r ** 2) / (gamma - lam))
        K_1 = max(K_1, (estimate.mean + 3 * estimate.stderr) / envelope)
    return K_1


@dataclass
class MildResidual:
    max_abs: float
    relative: float
    n_time: int


def mild_solution_residual(op: DiscretizedOperator, t: float, n_time: int = 256,
                           u0: Optional[np.ndarray] = None) -> MildResidual:
    """max |u(t) - P_t u0 - int_0^t P_{t-s}(q u(s)) ds| for u(s) = e^{sA} u0 on the grid.

    P is the heat semigroup of the same grid (Laplacian part of A); the time
    integral uses Simpson's rule on n_time intervals.
    """
    if n_time < 2 or n_time % 2:
        raise PreconditionError(f"n_time must be even and at least 2, got {n_time}")
    u0 = np.ones(op.n_interior) if u0 is None else np.asarray(u0, dtype=float)
    A = op.matrix
    heat = op.laplacian
    times = np.linspace(0.0, t, n_time + 1)
    u = _trajectory(A, u0, t, n_time)
    integrand = np.stack([_heat_apply(heat, op.potential * u[j], t - s) for j, s in enumerate(times)])
    duhamel = simpson(integrand, x=times, axis=0)
    residual = u[-1] - _heat_apply(heat, u0, t) - duhamel
    max_abs = float(np.max(np.abs(residual)))
    return MildResidual(max_abs, max_abs / max(float(np.max(np.abs(u[-1]))), 1e-300), n_time)


def _trajectory(A, f: np.ndarray, t: float, n_time: int) -> np.ndarray:
    return expm_multiply(A, f, start=0.0, stop=t, num=n_time + 1, endpoint=True)


def _heat_apply(heat, f: np.ndarray, s: float) -> np.ndarray:
    if s <= 0:
        return np.array(f, dtype=float)
    return expm_multiply(s * heat, f)


def grid_fk_value(op: DiscretizedOperator, t: float, x) -> float:
    """Grid semigroup e^{tA} 1 interpolated at x: the time-dependent FK oracle."""
    return float(op.interpolate(semigroup_apply(op, np.ones(op.n_interior), t), x)[0])
