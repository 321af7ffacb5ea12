"""
Acceptance battery.

Each check returns ``(passed, detail)``; the runner times it, maps typed lab
errors to ERROR and records checks outside the chosen profile as SKIPPED.
The quick profile uses reduced sizes and is meant for a laptop; the full
profile runs every oracle at the sizes the bounds are stated for.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from bounds_oracles import ScaleParams, c_inf, c_inf_numeric, eigen_tail_frequency, h_d, k_theta
from cloud_geometry import gamma as connectivity_radius
from errors import LabError
from excursions import contracting_gamma, excursion_histogram, verify_path_expansion
from feynman_kac import (PathConfig, brownian_tail_check, exit_laplace_check, grid_fk_value, mild_solution_residual,
                         simulate_fk, simulate_stopped_fk, stopped_closed_form)
from hardy import (f_eta_sup, key_lower_bound_constants, multipolar_check, partition_of_unity_check,
                   partition_samples, random_multipolar_cloud, single_pole_criticality)
from kernels import SmoothAttenuatedKernel, TruncatedKernel
from point_process import PointCloud, RegionDescriptor, default_sweep, verify_bound
from spectral import (build_operator, cloud_potential_fn, monotonicity_check, principal_eigen, richardson,
                      semigroup_resolvent_check, solve_dirichlet_problem)
from utils import json_encoder, make_rng

logger = logging.getLogger(__name__)

PROFILES = ("quick", "full")
CheckFn = Callable[[str, int, int], Tuple[bool, Dict]]


class CheckStatus(Enum):
    PASSED = "passed"
    FAILED = "failed"
    ERROR = "error"
    SKIPPED = "skipped"


@dataclass
class CheckResult:
    name: str
    status: CheckStatus
    detail: Dict = field(default_factory=dict)
    runtime: float = 0.0

    def to_dict(self) -> Dict:
        return {"name": self.name, "status": self.status.value, "detail": self.detail, "runtime": self.runtime}


@dataclass
class SuiteCheck:
    name: str
    run: CheckFn
    profiles: Tuple[str, ...] = PROFILES


def _sizes(profile: str, quick, full):
    return quick if profile == "quick" else full


def check_empty_potential(profile: str, seed: int, n_jobs: int):
    cfg = PathConfig(n_paths=_sizes(profile, 1000, 10000), seed=seed)
    estimate = simulate_fk(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.1, 0.1, np.zeros(3), cfg, n_jobs=n_jobs)
    return estimate.mean == 1.0 and estimate.stderr == 0.0, estimate.to_dict()


def check_spectral_ground_truth(profile: str, seed: int, n_jobs: int):
    exact = -math.pi ** 2 / 2
    ball = RegionDescriptor.ball((0.0, 0.0, 0.0), 1.0)
    if profile == "quick":
        lam = principal_eigen(build_operator(ball, 1.0 / 32), keep_vector=False).lambda_
        error = abs(lam - exact) / abs(exact)
        return error < 0.05, {"h": 1.0 / 32, "lambda": lam, "exact": exact, "relative_error": error}
    coarse = principal_eigen(build_operator(ball, 1.0 / 32), keep_vector=False).lambda_
    fine = principal_eigen(build_operator(ball, 1.0 / 64), keep_vector=False).lambda_
    extrapolated = richardson(coarse, fine)
    error = abs(fine - exact) / abs(exact)
    error_rich = abs(extrapolated - exact) / abs(exact)
    return error < 0.02 and error_rich < 0.005, {"lambda_h32": coarse, "lambda_h64": fine, "richardson": extrapolated,
                                                 "relative_error": error, "richardson_error": error_rich}


def check_monotonicity(profile: str, seed: int, n_jobs: int):
    pairs = _sizes(profile, 5, 50)
    h = 0.1
    violations, rows = 0, []
    for i in range(pairs):
        rng = make_rng(seed, i)
        large = RegionDescriptor.ball((0.0, 0.0, 0.0), 1.0)
        small = RegionDescriptor.ball((0.0, 0.0, 0.0), float(rng.uniform(0.5, 0.95)))
        cloud = PointCloud.manual(large.sample_uniform(3, rng))
        theta = float(rng.uniform(0.01, 0.1))
        extra = float(rng.uniform(0.0, 0.05))
        kernel = TruncatedKernel(0.5, 3)
        big = build_operator(large, h, cloud_potential_fn(cloud, kernel, theta + extra, 100.0, h))
        little = build_operator(small, h, cloud_potential_fn(cloud, kernel, theta, 100.0, h), axes=big.axes)
        verdict = monotonicity_check(little, big)
        violations += not verdict.holds
        rows.append(verdict.to_dict())
    return violations == 0, {"pairs": pairs, "violations": violations, "rows": rows}


def check_semigroup(profile: str, seed: int, n_jobs: int):
    cloud = PointCloud.manual([[0.2, 0.0, 0.0], [-0.2, 0.0, 0.0]])
    op = build_operator(RegionDescriptor.ball((0.0, 0.0, 0.0), 1.0), 0.2,
                        cloud_potential_fn(cloud, TruncatedKernel(0.5, 3), 0.1, 50.0, 0.2))
    result = semigroup_resolvent_check(op, gamma=10.0, t_list=[0.1, 0.5, 1.0], seed=seed)
    return result.holds, result.to_dict()


def check_multipolar(profile: str, seed: int, n_jobs: int):
    clouds = _sizes(profile, 2, 25)
    h = _sizes(profile, 0.25, 0.125)
    violations, rows = 0, []
    for M in (2, 3):
        for i in range(clouds):
            cloud, theta = random_multipolar_cloud(M, 3, seed, 1000 * M + i)
            verdict = multipolar_check(cloud, theta, h, refine=(profile == "full"))
            violations += not verdict.holds
            rows.append(dict(verdict.to_row(), M=M))
    return violations == 0, {"violations": violations, "rows": rows}


def check_f_eta(profile: str, seed: int, n_jobs: int):
    if profile == "quick":
        plan = [(N, 50) for N in (1, 2, 3)]
    else:
        plan = [(N, 200) for N in (1, 2, 3)] + [(N, 40) for N in (4, 5)]
    rows = [f_eta_sup(N, G).to_row() for N, G in plan]
    return all(r["pass"] for r in rows), {"rows": rows}


def check_partition_of_unity(profile: str, seed: int, n_jobs: int):
    rows = []
    for i in range(_sizes(profile, 2, 10)):
        cloud = PointCloud.manual(RegionDescriptor.ball((0.0, 0.0, 0.0), 1.0).sample_uniform(3, make_rng(seed, 50 + i)))
        r = 0.9 * connectivity_radius(cloud)
        rows.append(partition_of_unity_check(cloud, r, partition_samples(cloud, r, 2000, seed + i)).to_row())
    return all(r["pass"] for r in rows), {"rows": rows}


def check_criticality(profile: str, seed: int, n_jobs: int):
    hd = h_d(3)
    critical = single_pole_criticality(hd, [1e3, 1e4])
    super_critical = single_pole_criticality(1.5 * hd, [1e3, 1e4])
    passed = critical.relative_change < 0.05 and super_critical.relative_change > 0.5
    return passed, {"critical": critical.to_dict(), "supercritical": super_critical.to_dict()}


def check_key_lower_bound(profile: str, seed: int, n_jobs: int):
    result = key_lower_bound_constants(3, 2, h_d(3))
    return result.c2 > 0 and result.lambda_tilde > 0, result.to_dict()


def check_poisson_bounds(profile: str, seed: int, n_jobs: int):
    trials = {"chain": 2000, "maxcount": 1000, "cluster": 200, "nocluster": 500} if profile == "quick" else None
    rows, violations = [], 0
    for lemma in ("chain", "maxcount", "cluster", "nocluster"):
        for params in default_sweep(lemma):
            check = verify_bound(params, trials[lemma] if trials else 100000, seed, n_jobs)
            violations += not check.passed
            rows.append(check.to_row())
    return violations == 0, {"violations": violations, "rows": rows}


def _fk_grid_problem():
    cloud = PointCloud.manual([[0.3, 0.0, 0.0], [-0.3, 0.2, 0.0], [0.0, -0.4, 0.3]])
    kernel = SmoothAttenuatedKernel(1.0, 4.0, 3)
    theta, cap = 1.0 / 16, 8.0
    # h = 0.375 on the box of half width 3 leaves 15 interior nodes per axis
    h = 0.375
    op = build_operator(RegionDescriptor.box((0.0, 0.0, 0.0), 3.0), h, cloud_potential_fn(cloud, kernel, theta, cap, h))
    return cloud, kernel, theta, cap, op


def fk_dt_halving(cloud, kernel, theta: float, t: float, x, cfg: PathConfig, n_jobs: int = 1):
    """Estimates at dt and dt/2 and whether they agree within three combined stderrs."""
    coarse = simulate_fk(cloud, kernel, theta, t, x, cfg, n_jobs=n_jobs)
    fine = simulate_fk(cloud, kernel, theta, t, x, replace(cfg, dt=cfg.dt / 2), n_jobs=n_jobs)
    gap = abs(fine.mean - coarse.mean)
    return coarse, fine, gap <= 3 * math.hypot(coarse.stderr, fine.stderr)


def check_fk_grid(profile: str, seed: int, n_jobs: int):
    cloud, kernel, theta, cap, op = _fk_grid_problem()
    t = 0.5
    x = np.array([0.0, 0.0, 0.0])
    cfg = PathConfig(dt=_sizes(profile, 1e-2, 2e-3), cap=cap, n_paths=_sizes(profile, 5000, 100000), seed=seed)
    coarse, estimate, converged = fk_dt_halving(cloud, kernel, theta, t, x, cfg, n_jobs)
    detail = {"mc_dt": coarse.to_dict(), "mc_half_dt": estimate.to_dict(), "dt": cfg.dt, "dt_converged": converged}
    if not converged:
        return False, detail
    reference = grid_fk_value(op, t, x)
    residual = mild_solution_residual(op, t)
    gap = abs(estimate.mean - reference)
    passed = gap <= 3 * estimate.stderr + 0.01 * reference and residual.relative < 5e-3
    return passed, dict(detail, grid=reference, gap=gap, mild_residual=residual.relative)


def check_stopped_closed_form(profile: str, seed: int, n_jobs: int):
    gamma_ = 2.0
    cfg = PathConfig(n_paths=_sizes(profile, 4000, 40000), seed=seed)
    ball = RegionDescriptor.ball((0.0, 0.0, 0.0), 1.0)
    estimate = simulate_stopped_fk(PointCloud.empty(3), TruncatedKernel(1.0, 3), 0.1, gamma_, ball, np.zeros(3), cfg,
                                   lambda_estimate=-math.pi ** 2 / 2, n_jobs=n_jobs)
    exact = stopped_closed_form(1.0, gamma_)
    gap = abs(estimate.mean - exact)
    return gap <= 3 * estimate.stderr + 0.01 * exact, {"mc": estimate.to_dict(), "exact": exact, "gap": gap}


def check_stopped_grid(profile: str, seed: int, n_jobs: int):
    configs = _sizes(profile, 2, 10)
    rows, violations = [], 0
    ball = RegionDescriptor.ball((0.0, 0.0, 0.0), 1.0)
    kernel = TruncatedKernel(0.5, 3)
    theta, cap = h_d(3) / 2, 20.0
    for i in range(configs):
        rng = make_rng(seed, 200 + i)
        cloud = PointCloud.manual(RegionDescriptor.ball((0.0, 0.0, 0.0), 0.6).sample_uniform(2, rng))
        coarse = build_operator(ball, 1.0 / 12, cloud_potential_fn(cloud, kernel, theta, cap, 1.0 / 12))
        fine = build_operator(ball, 1.0 / 24, cloud_potential_fn(cloud, kernel, theta, cap, 1.0 / 24))
        lam = principal_eigen(fine, keep_vector=False).lambda_
        gamma_ = max(2 * lam, lam + 1.0, 1.0)
        x = RegionDescriptor.ball((0.0, 0.0, 0.0), 0.5).sample_uniform(1, rng)[0]
        u_coarse = float(coarse.interpolate(solve_dirichlet_problem(coarse, gamma_), x)[0])
        u_fine = float(fine.interpolate(solve_dirichlet_problem(fine, gamma_), x)[0])
        cfg = PathConfig(cap=cap, n_paths=_sizes(profile, 2000, 20000), seed=seed)
        estimate = simulate_stopped_fk(cloud, kernel, theta, gamma_, ball, x, cfg, lambda_estimate=lam,
                                       n_jobs=n_jobs, stream=(i,))
        slack = 3 * estimate.stderr + abs(u_fine - u_coarse)
        ok = abs(estimate.mean - u_fine) <= slack
        violations += not ok
        rows.append({"gamma": gamma_, "lambda": lam, "mc": estimate.mean, "stderr": estimate.stderr,
                     "grid": u_fine, "grid_coarse": u_coarse, "pass": ok})
    return violations == 0, {"violations": violations, "rows": rows}


def check_path_expansion(profile: str, seed: int, n_jobs: int):
    cloud = PointCloud.manual([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    theta, a, r = h_d(3) / 2, 1.0, 5.0
    gamma_, Lambda = contracting_gamma(cloud, theta, a, r)
    t = 0.05
    cfg = PathConfig(dt=1e-3, n_paths=_sizes(profile, 500, 5000), seed=seed, batch_size=500)
    verdict = verify_path_expansion(cloud, theta, a, r, gamma_, t, cfg, n_starts=_sizes(profile, 4, 20),
                                    Lambda=Lambda, n_jobs=n_jobs)
    histogram = excursion_histogram(cloud, a, r, theta, gamma_, t, [0.0, 5.0, 0.0], cfg, n_jobs)
    max_ratio = histogram.max_ratio()
    geometric = max_ratio is None or max_ratio <= verdict.constants.rho + 0.1
    return verdict.holds and geometric, {"path_expansion": verdict.to_dict(), "histogram": histogram.to_dict()}


def check_brownian_tails(profile: str, seed: int, n_jobs: int):
    n = _sizes(profile, 5000, 50000)
    one_d = brownian_tail_check(1.0, 1.5, 1, n, seed, dt=1e-3)
    three_d = brownian_tail_check(1.0, 2.0, 3, n, seed + 1, dt=1e-3)
    exit_ = exit_laplace_check(0.5, 4.0, 3, _sizes(profile, 2000, 20000), seed + 2, n_jobs=n_jobs)
    oracle_gap = abs(one_d.empirical - one_d.oracle)
    exit_gap = abs(exit_.empirical - exit_.oracle)
    passed = (one_d.holds and three_d.holds and exit_.holds and oracle_gap <= 3 * one_d.stderr + 0.02
              and exit_gap <= 3 * exit_.stderr + 0.02)
    return passed, {"tail_1d": one_d.to_dict(), "tail_3d": three_d.to_dict(), "exit_3d": exit_.to_dict()}


def check_constants(profile: str, seed: int, n_jobs: int):
    params = ScaleParams.from_values(3, 1.0 / 16)
    pairs = [(3, 1 / 16), (3, 0.05), (3, 0.04), (3, 0.03), (4, 0.25), (4, 0.2), (4, 0.1), (5, 0.5), (5, 0.4), (6, 0.9)]
    rows = []
    for d, theta in pairs:
        closed, numeric = c_inf(d, theta, 1.0), c_inf_numeric(d, theta, 1.0)
        rows.append({"d": d, "theta": theta, "k": k_theta(d, theta), "closed": closed, "numeric": numeric,
                     "pass": abs(closed - numeric) <= 1e-6})
    passed = params.k == 2 and params.exponent == 3 and all(r["pass"] for r in rows)
    return passed, {"k": params.k, "exponent": params.exponent, "rows": rows}


def check_eigen_tail(profile: str, seed: int, n_jobs: int):
    result = eigen_tail_frequency(3.0, 0.5, 30.0, 1.0 / 16, 3, 200, seed, n_jobs=n_jobs)
    return result.passed, result.__dict__


def check_determinism(profile: str, seed: int, n_jobs: int):
    cloud = PointCloud.manual([[0.5, 0.0, 0.0]])
    cfg = PathConfig(n_paths=2000, batch_size=250, seed=seed)
    kernel = TruncatedKernel(1.0, 3)
    serial = simulate_fk(cloud, kernel, 0.1, 0.1, np.zeros(3), cfg, n_jobs=1)
    threaded = simulate_fk(cloud, kernel, 0.1, 0.1, np.zeros(3), cfg, n_jobs=max(2, n_jobs))
    params = default_sweep("chain")[0]
    first, second = verify_bound(params, 200, seed, 1), verify_bound(params, 200, seed, max(2, n_jobs))
    passed = serial.to_dict() == threaded.to_dict() and first.empirical == second.empirical
    return passed, {"fk_serial": serial.mean, "fk_threaded": threaded.mean,
                    "bound_first": first.empirical, "bound_second": second.empirical}


CHECKS: List[SuiteCheck] = [
    SuiteCheck("empty_potential_fk", check_empty_potential),
    SuiteCheck("constants", check_constants),
    SuiteCheck("determinism", check_determinism),
    SuiteCheck("spectral_ground_truth", check_spectral_ground_truth),
    SuiteCheck("monotonicity", check_monotonicity),
    SuiteCheck("semigroup_resolvent", check_semigroup),
    SuiteCheck("multipolar_hardy", check_multipolar),
    SuiteCheck("f_eta", check_f_eta),
    SuiteCheck("partition_of_unity", check_partition_of_unity),
    SuiteCheck("single_pole_criticality", check_criticality),
    SuiteCheck("key_lower_bound", check_key_lower_bound, ("full",)),
    SuiteCheck("poisson_bounds", check_poisson_bounds),
    SuiteCheck("fk_grid", check_fk_grid),
    SuiteCheck("stopped_closed_form", check_stopped_closed_form),
    SuiteCheck("stopped_grid", check_stopped_grid),
    SuiteCheck("brownian_tails", check_brownian_tails),
    SuiteCheck("path_expansion", check_path_expansion),
    SuiteCheck("eigen_tail", check_eigen_tail, ("full",)),
]


@dataclass
class SuiteReport:
    profile: str
    seed: int
    results: List[CheckResult]

    @property
    def counts(self) -> Dict[str, int]:
        return {status.value: sum(r.status is status for r in self.results) for status in CheckStatus}

    @property
    def pass_rate(self) -> float:
        ran = [r for r in self.results if r.status is not CheckStatus.SKIPPED]
        return sum(r.status is CheckStatus.PASSED for r in ran) / len(ran) if ran else 0.0

    @property
    def ok(self) -> bool:
        return all(r.status in (CheckStatus.PASSED, CheckStatus.SKIPPED) for r in self.results)

    def summary(self) -> Dict:
        return {"profile": self.profile, "seed": self.seed, "counts": self.counts, "pass_rate": self.pass_rate,
                "checks": [r.to_dict() for r in self.results]}

    def write(self, json_path: str, csv_path: str) -> None:
        # runtimes stay out of the files so a replay reproduces them byte for byte
        summary = self.summary()
        for check in summary["checks"]:
            check.pop("runtime")
        with open(json_path, "w") as f:
            f.write(json_encoder(summary))
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["name", "status"])
            for r in self.results:
                writer.writerow([r.name, r.status.value])


class SuiteRunner:
    def __init__(self, checks: Optional[List[SuiteCheck]] = None):
        self.checks = checks if checks is not None else CHECKS

    def run(self, profile: str = "quick", seed: int = 0, n_jobs: int = 1, only: Optional[List[str]] = None) -> SuiteReport:
        if profile not in PROFILES:
            raise LabError(f"Unknown profile '{profile}', expected one of {', '.join(PROFILES)}")
        results = []
        for check in self.checks:
            if profile not in check.profiles or (only and check.name not in only):
                results.append(CheckResult(check.name, CheckStatus.SKIPPED))
                continue
            start = time.perf_counter()
            try:
                passed, detail = check.run(profile, seed, n_jobs)
                status = CheckStatus.PASSED if passed else CheckStatus.FAILED
            except LabError as e:
                logger.error(f"Check {check.name} raised: {str(e)}")
                passed, detail, status = False, {"error": str(e), "type": type(e).__name__}, CheckStatus.ERROR
            runtime = time.perf_counter() - start
            logger.info(f"{check.name}: {status.value} in {runtime:.1f}s")
            results.append(CheckResult(check.name, status, detail, runtime))
        return SuiteReport(profile, seed, results)
