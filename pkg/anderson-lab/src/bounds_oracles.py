"""
Closed-form constants and scale functions.

Hardy constant h_d, critical cluster size k_theta, the multipolar constant
c_mp, the eigenvalue tail bound, the scale functions R(t) and r(t), the
liminf constant C_inf (closed form and by constrained optimisation), the
heuristic optimal time t0, and the dyadic integral test for slowly varying
functions.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize_scalar

from cloud_geometry import components
from errors import DomainError, PreconditionError
from kernels import TruncatedKernel
from point_process import RegionDescriptor, sample_ppp
from spectral import grid_cap, lambda_max
from utils import bernoulli_summary, unit_ball_volume

logger = logging.getLogger(__name__)


def h_d(d: int) -> float:
    """Hardy constant (d - 2)^2 / 8."""
    if d < 3:
        raise DomainError(f"Hardy constant needs d >= 3, got d={d}")
    return (d - 2) ** 2 / 8.0


def k_theta(d: int, theta: float) -> int:
    """Critical cluster size floor(h_d / theta) for theta in (0, h_d/2]."""
    hd = h_d(d)
    if not (0 < theta <= hd / 2 * (1 + 1e-12)):
        raise DomainError(f"theta must lie in (0, h_d/2] = (0, {hd / 2}], got {theta}")
    return int(math.floor(hd / theta * (1 + 1e-12)))


@dataclass(frozen=True)
class ScaleParams:
    d: int
    theta: float
    k: int
    exponent: float

    @classmethod
    def from_values(cls, d: int, theta: float) -> "ScaleParams":
        k = k_theta(d, theta)
        return cls(d, theta, k, (k + 1) / (k - 1))

    def to_dict(self) -> Dict:
        return {"d": self.d, "theta": self.theta, "k": self.k, "exponent": self.exponent}


def c_mp(k: int, theta: float) -> float:
    return (k + 1) * (math.pi ** 2 + 3 * theta) / 2.0


@dataclass
class TailBound:
    value: float
    term_s: float
    term_r: float
    k: int
    c_mp: float


def eigen_tail_bound(R: float, r: float, s: float, theta: float, d: int) -> TailBound:
    """Explicit two-term bound on P(Lambda > s) for the cloud in B_R.

    term_s = |B_1| (2R)^d (|B_1| (4k (c_mp/s)^{1/2})^d)^k / (k+1)!
    term_r = |B_1| (2(k+1)R)^d (|B_1| (2(k+1)r)^d)^{k+1} / (k+2)!
    """
    k = k_theta(d, theta)
    cm = c_mp(k, theta)
    if not s > 4 * k * k * cm / R ** 2:
        raise PreconditionError(f"s must exceed 4k^2 c_mp / R^2 = {4 * k * k * cm / R ** 2:.6g}, got {s}")
    omega = unit_ball_volume(d)
    term_s = omega * (2 * R) ** d * (omega * (4 * k * math.sqrt(cm / s)) ** d) ** k / math.factorial(k + 1)
    term_r = omega * (2 * (k + 1) * R) ** d * (omega * (2 * (k + 1) * r) ** d) ** (k + 1) / math.factorial(k + 2)
    return TailBound(term_s + term_r, term_s, term_r, k, cm)


@dataclass
class ScaleFunctions:
    R: float
    r: float
    loglog: float

    def to_dict(self) -> Dict:
        return {"R": self.R, "r": self.r, "loglog": self.loglog, "convention": "leading term taken as equality"}


def scales(t: float, k: int, d: int) -> ScaleFunctions:
    """R(t) = t^{k/(k-1)} L^{-1/(d(k-1))}, r(t) = t^{-1/(k-1)} L^{1/(d(k-1))}, L = log log t.

    With these exact forms R r = t and (R r^k)^d = L.
    """
    if not t > math.exp(math.e):
        raise DomainError(f"Scale functions need t > e^e, got {t}")
    if k < 2:
        raise DomainError(f"k must be at least 2, got {k}")
    L = math.log(math.log(t))
    R = t ** (k / (k - 1)) * L ** (-1.0 / (d * (k - 1)))
    r = t ** (-1.0 / (k - 1)) * L ** (1.0 / (d * (k - 1)))
    return ScaleFunctions(R, r, L)


def c_inf(d: int, theta: float, c: float) -> float:
    """Closed form of the liminf lower constant."""
    if not (0 < c <= 1):
        raise DomainError(f"c must lie in (0, 1], got {c}")
    k = k_theta(d, theta)
    cluster = unit_ball_volume(d) / (2 ** d * math.factorial(k + 1))
    return c ** (k / (k - 1)) * (k - 1) / (k + 1) ** ((k + 1) / (k - 1)) * cluster ** (2.0 / (d * (k - 1)))


def c_inf_numeric(d: int, theta: float, c: float) -> float:
    """sup of c nu^-2 - 2 sqrt(c) mu / nu over mu nu < sqrt(c), (mu nu^k)^d > 2^d (k+1)! / |B_1|.

    The objective decreases in mu, so mu sits on the lower boundary
    mu = a / nu^k and only nu is optimised numerically.
    """
    if not (0 < c <= 1):
        raise DomainError(f"c must lie in (0, 1], got {c}")
    k = k_theta(d, theta)
    a = (2 ** d * math.factorial(k + 1) / unit_ball_volume(d)) ** (1.0 / d)
    root_c = math.sqrt(c)
    nu_min = (a / root_c) ** (1.0 / (k - 1))

    def negative_objective(log_nu: float) -> float:
        nu = math.exp(log_nu)
        mu = a / nu ** k
        return -(c / nu ** 2 - 2 * root_c * mu / nu)

    lo = math.log(nu_min)
    result = minimize_scalar(negative_objective, bounds=(lo, lo + math.log(10.0 * (k + 1))), method="bounded",
                             options={"xatol": 1e-12})
    return float(-result.fun)


@dataclass
class HeuristicOptimum:
    t0: float
    exponent: float
    feasible: bool


def heuristic_exponent(t0: float, t: float, R: float, r: float, c2: float) -> float:
    """-R^2/t0 + c2 (t - t0)/r^2: travel cost to distance R plus growth in an r-cluster."""
    return -R ** 2 / t0 + c2 * (t - t0) / r ** 2


def heuristic_optimum(t: float, R: float, r: float, c2: float) -> HeuristicOptimum:
    if c2 <= 0:
        raise DomainError(f"c2 must be positive, got {c2}")
    t0 = R * r / math.sqrt(c2)
    exponent = c2 * t / r ** 2 - 2 * math.sqrt(c2) * R / r
    feasible = t0 <= t
    if not feasible:
        logger.warning(f"Optimal t0={t0:.6g} exceeds t={t:.6g}; heuristic optimum infeasible")
    return HeuristicOptimum(t0, exponent, feasible)


def heuristic_optimum_numeric(t: float, R: float, r: float, c2: float) -> float:
    """Golden-section maximisation of the exponent over t0 in (0, t)."""
    result = minimize_scalar(lambda t0: -heuristic_exponent(t0, t, R, r, c2), bracket=(1e-9 * t, R * r / math.sqrt(c2), t),
                             method="golden", tol=1e-12)
    return float(result.x)


@dataclass
class SummabilityResult:
    partial_sum: float
    last_block: float
    converges: bool
    terms: int


def summability_test(ell: Union[Callable[[float], float], Sequence[float]], n_max: int = 1000,
                     block_ratio: float = 0.05) -> SummabilityResult:
    """Dyadic integral test: int dt/(t ell(t)) < inf iff sum_n 1/ell(2^n) < inf.

    ``ell`` is a callable or the values ell(2^n), n = 0, 1, ... The verdict
    compares the last dyadic block of the partial sums with the first half;
    it is a finite-n diagnostic, not a proof.
    """
    if callable(ell):
        values = np.array([float(ell(2.0 ** n)) for n in range(n_max + 1)])
    else:
        values = np.asarray(ell, dtype=float)
    if values.size < 4 or np.any(values <= 0):
        raise PreconditionError("Need at least four positive values of ell")
    terms = 1.0 / values
    half = values.size // 2
    head = math.fsum(terms[:half])
    block = math.fsum(terms[half:])
    return SummabilityResult(head + block, block, block < block_ratio * head, int(values.size))


@dataclass
class TailFrequency:
    frequency: float
    stderr: float
    bound: float
    trials: int
    passed: bool


def _lambda_exceeds(R, r, s, theta, d, seed, trial, h, cap, a):
    cloud = sample_ppp(RegionDescriptor.ball((0.0,) * d, R), 1.0, seed, (trial,))
    if len(cloud) < 2:
        return False
    decomposition = components(cloud, r)
    kernel = TruncatedKernel(min(a, r), d)
    for index, comp in enumerate(decomposition.components):
        if comp.N_C < 2:
            continue
        sub = cloud.subset(comp.member_indices)
        result = lambda_max(decomposition.domain(index, cloud), sub, kernel, theta, h, cap)
        if result.lambda_ > s:
            return True
    return False


def eigen_tail_frequency(R: float, r: float, s: float, theta: float, d: int, trials: int, seed: int,
                         h: Optional[float] = None, cap: Optional[float] = None, a: Optional[float] = None,
                         n_jobs: int = 1) -> TailFrequency:
    """Monte-Carlo frequency of {Lambda > s} against ``eigen_tail_bound``.

    Singleton components are skipped: with theta <= h_d their eigenvalue is
    non-positive on any ball, so they cannot exceed s > 0.
    """
    bound = eigen_tail_bound(R, r, s, theta, d).value
    h = h if h is not None else r / 8.0
    cap = cap if cap is not None else grid_cap(h)
    a = a if a is not None else r
    hits = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_lambda_exceeds)(R, r, s, theta, d, seed, trial, h, cap, a) for trial in range(trials)
    )
    frequency, stderr = bernoulli_summary(hits)
    return TailFrequency(frequency, stderr, bound, trials, frequency <= bound + 3 * stderr)


def constants_report(d: int, theta: float, t: Optional[float] = None, c: float = 1.0) -> Dict:
    """All constants applicable to (d, theta), plus the scale functions when t is given."""
    hd = h_d(d)
    report = {"d": d, "theta": theta, "h_d": hd}
    if theta <= hd / 2 * (1 + 1e-12):
        params = ScaleParams.from_values(d, theta)
        report.update(params.to_dict())
        report["c_mp"] = c_mp(params.k, theta)
        report["c_inf"] = c_inf(d, theta, c)
        if t is not None:
            report["scales"] = scales(t, params.k, d).to_dict()
    return report
