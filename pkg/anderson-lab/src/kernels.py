"""
Potential kernels and Poisson potentials.

Provides the inverse-square kernel family used by the lab: the truncated
kernel |x|^-2 1{|x| <= a}, a smoothly attenuated kernel with exact
inverse-square behaviour near the origin, and a finite-box approximation of
the compensated (renormalized) potential in three dimensions.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Sequence, Union

import numpy as np
from scipy.integrate import quad
from scipy.spatial.distance import cdist

from errors import InvalidKernelConfig, OnPoleError, PreconditionError, SingularityError
from point_process import PointCloud, RegionDescriptor
from utils import as_points, chunked, parse_options, unit_sphere_area

logger = logging.getLogger(__name__)

POLE_TOLERANCE = 1e-12
EVAL_CHUNK = 4096


@dataclass(frozen=True)
class AlphaCutoff:
    """Smooth cutoff: 1 on [0, 1], 0 on [3, inf), quintic smoothstep in between.

    alpha(s) = 1 - S((s - 1)/2) with S(u) = 10u^3 - 15u^4 + 6u^5, so the
    first two derivatives vanish at both ends, -15/16 <= alpha' <= 0 and the
    integral over [0, inf) is exactly 2.
    """
    integral: float = 2.0

    def value(self, s):
        u = np.clip((np.asarray(s, dtype=float) - 1.0) / 2.0, 0.0, 1.0)
        return 1.0 - u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        u = np.clip((s - 1.0) / 2.0, 0.0, 1.0)
        slope = -15.0 * u ** 2 * (1.0 - u) ** 2
        return np.where((s > 1.0) & (s < 3.0), slope, 0.0)

    def compensator(self, a: float) -> float:
        """Integral of alpha(|z|/a)/|z|^2 over R^3."""
        return 4.0 * math.pi * a * self.integral


DEFAULT_CUTOFF = AlphaCutoff()


class KernelSpec(ABC):
    """A radial potential kernel in dimension ``dim``."""

    dim: int

    @abstractmethod
    def radial(self, rho: np.ndarray) -> np.ndarray:
        """Kernel value as a function of |x| (rho > 0)."""

    @property
    @abstractmethod
    def attenuation_scale(self) -> float:
        """Radius below which the kernel is exactly |x|^-2."""

    @abstractmethod
    def describe(self) -> str:
        """Round-trippable text form, as accepted by ``parse_kernel``."""

    def breakpoints(self) -> List[float]:
        return [self.attenuation_scale]

    def to_dict(self) -> Dict:
        return {"kernel": self.describe(), "dim": self.dim}


@dataclass(frozen=True)
class TruncatedKernel(KernelSpec):
    a: float
    dim: int = 3

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidKernelConfig(f"Truncation radius must be positive, got {self.a}")
        if self.dim < 3:
            raise InvalidKernelConfig("Kernels are defined for d >= 3")

    def radial(self, rho):
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(rho <= self.a, 1.0 / rho ** 2, 0.0)

    @property
    def attenuation_scale(self) -> float:
        return self.a

    def describe(self) -> str:
        return f"truncated:a={self.a!r}"


@dataclass(frozen=True)
class SmoothAttenuatedKernel(KernelSpec):
    a: float
    decay_power: float
    dim: int = 3

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidKernelConfig(f"Attenuation scale must be positive, got {self.a}")
        if self.dim < 3:
            raise InvalidKernelConfig("Kernels are defined for d >= 3")
        if not self.decay_power > self.dim:
            raise InvalidKernelConfig(f"decay_power must exceed d={self.dim}, got {self.decay_power}")

    def radial(self, rho):
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            return np.minimum(1.0, (self.a / rho) ** self.decay_power) / rho ** 2

    @property
    def attenuation_scale(self) -> float:
        return self.a

    def describe(self) -> str:
        return f"atten:a={self.a!r},p={self.decay_power!r}"


@dataclass(frozen=True)
class RenormApproxKernel(KernelSpec):
    """Finite-box approximation of the compensated potential (d = 3 only)."""
    a: float
    box_radius: float
    quadrature_step: float = 0.1
    dim: int = 3

    def __post_init__(self):
        if self.dim != 3:
            raise InvalidKernelConfig("The renormalized potential is only defined for d = 3")
        if not (self.a > 0 and self.box_radius > 0 and self.quadrature_step > 0):
            raise InvalidKernelConfig("Renormalized kernel parameters must be positive")

    def radial(self, rho):
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            return 1.0 / rho ** 2

    @property
    def attenuation_scale(self) -> float:
        return self.a

    def describe(self) -> str:
        return f"renorm:a={self.a!r},box={self.box_radius!r},step={self.quadrature_step!r}"


def parse_kernel(text: str, dim: int = 3) -> KernelSpec:
    """Build a kernel from ``truncated:a=A``, ``atten:a=A,p=P`` or ``renorm:a=A,box=B[,step=H]``."""
    if ":" not in text:
        raise InvalidKernelConfig(f"Kernel must look like name:key=value,..., got '{text}'")
    name, rest = text.split(":", 1)
    try:
        options = {k: float(v) for k, v in parse_options(rest).items()}
    except ValueError as e:
        raise InvalidKernelConfig(f"Bad kernel options '{rest}': {str(e)}")
    name = name.strip().lower()
    try:
        if name == "truncated":
            return TruncatedKernel(options["a"], dim)
        if name == "atten":
            return SmoothAttenuatedKernel(options["a"], options["p"], dim)
        if name == "renorm":
            return RenormApproxKernel(options["a"], options["box"], options.get("step", 0.1), dim)
    except KeyError as e:
        raise InvalidKernelConfig(f"Kernel '{name}' is missing option {str(e)}")
    raise InvalidKernelConfig(f"Unknown kernel '{name}'")


def kernel_eval(spec: KernelSpec, x) -> float:
    rho = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if rho < POLE_TOLERANCE:
        raise SingularityError("Kernel evaluated at the origin")
    return float(spec.radial(rho))


@dataclass
class MembershipRow:
    a: float
    scaled_sup: float
    near_origin_deviation: float


@dataclass
class MembershipReport:
    kernel: str
    tail_integral: float
    tail_finite: bool
    rows: List[MembershipRow]
    scaled_sup_max: float
    near_origin_deviation_max: float
    near_origin_finite: bool

    def to_dict(self) -> Dict:
        return {
            "kernel": self.kernel,
            "tail_integral": self.tail_integral,
            "tail_finite": self.tail_finite,
            "scaled_sup_max": self.scaled_sup_max,
            "near_origin_deviation_max": self.near_origin_deviation_max,
            "near_origin_finite": self.near_origin_finite,
            "rows": [row.__dict__ for row in self.rows],
        }


def _sup_above(spec: KernelSpec, a: float) -> float:
    rho = a * np.geomspace(1.0 + 1e-9, 1e4, 4000)
    extra = [b * (1 + 1e-12) for b in spec.breakpoints() if b > a]
    rho = np.concatenate([rho, extra])
    return float(np.max(np.abs(spec.radial(rho))))


def near_origin_deviation(spec: KernelSpec, a: float) -> float:
    """sup over 0 < rho <= a of |k(rho) - rho^-2| on a fine log grid."""
    rho = a * np.geomspace(1e-6, 1.0, 4000)
    extra = [b * (1 + 1e-12) for b in spec.breakpoints() if b < a]
    rho = np.concatenate([rho, extra])
    return float(np.max(np.abs(spec.radial(rho) - rho ** -2.0)))


def class_membership_report(spec: KernelSpec, radii_grid: Sequence[float]) -> MembershipReport:
    """Numerical check of the integrable-tail and near-origin inverse-square conditions."""
    if isinstance(spec, RenormApproxKernel):
        raise InvalidKernelConfig("Membership report is unsupported for the renormalized potential")
    d = spec.dim
    sigma = unit_sphere_area(d)

    def integrand(rho):
        return abs(float(spec.radial(rho))) * rho ** (d - 1)

    pieces = [1.0] + sorted(b for b in spec.breakpoints() if b > 1.0)
    tail = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        tail += quad(integrand, lo, hi, limit=200)[0]
    tail += quad(integrand, pieces[-1], np.inf, limit=200)[0]
    tail *= sigma

    rows = [MembershipRow(a, a * a * _sup_above(spec, a), near_origin_deviation(spec, a)) for a in radii_grid]
    scaled = max((row.scaled_sup for row in rows), default=0.0)
    near = max((row.near_origin_deviation for row in rows), default=0.0)
    return MembershipReport(
        kernel=spec.describe(),
        tail_integral=tail,
        tail_finite=bool(np.isfinite(tail)),
        rows=rows,
        scaled_sup_max=scaled,
        near_origin_deviation_max=near,
        near_origin_finite=bool(np.isfinite(scaled) and np.isfinite(near)),
    )


def _distances(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    return cdist(x, points)


def _rows_per_chunk(n_points: int) -> int:
    # keep each (rows, points) distance block near 2M entries
    return max(16, min(EVAL_CHUNK, 2_000_000 // max(n_points, 1)))


def potential_eval(cloud: PointCloud, spec: KernelSpec, x) -> Union[float, np.ndarray]:
    """Sum of kernel values over the cloud at one point or at each row of an (m, d) array."""
    single = np.ndim(x) == 1
    xs = as_points(x, cloud.dim)
    if isinstance(spec, RenormApproxKernel):
        values = np.array([renorm_eval(cloud, row, spec).value for row in xs])
        return float(values[0]) if single else values
    values = np.zeros(len(xs))
    if len(cloud):
        for rows in chunked(len(xs), _rows_per_chunk(len(cloud))):
            dist = _distances(cloud.points, xs[rows])
            if np.any(dist < POLE_TOLERANCE):
                raise OnPoleError("Potential evaluated on a cloud point")
            values[rows] = spec.radial(dist).sum(axis=1)
    return float(values[0]) if single else values


def capped_potential(cloud: PointCloud, spec: KernelSpec, x: np.ndarray, cap: float,
                     pole_radius: float = POLE_TOLERANCE) -> np.ndarray:
    """min(V, cap) at each row of ``x``; positions within ``pole_radius`` of a point get ``cap``."""
    xs = as_points(x, cloud.dim)
    values = np.zeros(len(xs))
    if len(cloud) == 0:
        return np.minimum(values, cap)
    compensation = renorm_compensation(spec) if isinstance(spec, RenormApproxKernel) else 0.0
    for rows in chunked(len(xs), _rows_per_chunk(len(cloud))):
        dist = _distances(cloud.points, xs[rows])
        near = np.any(dist < pole_radius, axis=1)
        safe = np.where(dist < pole_radius, np.inf, dist)
        if isinstance(spec, RenormApproxKernel):
            in_box = np.all(np.abs(xs[rows][:, None, :] - cloud.points[None, :, :]) < spec.box_radius, axis=2)
            chunk = np.where(in_box, 1.0 / safe ** 2, 0.0).sum(axis=1) - compensation
        else:
            chunk = spec.radial(safe).sum(axis=1)
        chunk[near] = cap
        values[rows] = chunk
    return np.minimum(values, cap)


def corner_integral(box_radius: float, step: float) -> float:
    """Integral of |z|^-2 over the cube [-B, B]^3 minus the ball B_B.

    Midpoint rule in (x, y) over one octant, with the z-integral done in
    closed form: int dz / (s + z^2) = atan(z / sqrt(s)) / sqrt(s).
    """
    B = box_radius
    n = max(int(math.ceil(B / step)), 1)
    h = B / n
    nodes = (np.arange(n) + 0.5) * h
    xx, yy = np.meshgrid(nodes, nodes, indexing="ij")
    s = xx ** 2 + yy ** 2
    root = np.sqrt(s)
    z0 = np.sqrt(np.maximum(B * B - s, 0.0))
    inner = (np.arctan(B / root) - np.arctan(z0 / root)) / root
    return float(8.0 * inner.sum() * h * h)


def renorm_compensation(spec: RenormApproxKernel, cutoff: AlphaCutoff = DEFAULT_CUTOFF) -> float:
    """Deterministic part subtracted from the box sum: near plus far compensators."""
    near = cutoff.compensator(spec.a)
    far = 4.0 * math.pi * (spec.box_radius - spec.a * cutoff.integral) + corner_integral(spec.box_radius, spec.quadrature_step)
    return near + far


@dataclass
class RenormValue:
    value: float
    near_field: float
    far_field: float
    truncation_radius: float
    tail_std: float

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def renorm_eval(cloud_in_box: PointCloud, x, spec: RenormApproxKernel,
                cutoff: AlphaCutoff = DEFAULT_CUTOFF) -> RenormValue:
    """Compensated inverse-square potential at x from the points in the box of radius B around x."""
    if cloud_in_box.dim != 3:
        raise InvalidKernelConfig("The renormalized potential is only defined for d = 3")
    if spec.box_radius < 3.0 * spec.a:
        raise InvalidKernelConfig(f"box_radius {spec.box_radius} must be at least 3a = {3.0 * spec.a}")
    x = np.asarray(x, dtype=float)
    near_sum = far_sum = 0.0
    if len(cloud_in_box):
        rel = cloud_in_box.points - x
        inside = np.all(np.abs(rel) < spec.box_radius, axis=1)
        rho = np.linalg.norm(rel[inside], axis=1)
        if np.any(rho < POLE_TOLERANCE):
            raise OnPoleError("Renormalized potential evaluated on a cloud point")
        weight = cutoff.value(rho / spec.a)
        near_sum = float(np.sum(weight / rho ** 2))
        far_sum = float(np.sum((1.0 - weight) / rho ** 2))
    near = near_sum - cutoff.compensator(spec.a)
    far_integral = 4.0 * math.pi * (spec.box_radius - spec.a * cutoff.integral) + corner_integral(
        spec.box_radius, spec.quadrature_step)
    far = far_sum - far_integral
    # Poisson variance of the omitted compensated tail is at most int_{|z|>B} |z|^-4 dz = 4 pi / B.
    tail_std = math.sqrt(4.0 * math.pi / spec.box_radius)
    return RenormValue(near + far, near, far, spec.a, tail_std)


def truncation_error(cloud: PointCloud, spec: KernelSpec, a: float, region: RegionDescriptor,
                     grid_step: float) -> float:
    """Grid sup over ``region`` of |V_spec - V_a|, with the truncated kernel at radius a."""
    if a > spec.attenuation_scale * (1 + 1e-12):
        raise PreconditionError(f"Truncation radius {a} exceeds the kernel's attenuation scale {spec.attenuation_scale}")
    truncated = TruncatedKernel(a, spec.dim)
    lo, hi = region.bounds()
    axes = [np.arange(l, h + grid_step / 2, grid_step) for l, h in zip(lo, hi)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    nodes = nodes[region.distance_to(nodes) <= 1e-12]
    if len(cloud) == 0 or len(nodes) == 0:
        return 0.0
    pole_bound = near_origin_deviation(spec, a)
    best = 0.0
    for rows in chunked(len(nodes), _rows_per_chunk(len(cloud))):
        dist = _distances(cloud.points, nodes[rows])
        near = dist < a / 4.0
        safe = np.where(near, np.inf, dist)
        diff = np.abs((spec.radial(safe) - truncated.radial(safe)).sum(axis=1))
        diff = diff + pole_bound * near.sum(axis=1)
        best = max(best, float(diff.max()))
    return best
