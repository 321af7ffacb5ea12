"""
Discretized principal Dirichlet eigenvalues of 1/2 Laplacian + q.

A DiscretizedOperator is the (2d+1)-point finite-difference operator on the
nodes of a uniform grid that lie inside an open domain; nodes outside carry
the Dirichlet condition. The largest eigenvalue comes from ARPACK's Lanczos
iteration (dense solve for tiny grids). Radial problems on very large balls
go through a one-dimensional finite-volume reduction on a graded mesh.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import eigh, eigh_tridiagonal, expm, svdvals
from scipy.sparse import coo_matrix, csc_matrix, diags, identity
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, expm_multiply, splu, spsolve

from errors import EigenSolverError, PreconditionError
from kernels import KernelSpec, capped_potential
from point_process import PointCloud
from utils import make_rng

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DENSE_LIMIT = 400
MAX_ITERATIONS = 20000

PotentialFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class DiscretizedOperator:
    dim: int
    h: float
    axes: List[np.ndarray] = field(repr=False)
    mask: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)
    cap: float
    laplacian: csc_matrix = field(repr=False)
    outside_neighbours: np.ndarray = field(repr=False)

    @property
    def n_interior(self) -> int:
        return int(self.potential.size)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.mask.shape

    @property
    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array([a[0] for a in self.axes]), np.array([a[-1] for a in self.axes])

    @property
    def matrix(self) -> csc_matrix:
        return (self.laplacian + diags(self.potential)).tocsc()

    def interior_points(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g[self.mask] for g in grids], axis=1)

    def with_potential(self, potential: np.ndarray) -> "DiscretizedOperator":
        """Same grid and mask, new nodal potential (not re-capped)."""
        potential = np.asarray(potential, dtype=float)
        if potential.shape != self.potential.shape:
            raise PreconditionError(f"Potential has shape {potential.shape}, expected {self.potential.shape}")
        return DiscretizedOperator(self.dim, self.h, self.axes, self.mask, potential, self.cap,
                                   self.laplacian, self.outside_neighbours)

    def full_field(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.mask] = values
        return out

    def interpolate(self, values: np.ndarray, x) -> np.ndarray:
        """Multilinear interpolation of an interior field (zero outside the mask)."""
        interpolator = RegularGridInterpolator(self.axes, self.full_field(values), bounds_error=False, fill_value=0.0)
        return interpolator(np.atleast_2d(np.asarray(x, dtype=float)))

    def same_grid(self, other: "DiscretizedOperator") -> bool:
        return (self.dim == other.dim and self.shape == other.shape and math.isclose(self.h, other.h)
                and all(np.allclose(a, b) for a, b in zip(self.axes, other.axes)))

    def to_dict(self) -> Dict:
        lo, hi = self.bounding_box
        return {"dim": self.dim, "h": self.h, "shape": list(self.shape), "n_interior": self.n_interior,
                "cap": self.cap, "bounding_box": [lo.tolist(), hi.tolist()]}


def _grid_axes(domain, h: float) -> List[np.ndarray]:
    # Axes are centred on the bounding-box centre so a pole there sits on a node.
    lo, hi = domain.bounds()
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    center = (lo + hi) / 2.0
    axes = []
    for c, half in zip(center, (hi - lo) / 2.0):
        n_half = int(math.ceil(half / h - 1e-9)) + 1
        axes.append(c + np.arange(-n_half, n_half + 1) * h)
    return axes


def _half_laplacian(mask: np.ndarray, h: float) -> Tuple[csc_matrix, np.ndarray]:
    d = mask.ndim
    n = int(mask.sum())
    index = -np.ones(mask.shape, dtype=np.int64)
    index[mask] = np.arange(n)
    rows, cols = [], []
    for axis in range(d):
        lower = [slice(None)] * d
        upper = [slice(None)] * d
        lower[axis] = slice(0, -1)
        upper[axis] = slice(1, None)
        src, dst = index[tuple(lower)], index[tuple(upper)]
        both = (src >= 0) & (dst >= 0)
        rows.append(src[both])
        cols.append(dst[both])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    coupling = 0.5 / (h * h)
    off = coo_matrix((np.full(rows.size, coupling), (rows, cols)), shape=(n, n))
    inside_neighbours = np.bincount(rows, minlength=n) + np.bincount(cols, minlength=n)
    laplacian = off + off.T + diags(np.full(n, -d / (h * h)))
    return laplacian.tocsc(), 2 * d - inside_neighbours


def build_operator(domain, h: float, potential_fn: Optional[PotentialFn] = None,
                   cap: float = math.inf, axes: Optional[List[np.ndarray]] = None) -> DiscretizedOperator:
    """Grid operator 1/2 Laplacian_h + min(q, cap) on the nodes inside ``domain``.

    ``domain`` is anything with ``bounds()`` and an open ``contains()``: a
    RegionDescriptor or a ComponentDomain. Passing ``axes`` reuses another
    operator's grid, as nested-domain comparisons require.
    """
    if h <= 0:
        raise PreconditionError(f"Grid step must be positive, got {h}")
    axes = axes if axes is not None else _grid_axes(domain, h)
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    mask = np.asarray(domain.contains(nodes)).reshape(grids[0].shape)
    if not mask.any():
        raise PreconditionError(f"No grid node at step {h} lies inside the domain")
    interior = nodes[mask.ravel()]
    q = np.zeros(len(interior)) if potential_fn is None else np.asarray(potential_fn(interior), dtype=float)
    q = np.minimum(q, cap)
    laplacian, outside = _half_laplacian(mask, h)
    logger.debug(f"Built operator: h={h}, shape={mask.shape}, interior={len(interior)}")
    return DiscretizedOperator(len(axes), h, axes, mask, q, cap, laplacian, outside)


def grid_cap(h: float) -> float:
    """|x|^-2 at half a grid step, the default cap for grid eigenproblems.

    A pole node valued theta * grid_cap(h) stays below the lattice
    bound-state threshold (about 2 / h^2) for theta < 1/2, so a coarse grid does
    not manufacture a positive eigenvalue out of a single capped node.
    """
    return 4.0 / (h * h)


def cloud_potential_fn(cloud: PointCloud, kernel: KernelSpec, theta: float, cap: float, h: float) -> PotentialFn:
    """theta * min(V, cap), with nodes within h/2 of a pole set to theta * cap."""
    def potential(points: np.ndarray) -> np.ndarray:
        return theta * capped_potential(cloud, kernel, points, cap, pole_radius=h / 2.0)
    return potential


@dataclass
class EigenResult:
    lambda_: float
    iterations: int
    residual: float
    converged: bool
    positive: bool
    eigenvector: Optional[np.ndarray] = field(default=None, repr=False)
    n_interior: int = 0
    h: float = 0.0

    def to_dict(self) -> Dict:
        return {"lambda": self.lambda_, "iterations": self.iterations, "residual": self.residual,
                "converged": self.converged, "positive": self.positive, "n_interior": self.n_interior, "h": self.h}


def principal_eigen(op: DiscretizedOperator, tol: float = DEFAULT_TOL, keep_vector: bool = True,
                    max_iterations: int = MAX_ITERATIONS) -> EigenResult:
    """Largest eigenvalue and positive eigenvector of the grid operator."""
    A = op.matrix
    n = op.n_interior
    calls = [0]
    if n <= DENSE_LIMIT:
        values, vectors = eigh(A.toarray())
        lam, vec = float(values[-1]), vectors[:, -1]
    else:
        def matvec(v):
            calls[0] += 1
            return A @ v

        operator = LinearOperator((n, n), matvec=matvec, dtype=float)
        try:
            values, vectors = eigsh(operator, k=1, which="LA", v0=np.ones(n), tol=tol,
                                    maxiter=max_iterations, ncv=min(n - 1, 32))
        except ArpackNoConvergence as e:
            raise EigenSolverError(f"Lanczos did not converge after {calls[0]} products: {str(e)}")
        lam, vec = float(values[0]), vectors[:, 0]

    vec = vec / np.linalg.norm(vec)
    residual = float(np.linalg.norm(A @ vec - lam * vec))
    scale = max(1.0, abs(lam), op.dim / op.h ** 2 + float(np.abs(op.potential).max(initial=0.0)))
    converged = residual <= math.sqrt(tol) * scale
    if vec.sum() < 0:
        vec = -vec
    positive = bool(vec.min() >= -1e-8 * vec.max())
    if not positive:
        logger.warning(f"Principal eigenvector changes sign: min={vec.min():.3e}, max={vec.max():.3e}")
    if not converged:
        logger.warning(f"Eigen residual {residual:.3e} above tolerance for lambda={lam:.6g}")
    logger.info(f"lambda_max={lam:.10g} residual={residual:.3e} iterations={calls[0]} n={n}")
    eigenvector = vec / math.sqrt(op.h ** op.dim) if keep_vector else None
    return EigenResult(lam, calls[0], residual, converged, positive, eigenvector, n, op.h)


def lambda_max(domain, cloud: PointCloud, kernel: KernelSpec, theta: float, h: float, cap: float,
               tol: float = DEFAULT_TOL, keep_vector: bool = False) -> EigenResult:
    """Largest eigenvalue of 1/2 Laplacian_h + theta * min(V, cap) with Dirichlet conditions off ``domain``."""
    if not math.isfinite(cap) or cap <= 0:
        raise PreconditionError(f"The eigen solver needs a finite positive cap, got {cap}")
    if theta < 0:
        raise PreconditionError(f"theta must be non-negative, got {theta}")
    op = build_operator(domain, h, cloud_potential_fn(cloud, kernel, theta, cap, h), theta * cap)
    return principal_eigen(op, tol, keep_vector)


def fill_component_eigenvalues(decomposition, cloud: PointCloud, kernel: KernelSpec, theta: float, h: float,
                               cap: float, tol: float = DEFAULT_TOL) -> Optional[float]:
    """Solve each component's eigenproblem in place; returns Lambda = max over components."""
    for index, comp in enumerate(decomposition.components):
        sub = cloud.subset(comp.member_indices)
        comp.lambda_C = lambda_max(decomposition.domain(index, cloud), sub, kernel, theta, h, cap, tol).lambda_
    return decomposition.Lambda


@dataclass
class Sandwich:
    lower: float
    upper: float

    def contains(self, value: float, tol: float = DEFAULT_TOL) -> bool:
        slack = tol * max(1.0, abs(value))
        return self.lower - slack <= value <= self.upper + slack


def sandwich_bounds(op: DiscretizedOperator, tol: float = DEFAULT_TOL) -> Sandwich:
    """min q + lambda(D, 0) <= lambda(D, q) <= max q + lambda(D, 0) on the same grid."""
    free = principal_eigen(op.with_potential(np.zeros(op.n_interior)), tol, keep_vector=False).lambda_
    return Sandwich(free + float(op.potential.min()), free + float(op.potential.max()))


def sandwich_lower_bound(op: DiscretizedOperator, tol: float = DEFAULT_TOL) -> float:
    return sandwich_bounds(op, tol).lower


def richardson(value_h: float, value_h2: float, order: float = 1.0) -> float:
    """Extrapolate two solves at steps h and h/2 assuming error ~ h^order."""
    return value_h2 + (value_h2 - value_h) / (2.0 ** order - 1.0)


@dataclass
class MonotonicityVerdict:
    lambda_small: float
    lambda_large: float
    holds: bool

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def monotonicity_check(smaller: DiscretizedOperator, larger: DiscretizedOperator,
                       tol: float = DEFAULT_TOL) -> MonotonicityVerdict:
    """lambda(D1, q1) <= lambda(D2, q2) for D1 inside D2 and q1 <= q2 on a common grid."""
    if not smaller.same_grid(larger):
        raise PreconditionError("Monotonicity check needs both operators on the same grid")
    if np.any(smaller.mask & ~larger.mask):
        raise PreconditionError("Smaller domain is not contained in the larger one")
    q_large = larger.full_field(larger.potential)[smaller.mask]
    if np.any(smaller.potential > q_large + 1e-12):
        raise PreconditionError("Potential of the smaller problem exceeds the larger one at some node")
    lam1 = principal_eigen(smaller, tol, keep_vector=False).lambda_
    lam2 = principal_eigen(larger, tol, keep_vector=False).lambda_
    return MonotonicityVerdict(lam1, lam2, lam1 <= lam2 + 2 * tol * max(1.0, abs(lam1), abs(lam2)))


@dataclass
class SemigroupRow:
    t: float
    norm_ratio: float
    bound: float
    holds: bool


@dataclass
class SemigroupCheck:
    lambda_: float
    rows: List[SemigroupRow]
    resolvent_norm: float
    resolvent_bound: float
    resolvent_holds: bool

    @property
    def holds(self) -> bool:
        return self.resolvent_holds and all(r.holds for r in self.rows)

    def to_dict(self) -> Dict:
        return {"lambda": self.lambda_, "rows": [r.__dict__ for r in self.rows], "resolvent_norm": self.resolvent_norm,
                "resolvent_bound": self.resolvent_bound, "holds": self.holds}


def semigroup_resolvent_check(op: DiscretizedOperator, gamma: float, t_list: Sequence[float], seed: int = 0,
                              n_vectors: int = 3, rtol: float = 1e-8) -> SemigroupCheck:
    """||e^{tA} f|| <= e^{t lambda} ||f|| and ||(A - gamma)^{-1}|| <= 1/(gamma - lambda)."""
    A = op.matrix
    n = op.n_interior
    dense = n <= 1500
    if dense:
        lam = float(np.linalg.eigvalsh(A.toarray())[-1])
    else:
        lam = principal_eigen(op, keep_vector=False).lambda_
    if gamma <= lam:
        raise PreconditionError(f"gamma={gamma} must exceed lambda_max={lam}")

    rng = make_rng(seed, n)
    vectors = rng.standard_normal((n_vectors, n))
    rows = []
    for t in t_list:
        if dense:
            propagator = expm(t * A.toarray())
            images = vectors @ propagator.T
        else:
            images = np.stack([expm_multiply(t * A, f) for f in vectors])
        ratio = float(max(np.linalg.norm(g) / np.linalg.norm(f) for f, g in zip(vectors, images)))
        bound = math.exp(t * lam)
        rows.append(SemigroupRow(float(t), ratio, bound, ratio <= bound * (1 + rtol)))

    shifted = (A - gamma * identity(n)).tocsc()
    if dense:
        norm = 1.0 / float(svdvals(shifted.toarray()).min())
    else:
        lu = splu(csc_matrix(-shifted))
        inverse = LinearOperator((n, n), matvec=lu.solve, dtype=float)
        norm = float(eigsh(inverse, k=1, which="LA", v0=np.ones(n), tol=1e-10)[0][0])
    bound = 1.0 / (gamma - lam)
    return SemigroupCheck(lam, rows, norm, bound, norm <= bound * (1 + rtol))


def semigroup_apply(op: DiscretizedOperator, f: np.ndarray, t: float) -> np.ndarray:
    """e^{tA} f on the interior nodes."""
    return expm_multiply(t * op.matrix, np.asarray(f, dtype=float))


def solve_dirichlet_problem(op: DiscretizedOperator, gamma: float, boundary_value: float = 1.0) -> np.ndarray:
    """Grid solution of (1/2 Laplacian_h + q - gamma) u = 0 inside, u = boundary_value off the mask."""
    n = op.n_interior
    rhs = -boundary_value * op.outside_neighbours * 0.5 / op.h ** 2
    system = (op.matrix - gamma * identity(n)).tocsc()
    return np.asarray(spsolve(system, rhs), dtype=float)


@dataclass
class RadialResult:
    lambda_: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    eigenvector: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.nodes.size)


def radial_mesh(radius: float, h: float, inner: float) -> np.ndarray:
    """Uniform nodes on [0, inner] at step inner*h, then geometric with ratio 1 + h up to ``radius``."""
    inner = min(inner, radius)
    uniform = np.arange(0, int(round(1.0 / h)) + 1) * inner * h
    nodes = list(uniform[uniform < inner * (1 - 1e-12)])
    x = inner
    while x < radius * (1 - 1e-12):
        nodes.append(x)
        x *= 1.0 + h
    if radius - nodes[-1] < 0.5 * (nodes[-1] - nodes[-2]):
        nodes.pop()
    nodes.append(radius)
    return np.array(nodes)


def radial_lambda_max(radius: float, potential_fn: Callable[[np.ndarray], np.ndarray], d: int, h: float = 1.0 / 64,
                      inner: float = 1.0, cap: float = math.inf) -> RadialResult:
    """Largest eigenvalue of 1/2 Laplacian + q(|x|) on B_radius, Dirichlet at the radius.

    Vertex-centred finite volumes: node i owns the shell between the
    neighbouring midpoints, with volume weight w_i (per unit sphere area) and
    flux coefficients f = rho_mid^(d-1) / (rho_{i+1} - rho_i). The symmetric
    tridiagonal W^-1/2 A W^-1/2 is diagonalised for its top eigenvalue only.
    """
    nodes = radial_mesh(radius, h, inner)
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    flux = mids ** (d - 1) / np.diff(nodes)
    faces = np.concatenate([[0.0], mids, [radius]])
    weights = (faces[1:] ** d - faces[:-1] ** d) / d

    # Unknowns exclude the Dirichlet node at the radius.
    m = nodes.size - 1
    w = weights[:m]
    q = np.minimum(np.asarray(potential_fn(nodes[:m]), dtype=float), cap)
    flux_right = flux[:m]
    flux_left = np.concatenate([[0.0], flux[:m - 1]])
    diagonal = (-0.5 * (flux_left + flux_right) + w * q) / w
    off = 0.5 * flux[:m - 1] / np.sqrt(w[:-1] * w[1:])
    values, vectors = eigh_tridiagonal(diagonal, off, select="i", select_range=(m - 1, m - 1))
    u = vectors[:, 0] / np.sqrt(w)
    if u.sum() < 0:
        u = -u
    logger.info(f"Radial lambda_max={values[0]:.10g} on B_{radius:.6g} with {m} nodes")
    return RadialResult(float(values[0]), nodes[:m], w, u)


@dataclass
class WholeSpaceResult:
    lambda_: float
    K: float
    sweep: List[Tuple[float, float]]
    converged: bool


def whole_space_lambda_max(solve: Callable[[float], float], K0: float, rel_tol: float = 0.01,
                           max_doublings: int = 6) -> WholeSpaceResult:
    """Double the ball radius K until the eigenvalue moves by less than ``rel_tol``."""
    K = K0
    sweep = [(K, solve(K))]
    for _ in range(max_doublings):
        K *= 2.0
        sweep.append((K, solve(K)))
        previous, current = sweep[-2][1], sweep[-1][1]
        if abs(current - previous) <= rel_tol * max(abs(current), 1e-300):
            return WholeSpaceResult(current, K, sweep, True)
    logger.warning(f"K-sweep did not settle within {max_doublings} doublings: {sweep}")
    return WholeSpaceResult(sweep[-1][1], K, sweep, False)
