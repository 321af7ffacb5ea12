"""
Connectivity of r-neighbourhoods of point clouds.

Open balls B_r(y), B_r(y') overlap iff |y - y'| < 2r, so the components of
B_r(cloud) are the connected components of that geometric graph. The
connectivity radius is half the bottleneck edge of the Euclidean minimum
spanning tree.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform

from errors import PreconditionError
from point_process import PointCloud, RegionDescriptor

logger = logging.getLogger(__name__)


@dataclass
class Component:
    member_indices: Tuple[int, ...]
    lambda_C: Optional[float] = None

    @property
    def N_C(self) -> int:
        return len(self.member_indices)

    def to_dict(self) -> Dict:
        return {"member_indices": list(self.member_indices), "N_C": self.N_C, "lambda_C": self.lambda_C}


@dataclass
class ComponentDecomposition:
    r: float
    components: List[Component]
    labels: np.ndarray = field(repr=False)

    @property
    def N_r(self) -> int:
        return max((c.N_C for c in self.components), default=0)

    @property
    def Lambda(self) -> Optional[float]:
        """Largest per-component eigenvalue, once all slots are filled."""
        values = [c.lambda_C for c in self.components]
        if not values or any(v is None for v in values):
            return None
        return max(values)

    def domain(self, index: int, cloud: PointCloud) -> "ComponentDomain":
        members = list(self.components[index].member_indices)
        return ComponentDomain(cloud.points[members], self.r)

    def to_dict(self) -> Dict:
        return {"r": self.r, "N_r": self.N_r, "components": [c.to_dict() for c in self.components]}


class ComponentDomain:
    """The open set B_r(points) used as an eigenvalue / exit domain."""

    kind = "component"

    def __init__(self, points: np.ndarray, r: float):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.r = float(r)
        self._tree = cKDTree(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0) - self.r, self.points.max(axis=0) + self.r

    def contains(self, x: np.ndarray) -> np.ndarray:
        dist, _ = self._tree.query(np.atleast_2d(x))
        return dist < self.r

    def distance_to_boundary(self, x: np.ndarray) -> np.ndarray:
        """Lower bound r - dist(x, points) on the distance to the complement."""
        dist, _ = self._tree.query(np.atleast_2d(x))
        return self.r - dist

    def volume_estimate(self, samples: int = 200000, seed: int = 0) -> float:
        lo, hi = self.bounds()
        rng = np.random.default_rng(seed)
        x = rng.uniform(lo, hi, size=(samples, self.dim))
        return float(np.prod(hi - lo) * np.mean(self.contains(x)))

    def to_dict(self) -> Dict:
        return {"kind": "component", "points": self.points.tolist(), "r": self.r}


def components(cloud: PointCloud, r: float) -> ComponentDecomposition:
    """Connected components of B_r(cloud)."""
    n = len(cloud)
    if n == 0:
        raise PreconditionError("Component decomposition needs a non-empty cloud")
    pairs = cKDTree(cloud.points).query_pairs(2.0 * r, output_type="ndarray")
    if len(pairs):
        gaps = np.linalg.norm(cloud.points[pairs[:, 0]] - cloud.points[pairs[:, 1]], axis=1)
        pairs = pairs[gaps < 2.0 * r]
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])) if len(pairs) else ([], ([], [])),
                       shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    # Order components by their smallest member index.
    order, relabel = [], {}
    for label in labels:
        if label not in relabel:
            relabel[label] = len(order)
            order.append(label)
    labels = np.array([relabel[label] for label in labels])
    comps = [Component(tuple(int(i) for i in np.flatnonzero(labels == c))) for c in range(len(order))]
    return ComponentDecomposition(r, comps, labels)


def gamma(cloud: PointCloud) -> float:
    """Connectivity radius: half the longest edge of the Euclidean MST."""
    if len(cloud) == 0:
        raise PreconditionError("Connectivity radius needs at least one point")
    if len(cloud) == 1:
        return 0.0
    tree = minimum_spanning_tree(squareform(pdist(cloud.points)))
    return float(tree.data.max()) / 2.0


def component_diameters(decomposition: ComponentDecomposition, cloud: PointCloud) -> List[float]:
    diameters = []
    for comp in decomposition.components:
        members = cloud.points[list(comp.member_indices)]
        diameters.append(float(pdist(members).max()) if len(members) > 1 else 0.0)
    return diameters


def diameter_bound_holds(decomposition: ComponentDecomposition, cloud: PointCloud) -> bool:
    """Every component diameter is at most 2 r N_C."""
    return all(
        diam <= 2.0 * decomposition.r * comp.N_C * (1 + 1e-12)
        for diam, comp in zip(component_diameters(decomposition, cloud), decomposition.components)
    )


@dataclass
class CoveringNumber:
    count: int
    exact: bool


def covering_number(region: RegionDescriptor, r: float) -> CoveringNumber:
    """Number of side-r boxes covering ``region``.

    Exact for boxes. For balls this counts the cells of an r-lattice anchored
    at the ball's bounding box that meet the ball, an upper bound on the
    minimum.
    """
    if r <= 0:
        raise PreconditionError(f"Cell side must be positive, got {r}")
    d = region.dim
    if region.kind == "box":
        per_axis = math.ceil(2.0 * region.size / r - 1e-12)
        return CoveringNumber(per_axis ** d, True)

    R = region.size
    n = math.ceil(2.0 * R / r - 1e-12)
    offsets = np.arange(n) * r - R  # cell lower edges relative to the centre
    gap = np.maximum(0.0, np.maximum(offsets, -(offsets + r)))
    sq = np.zeros(1)
    for _ in range(d - 1):
        sq = np.add.outer(sq, gap ** 2).ravel()
    inside = sq < R * R
    width = np.sqrt(R * R - sq[inside])
    j_max = np.minimum(np.ceil((R + width) / r) - 1, n - 1)
    j_min = np.maximum(np.floor((R - width) / r), 0)
    count = int(np.sum(np.maximum(j_max - j_min + 1, 0)))
    return CoveringNumber(count, False)
