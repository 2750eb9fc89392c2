#!/usr/bin/env python3
"""
Grid Core - periodic boxes, node sets and weights

This module provides the discretized domain the rest of frame-forge builds on:
- Periodic torus box with N samples per axis (d = 1 or 2)
- Node sets with multiplicity, snapped to grid indices on ingestion
- Polynomial weights and moderated weight pairs
- Relative separation, L-density and covering radius
- Numerical check of the convolution-over-nodes estimates
- Weighted sequence and function norms
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

# Tolerance used when converting lengths to whole grid steps
GRID_EPS = 1e-9


class FrameForgeError(Exception):
    """Base exception for frame-forge errors"""
    pass


class EnvelopeError(FrameForgeError):
    """An atom exceeds its declared decay envelope"""

    def __init__(self, message: str, atom: int, point: int, ratio: float):
        super().__init__(message)
        self.atom = atom
        self.point = point
        self.ratio = ratio


class CertificationError(FrameForgeError):
    """A run-time precondition of a quilting construction failed"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(FrameForgeError):
    """Invalid experiment configuration"""
    pass


def index_span(length: float, step: float) -> int:
    """Number of whole grid steps contained in ``length``"""
    return int(np.floor(length / step + GRID_EPS))


def is_whole(value: float, tol: float = GRID_EPS) -> bool:
    """True if ``value`` is an integer up to ``tol``"""
    return abs(value - round(value)) <= tol


def ordered_map(func: Callable, items: Iterable, workers: int = 1) -> list:
    """Map ``func`` over ``items`` keeping input order, optionally on a thread pool"""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


@dataclass(frozen=True)
class Box:
    """Periodic box [0, L)^d sampled with N points per axis"""
    dim: int
    side: float
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise FrameForgeError(f"unsupported dimension {self.dim}, expected 1 or 2")
        if self.points_per_axis < 2:
            raise FrameForgeError(f"points_per_axis must be at least 2, got {self.points_per_axis}")
        if self.side <= 0:
            raise FrameForgeError(f"box side must be positive, got {self.side}")

    @property
    def step(self) -> float:
        return self.side / self.points_per_axis

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        """Quadrature weight h^d"""
        return self.step ** self.dim

    def grid_indices(self) -> np.ndarray:
        """All grid indices as an (N^d, d) array in C order"""
        return np.indices(self.shape).reshape(self.dim, -1).T

    def positions(self) -> np.ndarray:
        return self.grid_indices() * self.step

    def snap(self, points) -> np.ndarray:
        """Snap real positions to grid indices, reduced modulo N"""
        arr = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return np.mod(np.rint(arr / self.step).astype(int), self.points_per_axis)

    def flat_index(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=int).reshape(-1, self.dim)
        return np.ravel_multi_index(tuple(np.mod(indices, self.points_per_axis).T), self.shape)

    def wrap_delta(self, delta: np.ndarray) -> np.ndarray:
        """Minimal image of an index difference"""
        delta = np.mod(delta, self.points_per_axis)
        return np.minimum(delta, self.points_per_axis - delta)

    def centered_indices(self, indices: np.ndarray) -> np.ndarray:
        """Index representatives in [-N/2, N/2)"""
        n = self.points_per_axis
        delta = np.mod(indices, n)
        return np.where(delta >= n / 2, delta - n, delta)

    def index_distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Torus distance between index arrays (broadcast over leading axes)"""
        delta = self.wrap_delta(np.asarray(a) - np.asarray(b))
        return np.sqrt(np.sum(delta.astype(float) ** 2, axis=-1)) * self.step

    def distances_from(self, index) -> np.ndarray:
        """Distance of every grid point to the grid index ``index``"""
        index = np.asarray(index, dtype=int).reshape(self.dim)
        return self.index_distance(self.grid_indices(), index)

    def weight_values(self, weight: "Weight", center=None) -> np.ndarray:
        """Weight evaluated at every grid point, relative to ``center``"""
        center = np.zeros(self.dim, dtype=int) if center is None else center
        return weight(self.distances_from(center))

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """Grid inner product <f, g> = h^d sum f conj(g)"""
        return self.cell_volume * np.vdot(g, f)


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Indexed grid points with multiplicity"""
    box: Box
    indices: np.ndarray
    labels: Tuple = ()

    def __post_init__(self):
        indices = np.mod(np.asarray(self.indices, dtype=int).reshape(-1, self.box.dim),
                         self.box.points_per_axis)
        object.__setattr__(self, "indices", indices)
        labels = tuple(self.labels) if len(self.labels) else tuple(range(len(indices)))
        if len(labels) != len(indices):
            raise FrameForgeError(f"{len(labels)} labels for {len(indices)} nodes")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_positions(cls, box: Box, positions, labels: Sequence = ()) -> "NodeSet":
        return cls(box, box.snap(positions), tuple(labels))

    @classmethod
    def lattice(cls, box: Box, spacing: float, offset: float = 0.0) -> "NodeSet":
        """Regular lattice spacing*Z^d + offset inside the box"""
        axis = np.arange(0.0, box.side - GRID_EPS, spacing) + offset
        grids = np.meshgrid(*([axis] * box.dim), indexing="ij")
        return cls.from_positions(box, np.stack([g.ravel() for g in grids], axis=-1))

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def positions(self) -> np.ndarray:
        return self.indices * self.box.step

    @property
    def flat(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0, dtype=int)
        return self.box.flat_index(self.indices)

    def subset(self, selector) -> "NodeSet":
        selector = np.asarray(selector)
        if selector.dtype == bool:
            selector = np.flatnonzero(selector)
        selector = selector.astype(int).reshape(-1)
        return NodeSet(self.box, self.indices[selector], tuple(self.labels[i] for i in selector))

    def union(self, other: "NodeSet") -> "NodeSet":
        """Union with multiplicity (concatenation)"""
        if other.box != self.box:
            raise FrameForgeError("node sets live on different boxes")
        return NodeSet(self.box, np.concatenate([self.indices, other.indices]),
                       self.labels + other.labels)

    def translate(self, shift) -> "NodeSet":
        shift = self.box.snap(shift).reshape(self.box.dim)
        return NodeSet(self.box, self.indices + shift, self.labels)

    def same_nodes(self, other: "NodeSet") -> bool:
        return (self.box == other.box and len(self) == len(other)
                and bool(np.array_equal(self.indices, other.indices)))


class WeightKind(Enum):
    """Supported weight families"""
    POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class Weight:
    """Polynomial weight w_t(x) = (1 + |x|)^t"""
    exponent: float = 0.0
    kind: WeightKind = WeightKind.POLYNOMIAL

    def __call__(self, distance) -> np.ndarray:
        return (1.0 + np.asarray(distance, dtype=float)) ** self.exponent

    def on_nodes(self, nodes: NodeSet) -> np.ndarray:
        origin = np.zeros(nodes.box.dim, dtype=int)
        return self(nodes.box.index_distance(nodes.indices, origin))

    def to_dict(self) -> Dict[str, Any]:
        return {"t": self.exponent}


@dataclass(frozen=True)
class ModeratedPair:
    """Weights (v, w) with v(x+y) <= C v(x) w(y)"""
    v: Weight
    w: Weight
    moderation_constant: float = 1.0

    def __post_init__(self):
        if self.moderation_constant < 1:
            raise FrameForgeError(f"moderation constant must be >= 1, got {self.moderation_constant}")

    def worst_ratio(self, box: Box, max_points: int = 1024) -> float:
        """Measured sup of v(x+y) / (v(x) w(y)) over representatives with |x+y| <= L/2"""
        reps = box.centered_indices(box.grid_indices()).astype(float) * box.step
        stride = max(1, int(np.ceil(len(reps) / max_points)))
        reps = reps[::stride]
        norm_x = np.sqrt(np.sum(reps ** 2, axis=1))
        worst = 0.0
        for y in reps:
            total = reps + y
            norm_total = np.sqrt(np.sum(total ** 2, axis=1))
            inside = norm_total <= box.side / 2 + GRID_EPS
            if not inside.any():
                continue
            ratio = self.v(norm_total[inside]) / (self.v(norm_x[inside]) * self.w(np.sqrt(np.sum(y ** 2))))
            worst = max(worst, float(ratio.max()))
        return worst

    def holds(self, box: Box) -> bool:
        return self.worst_ratio(box) <= self.moderation_constant * (1 + 1e-12)


def window_reduce(values: np.ndarray, box: Box, lower: int, upper: int,
                  reducer: Callable = np.maximum) -> np.ndarray:
    """Reduce grid functions over the index window [x+lower, x+upper] along every axis.

    ``values`` has shape (..., N^d); the reduction is separable, so it runs
    one axis at a time with periodic rolls.
    """
    values = np.asarray(values)
    lead = values.shape[:-1]
    out = values.reshape(lead + box.shape)
    for axis in range(box.dim):
        axis_pos = len(lead) + axis
        acc = np.roll(out, -lower, axis=axis_pos)
        for j in range(lower + 1, upper + 1):
            acc = reducer(acc, np.roll(out, -j, axis=axis_pos))
        out = acc
    return out.reshape(values.shape)


def rel_separation(nodes: NodeSet, cube_side: float = 1.0) -> int:
    """Max number of nodes (with multiplicity) in a closed cube [0, side]^d + x"""
    if len(nodes) == 0:
        raise FrameForgeError("empty node set")
    box = nodes.box
    if box.side < 4:
        raise FrameForgeError(f"box side must be at least 4 for unit-cube separation, got {box.side}")
    counts = np.zeros(box.size, dtype=np.int64)
    np.add.at(counts, nodes.flat, 1)
    window = index_span(cube_side, box.step)
    totals = window_reduce(counts, box, 0, window, reducer=np.add)
    return int(totals.max())


def covering_radius(nodes: NodeSet) -> float:
    """Max over grid points of the distance to the nearest node"""
    if len(nodes) == 0:
        raise FrameForgeError("empty node set")
    box = nodes.box
    nearest = np.full(box.size, np.inf)
    grid = box.grid_indices()
    for index in nodes.indices:
        np.minimum(nearest, box.index_distance(grid, index), out=nearest)
    return float(nearest.max())


def is_L_dense(nodes: NodeSet, radius: float) -> bool:
    """True iff every grid point lies at distance < radius from some node"""
    if radius <= 0:
        raise FrameForgeError(f"radius must be positive, got {radius}")
    return covering_radius(nodes) < radius


def weighted_seq_norm(c: np.ndarray, nodes: NodeSet, p: float, v: Optional[Weight] = None) -> float:
    """l^p norm of |c_k| v(position_k)"""
    if p < 1:
        raise FrameForgeError(f"p must lie in [1, inf], got {p}")
    c = np.asarray(c)
    if len(c) != len(nodes):
        raise FrameForgeError(f"{len(c)} coefficients for {len(nodes)} nodes")
    if len(c) == 0:
        return 0.0
    values = np.abs(c) * (v.on_nodes(nodes) if v is not None else 1.0)
    if np.isinf(p):
        return float(values.max())
    return float(np.sum(values ** p) ** (1.0 / p))


def lp_norm(f: np.ndarray, box: Box, p: float, v: Optional[Weight] = None):
    """Weighted L^p norm of grid functions along the last axis (quadrature weight h^d)"""
    if p < 1:
        raise FrameForgeError(f"p must lie in [1, inf], got {p}")
    values = np.abs(np.asarray(f))
    if v is not None:
        values = values * box.weight_values(v)
    if np.isinf(p):
        return values.max(axis=-1)
    return (box.cell_volume * np.sum(values ** p, axis=-1)) ** (1.0 / p)


@dataclass
class ConvolutionReport:
    """Measured constants of the convolution-over-nodes estimates"""
    exponent: float
    dim: int
    rel: int
    sum_constant: float
    tail_radii: np.ndarray
    tail_sums: np.ndarray
    tail_slope: float
    ratio_constant: float
    images: int

    @property
    def expected_slope(self) -> float:
        return -(self.exponent - self.dim)

    @property
    def fitted_K(self) -> float:
        """Smallest K with every measured constant <= K rel"""
        largest = max(self.sum_constant, self.ratio_constant, float(np.max(self.tail_sums, initial=0.0)))
        return largest / self.rel

    @property
    def slope_ok(self) -> bool:
        return bool(np.isfinite(self.tail_slope) and abs(self.tail_slope - self.expected_slope) <= 0.3)

    @property
    def passed(self) -> bool:
        finite = np.isfinite([self.sum_constant, self.ratio_constant]).all()
        return bool(finite and self.slope_ok)


def conv_nodes_check(nodes: NodeSet, t: float, images: Optional[int] = None,
                     tail_radii: Optional[Sequence[float]] = None,
                     chunk: int = 256) -> ConvolutionReport:
    """Evaluate the node sum, its tails and the convolution ratio for w_{-t}.

    The torus node set is lifted periodically (``images`` copies per side and
    axis) so the sums measure the quantities on R^d; ``images=0`` uses the
    centred representatives only.
    """
    box = nodes.box
    d = box.dim
    if t <= d:
        raise FrameForgeError(f"divergent exponent: t={t} must exceed d={d}")
    rel = rel_separation(nodes)
    if images is None:
        images = 64 if d == 1 else 4
    base = box.centered_indices(nodes.indices).astype(float) * box.step
    span = np.arange(-images, images + 1) * box.side
    shifts = np.stack([g.ravel() for g in np.meshgrid(*([span] * d), indexing="ij")], axis=-1)
    lifted = (base[None, :, :] + shifts[:, None, :]).reshape(-1, d)
    radii = np.sqrt(np.sum(lifted ** 2, axis=1))
    decay = (1.0 + radii) ** (-t)

    sum_constant = float(decay.sum())

    if tail_radii is None:
        tail_radii = (box.side / 8, box.side / 6, box.side / 4)
    tail_radii = np.asarray(tail_radii, dtype=float)
    tail_sums = np.array([decay[radii > m].sum() for m in tail_radii])
    if np.all(tail_sums > 0):
        tail_slope = float(stats.linregress(np.log(tail_radii), np.log(tail_sums)).slope)
    else:
        tail_slope = float("nan")

    points = box.centered_indices(box.grid_indices()).astype(float) * box.step
    ratio_constant = 0.0
    for start in range(0, len(points), chunk):
        x = points[start:start + chunk]
        gaps = np.sqrt(np.sum((x[:, None, :] - lifted[None, :, :]) ** 2, axis=-1))
        conv = ((1.0 + gaps) ** (-t)) @ decay
        norm_x = np.sqrt(np.sum(x ** 2, axis=1))
        ratio_constant = max(ratio_constant, float(np.max(conv / (1.0 + norm_x) ** (-t))))

    report = ConvolutionReport(t, d, rel, sum_constant, tail_radii, tail_sums,
                               tail_slope, ratio_constant, images)
    logger.debug(f"conv_nodes_check: sum={sum_constant:.4g} ratio={ratio_constant:.4g} "
                 f"slope={tail_slope:.3f} (expected {report.expected_slope:.3f})")
    return report


def nodeset_to_dict(nodes: NodeSet, weight: Optional[Weight] = None) -> Dict[str, Any]:
    """Structured text form of a node set and optional weight"""
    data = {
        "dim": nodes.box.dim,
        "side": nodes.box.side,
        "points_per_axis": nodes.box.points_per_axis,
        "positions": nodes.positions.tolist(),
    }
    if weight is not None:
        data["weight"] = weight.to_dict()
    return data


def nodeset_from_dict(data: Dict[str, Any]) -> Tuple[NodeSet, Optional[Weight]]:
    try:
        box = Box(int(data["dim"]), float(data["side"]), int(data["points_per_axis"]))
        nodes = NodeSet.from_positions(box, data["positions"])
    except KeyError as e:
        raise FrameForgeError(f"node set record is missing field {e}")
    weight = Weight(float(data["weight"]["t"])) if "weight" in data else None
    return nodes, weight
