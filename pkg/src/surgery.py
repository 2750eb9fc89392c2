#!/usr/bin/env python3
"""
Surgery - quilting frames from local pieces

This module assembles a quilted system from donor frame pairs:
- Coverings of the box and their overlap / local finiteness counts
- Partitions of unity subordinate to a covering
- Node selection within distance r of each covering region
- Approximate reconstruction operator and its deviation from the identity
- Frame bounds and a certified lower bound for the quilted family
- Error sweeps over selection radii with fitted decay
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

try:
    from .grid_core import (Box, FrameForgeError, NodeSet, Weight, index_span, lp_norm,
                            ordered_map, rel_separation, window_reduce)
    from .amalgam import analyze
    from .frame_engine import FramePair, SpectrumInfo, spectrum_info
except ImportError:
    from grid_core import (Box, FrameForgeError, NodeSet, Weight, index_span, lp_norm,
                           ordered_map, rel_separation, window_reduce)
    from amalgam import analyze
    from frame_engine import FramePair, SpectrumInfo, spectrum_info

logger = logging.getLogger(__name__)

# Columns of the error sweep table, in output order
SWEEP_COLUMNS = ["r", "p", "weight_exponent", "worst_rel_error", "fitted_slope",
                 "lower_bound", "upper_bound", "overlap_count", "monotone"]
MONOTONE_SLACK = 1.1


class Covering:
    """Finite family of regions E_i given as boolean grid masks"""

    def __init__(self, box: Box, regions: np.ndarray):
        regions = np.asarray(regions, dtype=bool)
        if regions.ndim == 1:
            regions = regions[None, :]
        if regions.shape[1] != box.size:
            raise FrameForgeError(f"region masks have {regions.shape[1]} points, grid has {box.size}")
        self.box = box
        self.regions = regions
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def __len__(self) -> int:
        return len(self.regions)

    def __repr__(self) -> str:
        return f"Covering(regions={len(self)}, box={self.box})"

    @classmethod
    def from_axis_intervals(cls, box: Box, intervals: Sequence[Tuple[float, float]],
                            axis: int = 0) -> "Covering":
        """Slabs {x : a <= x_axis <= b} (closed, periodic)"""
        if not 0 <= axis < box.dim:
            raise FrameForgeError(f"axis {axis} out of range for dimension {box.dim}")
        coordinate = box.positions()[:, axis]
        regions = []
        for start, end in intervals:
            length = end - start
            if length < 0:
                raise FrameForgeError(f"empty interval [{start}, {end}]")
            if length >= box.side:
                regions.append(np.ones(box.size, dtype=bool))
            else:
                regions.append(np.mod(coordinate - start, box.side) <= length + 1e-9)
        return cls(box, np.array(regions))

    @classmethod
    def from_intervals(cls, box: Box, intervals: Sequence[Tuple[float, float]]) -> "Covering":
        return cls.from_axis_intervals(box, intervals, axis=0)

    @classmethod
    def whole(cls, box: Box) -> "Covering":
        return cls(box, np.ones((1, box.size), dtype=bool))

    @classmethod
    def random_boxes(cls, box: Box, count: int, rng: np.random.Generator,
                     max_margin: float = 1.0) -> "Covering":
        """Nearest-centre cells around random centres, each grown by a random margin"""
        grid = box.grid_indices()
        centres = grid[rng.choice(box.size, size=count, replace=False)]
        distances = box.index_distance(grid[None, :, :], centres[:, None, :])
        owner = np.argmin(distances, axis=0)
        regions = owner[None, :] == np.arange(count)[:, None]
        grown = []
        for region in regions:
            steps = int(rng.integers(0, index_span(max_margin, box.step) + 1))
            grown.append(window_reduce(region, box, -steps, steps, reducer=np.logical_or))
        return cls(box, np.array(grown))

    @property
    def is_covering(self) -> bool:
        return bool(self.regions.any(axis=0).all())

    @property
    def overlap_count(self) -> int:
        """max_x #{i : x in E_i}"""
        return int(self.regions.sum(axis=0).max())

    @property
    def local_finiteness(self) -> int:
        return self.local_finiteness_with_margin(0.0)

    def local_finiteness_with_margin(self, margin: float, cube_side: float = 1.0) -> int:
        """max_x #{i : E_i meets x + Q'} with Q' the unit cube grown by ``margin``"""
        grow = index_span(margin, self.box.step)
        upper = index_span(cube_side, self.box.step) + grow
        touched = window_reduce(self.regions, self.box, -grow, upper, reducer=np.logical_or)
        return int(touched.sum(axis=0).max())

    def region_cells(self, i: int) -> np.ndarray:
        return self.box.grid_indices()[self.regions[i]]


@dataclass(eq=False)
class PartitionOfUnity:
    """Weights eta_i >= 0, supported in E_i, summing to one"""
    covering: Covering
    weights: np.ndarray

    def total(self) -> np.ndarray:
        return self.weights.sum(axis=0)


def build_partition(covering: Covering) -> PartitionOfUnity:
    """eta_i = chi_{E_i} / sum_j chi_{E_j}"""
    counts = covering.regions.sum(axis=0)
    if np.any(counts == 0):
        first = int(np.argmax(counts == 0))
        position = covering.box.grid_indices()[first] * covering.box.step
        raise FrameForgeError(f"not a covering: grid point {position.tolist()} lies in no region")
    weights = covering.regions / counts[None, :]
    return PartitionOfUnity(covering, weights)


def selection_mask(nodes: NodeSet, region: np.ndarray, radius: float, chunk: int = 64) -> np.ndarray:
    """Nodes whose torus distance to the region is at most ``radius``"""
    box = nodes.box
    cells = box.grid_indices()[np.asarray(region, dtype=bool)]
    selected = np.zeros(len(nodes), dtype=bool)
    if len(cells) == 0 or len(nodes) == 0:
        return selected
    for start in range(0, len(nodes), chunk):
        block = nodes.indices[start:start + chunk]
        nearest = box.index_distance(block[:, None, :], cells[None, :, :]).min(axis=1)
        selected[start:start + chunk] = nearest <= radius + 1e-9
    return selected


def select_nodes(nodes: NodeSet, region: np.ndarray, radius: float) -> NodeSet:
    return nodes.subset(selection_mask(nodes, region, radius))


@dataclass(frozen=True)
class RelBound:
    """Separation of the merged index set against its covering bound"""
    quilt_rel: int
    local_finiteness: int
    donor_rel: int

    @property
    def bound(self) -> int:
        return self.local_finiteness * self.donor_rel

    @property
    def holds(self) -> bool:
        return self.quilt_rel <= self.bound


@dataclass(eq=False)
class QuiltedSystem:
    """Donor pairs restricted to the nodes selected near their covering region"""
    donors: List[FramePair]
    covering: Covering
    radius: float
    selection: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def build(cls, donors: Sequence[FramePair], covering: Covering, radius: float) -> "QuiltedSystem":
        if len(donors) != len(covering):
            raise FrameForgeError(f"{len(donors)} donors for {len(covering)} covering regions")
        if radius < 0:
            raise FrameForgeError(f"selection radius must be non-negative, got {radius}")
        for donor in donors:
            if donor.box != covering.box:
                raise FrameForgeError("donor and covering live on different boxes")
        selection = [selection_mask(donor.nodes, covering.regions[i], radius)
                     for i, donor in enumerate(donors)]
        system = cls(list(donors), covering, radius, selection)
        logger.debug(f"quilt r={radius}: selected {[int(s.sum()) for s in selection]} nodes")
        return system

    @property
    def size(self) -> int:
        return int(sum(mask.sum() for mask in self.selection))

    @property
    def merged_index(self) -> NodeSet:
        """Disjoint union of the selected donor nodes, labelled (donor, node label)"""
        box = self.covering.box
        indices, labels = [], []
        for i, (donor, mask) in enumerate(zip(self.donors, self.selection)):
            chosen = donor.nodes.subset(mask)
            indices.append(chosen.indices)
            labels.extend((i, label) for label in chosen.labels)
        if not indices:
            return NodeSet(box, np.zeros((0, box.dim), dtype=int))
        return NodeSet(box, np.concatenate(indices), tuple(labels))

    def product_weight(self, v: Weight) -> np.ndarray:
        return v.on_nodes(self.merged_index)

    def analysis_atoms(self) -> np.ndarray:
        """Selected duals phi^i_k stacked donor by donor"""
        rows = [donor.duals.atoms[mask] for donor, mask in zip(self.donors, self.selection)]
        return np.concatenate(rows) if rows else np.zeros((0, self.covering.box.size))

    def synthesis_atoms(self, partition: PartitionOfUnity) -> np.ndarray:
        """Selected synthesis atoms psi^i_k eta_i stacked donor by donor"""
        rows = [donor.atoms.atoms[mask] * partition.weights[i]
                for i, (donor, mask) in enumerate(zip(self.donors, self.selection))]
        return np.concatenate(rows) if rows else np.zeros((0, self.covering.box.size))

    def rel_bound_check(self, margin: float = 0.0) -> RelBound:
        donor_rel = max(rel_separation(donor.nodes) for donor in self.donors)
        merged = self.merged_index
        quilt_rel = rel_separation(merged) if len(merged) else 0
        return RelBound(quilt_rel, self.covering.local_finiteness_with_margin(margin), donor_rel)


def approx_reconstruct(system: QuiltedSystem, partition: PartitionOfUnity, f: np.ndarray) -> np.ndarray:
    """A^r f = sum_i eta_i sum_{k selected} <f, phi^i_k> psi^i_k, batched over leading axes"""
    f = np.asarray(f)
    total = np.zeros(f.shape, dtype=complex)
    for i, (donor, mask) in enumerate(zip(system.donors, system.selection)):
        if not mask.any():
            continue
        coefficients = analyze(f, donor.duals.subset(mask))
        total += (coefficients @ donor.atoms.atoms[mask]) * partition.weights[i]
    return total


def operator_deviation(system: QuiltedSystem, partition: PartitionOfUnity, basis: np.ndarray) -> float:
    """||A^r - I|| on the span of the orthonormal ``basis`` rows"""
    difference = approx_reconstruct(system, partition, basis) - basis
    scale = np.sqrt(system.covering.box.cell_volume)
    return float(linalg.svdvals(scale * difference).max())


def synthesis_norm(system: QuiltedSystem, partition: PartitionOfUnity) -> float:
    """Operator norm of c -> sum c_(i,k) psi^i_k eta_i on l^2"""
    atoms = system.synthesis_atoms(partition)
    if len(atoms) == 0:
        return 0.0
    return float(linalg.svdvals(np.sqrt(system.covering.box.cell_volume) * atoms).max())


def analysis_spectrum(atoms: np.ndarray, basis: np.ndarray, box: Box) -> SpectrumInfo:
    """Spectrum of C^H C where C[k, m] = <b_m, atom_k>; frame bounds on span(basis)"""
    coefficients = box.cell_volume * (np.asarray(atoms).conj() @ basis.T)
    return spectrum_info(coefficients.conj().T @ coefficients)


def quilted_frame_bounds(system: QuiltedSystem, basis: np.ndarray) -> SpectrumInfo:
    if system.size == 0:
        raise FrameForgeError("empty quilt")
    return analysis_spectrum(system.analysis_atoms(), basis, system.covering.box)


@dataclass(frozen=True)
class QuiltCertificate:
    """Deviation of A^r from the identity and the frame bound it certifies"""
    radius: float
    deviation: float
    synthesis_norm: float
    spectrum: Optional[SpectrumInfo]

    @property
    def certified(self) -> bool:
        return self.deviation < 1 and self.synthesis_norm > 0

    @property
    def certified_lower(self) -> float:
        """(1 - delta)^2 / ||R||^2, a lower frame bound for the quilted family"""
        if not self.certified:
            return 0.0
        return (1 - self.deviation) ** 2 / self.synthesis_norm ** 2

    @property
    def consistent(self) -> bool:
        if not self.certified or self.spectrum is None:
            return True
        return self.spectrum.lower >= self.certified_lower * (1 - 1e-9)


def certify_quilt(system: QuiltedSystem, partition: PartitionOfUnity, basis: np.ndarray) -> QuiltCertificate:
    deviation = operator_deviation(system, partition, basis)
    spectrum = quilted_frame_bounds(system, basis) if system.size else None
    certificate = QuiltCertificate(system.radius, deviation, synthesis_norm(system, partition), spectrum)
    if certificate.certified:
        logger.info(f"r={system.radius}: deviation {deviation:.3e}, certified lower bound "
                    f"{certificate.certified_lower:.4g}")
    else:
        logger.info(f"r={system.radius}: deviation {deviation:.3e}, not certified")
    return certificate


@dataclass(frozen=True)
class SweepRow:
    radius: float
    p: float
    weight_exponent: float
    worst_rel_error: float
    lower_bound: float
    upper_bound: float
    overlap_count: int


@dataclass
class SweepTable:
    """Error sweep rows with the fitted decay of the reconstruction error"""
    rows: List[SweepRow]
    fitted_slope: float
    fitted_constant: Optional[float] = None
    monotone: bool = True

    def csv_rows(self) -> List[Dict[str, object]]:
        return [{"r": row.radius, "p": row.p, "weight_exponent": row.weight_exponent,
                 "worst_rel_error": row.worst_rel_error, "fitted_slope": self.fitted_slope,
                 "lower_bound": row.lower_bound, "upper_bound": row.upper_bound,
                 "overlap_count": row.overlap_count, "monotone": self.monotone} for row in self.rows]


def fitted_slope(radii: Sequence[float], errors: Sequence[float], floor: float = 1e-13) -> float:
    """Slope of log error against log r (middle three radii when five or more)"""
    pairs = [(r, e) for r, e in zip(radii, errors) if r > 0 and e > floor]
    if len(pairs) >= 5:
        middle = len(pairs) // 2
        pairs = pairs[middle - 1:middle + 2]
    if len(pairs) < 2:
        return float("nan")
    r, e = np.array(pairs).T
    return float(stats.linregress(np.log(r), np.log(e)).slope)


def is_monotone(errors: Sequence[float], slack: float = MONOTONE_SLACK, floor: float = 1e-13) -> bool:
    """errors[i+1] <= slack * errors[i] for consecutive radii; values under ``floor`` count as zero"""
    values = [max(float(e), floor) for e in errors]
    return all(b <= slack * a for a, b in zip(values, values[1:]))


def error_sweep(donors: Sequence[FramePair], covering: Covering, partition: PartitionOfUnity,
                radii: Sequence[float], test_functions: np.ndarray, p: float = 2.0,
                v: Optional[Weight] = None, basis: Optional[np.ndarray] = None,
                decay_exponent: Optional[float] = None, workers: int = 1) -> SweepTable:
    """Worst relative reconstruction error ||A^r f - f|| / ||f|| for each radius"""
    radii = [float(r) for r in radii]
    if len(radii) < 2 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise FrameForgeError(f"radii must be strictly increasing, got {radii}")
    box = covering.box
    norms = lp_norm(test_functions, box, p, v)
    if np.any(norms <= 0):
        raise FrameForgeError("test functions must be nonzero")
    overlap = covering.overlap_count

    def sweep_row(radius: float) -> SweepRow:
        system = QuiltedSystem.build(donors, covering, radius)
        errors = lp_norm(approx_reconstruct(system, partition, test_functions) - test_functions, box, p, v)
        lower = upper = float("nan")
        if basis is not None and system.size:
            spectrum = quilted_frame_bounds(system, basis)
            lower, upper = spectrum.lower, spectrum.upper
        weight_exponent = v.exponent if v is not None else 0.0
        return SweepRow(radius, p, weight_exponent, float(np.max(errors / norms)), lower, upper, overlap)

    rows = ordered_map(sweep_row, radii, workers)
    errors = [row.worst_rel_error for row in rows]
    slope = fitted_slope(radii, errors)
    constant = None
    if decay_exponent is not None:
        scaled = [e * r ** (decay_exponent - box.dim) / overlap for r, e in zip(radii, errors) if r > 0]
        constant = float(max(scaled)) if scaled else None
    monotone = is_monotone(errors)
    if not monotone:
        logger.warning(f"error sweep p={p}: error grows with the radius ({errors})")
    logger.info(f"error sweep p={p}: slope {slope:.3f} over radii {radii}")
    return SweepTable(rows, slope, constant, monotone)
