#!/usr/bin/env python3
"""
Sampling - reproducing kernels and quilted sampling sets

This module provides:
- Reproducing kernels K_x of the span of a frame
- Sampling bounds of a point set for that span
- Quilting of sampling sets through their kernel families
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from .grid_core import CertificationError, FrameForgeError, NodeSet, Weight, lp_norm, ordered_map
    from .amalgam import AtomFamily
    from .frame_engine import FramePair, SpectrumInfo, canonical_dual, span_basis, spectrum_info
    from .surgery import (Covering, PartitionOfUnity, QuiltedSystem, approx_reconstruct,
                          build_partition, fitted_slope)
except ImportError:
    from grid_core import CertificationError, FrameForgeError, NodeSet, Weight, lp_norm, ordered_map
    from amalgam import AtomFamily
    from frame_engine import FramePair, SpectrumInfo, canonical_dual, span_basis, spectrum_info
    from surgery import (Covering, PartitionOfUnity, QuiltedSystem, approx_reconstruct,
                         build_partition, fitted_slope)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReproducingKernel:
    """K_x with <f, K_x> = f(x) for every f in the span"""
    point: int
    kernel: np.ndarray


def kernel_at(point, frame: FramePair) -> ReproducingKernel:
    """K_x = sum_k conj(g_k(x)) f_k for a grid position ``point``"""
    nodes = NodeSet.from_positions(frame.box, point)
    flat = int(nodes.flat[0])
    return ReproducingKernel(flat, frame.duals.atoms[:, flat].conj() @ frame.atoms.atoms)


def kernel_family(points: NodeSet, frame: FramePair) -> AtomFamily:
    """Kernels K_x for every point (with multiplicity), indexed by ``points``"""
    return AtomFamily(points, frame.duals.atoms[:, points.flat].conj().T @ frame.atoms.atoms)


def sampling_bounds(points: NodeSet, basis: np.ndarray) -> SpectrumInfo:
    """Spectrum of E^H E with E[x, m] = b_m(x); A sum|f|^2 <= sum_x |f(x)|^2 <= B sum|f|^2"""
    if len(points) == 0:
        raise FrameForgeError("empty sampling set")
    evaluation = basis[:, points.flat].T
    return spectrum_info(evaluation.conj().T @ evaluation)


def sampling_constants(points: NodeSet, test_functions: np.ndarray, p: float,
                       v: Optional[Weight] = None) -> Tuple[float, float]:
    """Empirical min/max of ||f|_X||_{l^p_v} / ||f||_{L^p_v} over test functions"""
    box = points.box
    samples = np.asarray(test_functions)[:, points.flat]
    weights = v.on_nodes(points) if v is not None else np.ones(len(points))
    scaled = np.abs(samples) * weights
    if np.isinf(p):
        discrete = scaled.max(axis=1) if len(points) else np.zeros(len(samples))
    else:
        discrete = np.sum(scaled ** p, axis=1) ** (1.0 / p)
    ratios = discrete / lp_norm(test_functions, box, p, v)
    return float(ratios.min()), float(ratios.max())


@dataclass(eq=False)
class SamplingExperiment:
    """Space frame, donor sampling sets and the covering that stitches them"""
    space: FramePair
    donor_sets: List[NodeSet]
    covering: Covering

    def __post_init__(self):
        if len(self.donor_sets) != len(self.covering):
            raise FrameForgeError(f"{len(self.donor_sets)} sampling sets for {len(self.covering)} regions")


@dataclass(frozen=True)
class SamplingRow:
    radius: float
    lower: float
    upper: float
    recon_rel_error: float
    n_points: int


@dataclass
class SamplingTable:
    rows: List[SamplingRow]
    fitted_slope: float

    def csv_rows(self) -> List[Dict[str, float]]:
        return [{"r": row.radius, "A_r": row.lower, "B_r": row.upper,
                 "recon_rel_error": row.recon_rel_error, "n_points": row.n_points}
                for row in self.rows]


def kernel_donor(points: NodeSet, frame: FramePair, basis: np.ndarray, index: int = 0) -> FramePair:
    """Donor pair with analysis kernels K_x and their canonical dual as synthesis"""
    spectrum = sampling_bounds(points, basis)
    if spectrum.lower <= 0 or not spectrum.is_injective:
        raise CertificationError(f"donor set {index} is not a sampling set for the space",
                                 {"donor": index, "lower": spectrum.lower})
    pair = canonical_dual(kernel_family(points, frame))
    return FramePair(pair.duals, pair.atoms, pair.lower_bound, pair.upper_bound)


def quilt_sampling(experiment: SamplingExperiment, radii: Sequence[float], p: float = 2.0,
                   v: Optional[Weight] = None, test_functions: Optional[np.ndarray] = None,
                   partition: Optional[PartitionOfUnity] = None, workers: int = 1) -> SamplingTable:
    """Sampling constants and reconstruction error of the quilted set X^r per radius.

    For p = 2 with the trivial weight A_r, B_r are exact (square roots of the
    extreme eigenvalues of E^H E); otherwise they are measured on ``test_functions``.
    """
    space = experiment.space
    basis = span_basis(space.atoms)
    tests = basis if test_functions is None else np.asarray(test_functions)
    donors = [kernel_donor(points, space, basis, i) for i, points in enumerate(experiment.donor_sets)]
    partition = partition or build_partition(experiment.covering)
    exact = p == 2 and (v is None or v.exponent == 0)
    norms = lp_norm(tests, space.box, p, v)

    def sampling_row(radius: float) -> SamplingRow:
        system = QuiltedSystem.build(donors, experiment.covering, radius)
        merged = system.merged_index
        if len(merged) == 0:
            return SamplingRow(radius, 0.0, 0.0, 1.0, 0)
        if exact:
            spectrum = sampling_bounds(merged, basis)
            lower, upper = float(np.sqrt(spectrum.lower)), float(np.sqrt(spectrum.upper))
        else:
            lower, upper = sampling_constants(merged, tests, p, v)
        errors = lp_norm(approx_reconstruct(system, partition, tests) - tests, space.box, p, v)
        return SamplingRow(radius, lower, upper, float(np.max(errors / norms)), len(merged))

    rows = ordered_map(sampling_row, [float(r) for r in radii], workers)
    slope = fitted_slope([row.radius for row in rows], [row.recon_rel_error for row in rows])
    return SamplingTable(rows, slope)
