#!/usr/bin/env python3
"""
Frame Engine - Gram matrices, frame bounds and canonical duals

This module provides the frame-theoretic core:
- Gram matrix and spectral frame bounds of a family
- Pseudo-inverse by eigendecomposition and by resolvent contour integral
- Canonical dual families and reconstruction on the closed span
- Exterior frame pairs for a subspace
- Radial decay fitting of families
- Boundedness estimate for operators acting on the span
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg, stats

try:
    from .grid_core import CertificationError, FrameForgeError, GRID_EPS, Weight, ordered_map, lp_norm
    from .amalgam import (AtomFamily, BoundCheck, SchurMatrix, analyze, cross_correlation,
                          family_amalgam_norm, matrix_apply, synthesize)
except ImportError:
    from grid_core import CertificationError, FrameForgeError, GRID_EPS, Weight, ordered_map, lp_norm
    from amalgam import (AtomFamily, BoundCheck, SchurMatrix, analyze, cross_correlation,
                         family_amalgam_norm, matrix_apply, synthesize)

logger = logging.getLogger(__name__)

# Default rank cutoff, relative to the largest eigenvalue
RANK_RTOL = 1e-10


def _threshold(eigenvalues: np.ndarray, rank_threshold: Optional[float]) -> float:
    if rank_threshold is not None:
        return rank_threshold
    return RANK_RTOL * max(float(np.max(eigenvalues, initial=0.0)), 0.0)


@dataclass(frozen=True)
class SpectrumInfo:
    """Eigenvalues of a positive semidefinite operator with its numerical rank"""
    eigenvalues: np.ndarray
    rank: int
    gap: float

    @property
    def upper(self) -> float:
        return max(float(np.max(self.eigenvalues, initial=0.0)), 0.0)

    @property
    def lower(self) -> float:
        if self.eigenvalues.size == 0:
            return 0.0
        return max(float(self.eigenvalues.min()), 0.0)

    @property
    def is_injective(self) -> bool:
        return self.eigenvalues.size > 0 and self.rank == self.eigenvalues.size


def spectrum_info(matrix: np.ndarray, rank_threshold: Optional[float] = None) -> SpectrumInfo:
    """Ascending eigenvalues, numerical rank and smallest nonzero eigenvalue"""
    matrix = np.asarray(matrix)
    if matrix.size == 0:
        return SpectrumInfo(np.zeros(0), 0, 0.0)
    eigenvalues = linalg.eigvalsh(matrix)
    threshold = _threshold(eigenvalues, rank_threshold)
    significant = eigenvalues[eigenvalues > threshold]
    gap = float(significant.min()) if significant.size else 0.0
    return SpectrumInfo(eigenvalues, int(significant.size), gap)


def gram(family: AtomFamily) -> SchurMatrix:
    """Gram matrix C_kj = <f_k, f_j> indexed by the family nodes"""
    return cross_correlation(family, family)


def frame_bounds(family: AtomFamily, rank_threshold: Optional[float] = None) -> SpectrumInfo:
    """Frame bounds on the closed span: A = smallest nonzero, B = largest Gram eigenvalue"""
    if family.is_zero:
        raise FrameForgeError("zero family")
    return spectrum_info(gram(family).entries, rank_threshold)


def pseudo_inverse_svd(matrix: np.ndarray, rank_threshold: Optional[float] = None) -> np.ndarray:
    """Moore-Penrose inverse of a Hermitian PSD matrix by eigendecomposition"""
    matrix = np.asarray(matrix)
    eigenvalues, vectors = linalg.eigh(matrix)
    threshold = _threshold(eigenvalues, rank_threshold)
    inverted = np.zeros_like(eigenvalues)
    keep = eigenvalues > threshold
    inverted[keep] = 1.0 / eigenvalues[keep]
    result = (vectors * inverted) @ vectors.conj().T
    return result.real if np.isrealobj(matrix) else result


def contour_points(gap: float, top: float, num_quad: int):
    """Gauss-Legendre nodes and weights dz on the rectangle around [A, ||M||].

    Vertices A/2 - i, ||M|| + A/2 - i, ||M|| + A/2 + i, A/2 + i, traversed
    counterclockwise, ``num_quad`` nodes per side.
    """
    vertices = [gap / 2 - 1j, top + gap / 2 - 1j, top + gap / 2 + 1j, gap / 2 + 1j]
    nodes, weights = np.polynomial.legendre.leggauss(num_quad)
    points, steps = [], []
    for start, end in zip(vertices, vertices[1:] + vertices[:1]):
        half = (end - start) / 2
        points.append((start + end) / 2 + half * nodes)
        steps.append(half * weights)
    return np.concatenate(points), np.concatenate(steps)


def pseudo_inverse_contour(matrix: np.ndarray, gap: float, num_quad: int = 64,
                           rank_threshold: Optional[float] = None, workers: int = 1) -> np.ndarray:
    """Pseudo-inverse as (1/2 pi i) contour integral of z^-1 (z - M)^-1.

    The contour encloses [A, ||M||] and excludes 0; every nonzero eigenvalue
    must be at least ``gap``.
    """
    matrix = np.asarray(matrix)
    if num_quad < 8:
        raise FrameForgeError(f"num_quad must be at least 8 per rectangle side, got {num_quad}")
    if gap <= 0:
        raise FrameForgeError(f"gap must be positive, got {gap}")
    eigenvalues = linalg.eigvalsh(matrix)
    threshold = _threshold(eigenvalues, rank_threshold)
    inside = eigenvalues[(eigenvalues > threshold) & (eigenvalues < gap * (1 - 1e-12))]
    if inside.size:
        raise FrameForgeError(
            f"spectral gap violated: eigenvalue {inside.min():.6g} is below the gap {gap:.6g}")
    top = max(float(eigenvalues.max()), 0.0)
    points, steps = contour_points(gap, top, num_quad)
    identity = np.eye(matrix.shape[0])

    def resolvent_term(k: int) -> np.ndarray:
        z = points[k]
        return steps[k] / z * linalg.solve(z * identity - matrix, identity)

    terms = ordered_map(resolvent_term, range(len(points)), workers)
    total = np.zeros(matrix.shape, dtype=complex)
    for term in terms:
        total += term
    result = total / (2j * np.pi)
    return result.real if np.isrealobj(matrix) else result


@dataclass(eq=False)
class FramePair:
    """Synthesis atoms f_k with analysis duals g_k: f = sum <f, g_k> f_k on the span"""
    atoms: AtomFamily
    duals: AtomFamily
    lower_bound: float
    upper_bound: float

    def __post_init__(self):
        if len(self.atoms) != len(self.duals):
            raise FrameForgeError(f"{len(self.atoms)} atoms paired with {len(self.duals)} duals")
        if self.atoms.box != self.duals.box:
            raise FrameForgeError("atoms and duals live on different boxes")
        if self.lower_bound <= 0:
            raise FrameForgeError(f"frame lower bound must be positive, got {self.lower_bound}")
        if self.upper_bound < self.lower_bound * (1 - 1e-12):
            raise FrameForgeError(f"frame bounds out of order: {self.lower_bound} > {self.upper_bound}")

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def box(self):
        return self.atoms.box

    @property
    def nodes(self):
        return self.atoms.nodes

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        return analyze(f, self.duals)

    def reconstruct(self, f: np.ndarray) -> np.ndarray:
        """sum_k <f, g_k> f_k, batched over leading axes"""
        return synthesize(self.coefficients(f), self.atoms)


def canonical_dual(family: AtomFamily, rank_threshold: Optional[float] = None,
                   method: str = "svd", num_quad: int = 64, workers: int = 1) -> FramePair:
    """Canonical dual g_k = sum_j (C^+)_kj f_j of a frame for its closed span"""
    spectrum = frame_bounds(family, rank_threshold)
    matrix = gram(family)
    if method == "contour":
        inverse = pseudo_inverse_contour(matrix.entries, spectrum.gap, num_quad, rank_threshold, workers)
    elif method == "svd":
        inverse = pseudo_inverse_svd(matrix.entries, rank_threshold)
    else:
        raise FrameForgeError(f"unknown pseudo-inverse method '{method}'")
    duals = matrix_apply(SchurMatrix(inverse, family.nodes, family.nodes), family)
    logger.debug(f"canonical dual ({method}): n={len(family)} rank={spectrum.rank} "
                 f"A={spectrum.gap:.4g} B={spectrum.upper:.4g}")
    return FramePair(family, duals, spectrum.gap, spectrum.upper)


class SpaceProjector:
    """Orthogonal projection onto the closed span of a frame"""

    def __init__(self, pair: FramePair):
        self.pair = pair

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return self.pair.reconstruct(f)


def universal_projector(family: AtomFamily, rank_threshold: Optional[float] = None) -> SpaceProjector:
    return SpaceProjector(canonical_dual(family, rank_threshold))


def span_basis(family: AtomFamily, rank_threshold: Optional[float] = None) -> np.ndarray:
    """Rows form an orthonormal basis (grid inner product) of the closed span"""
    if family.is_zero:
        raise FrameForgeError("zero family")
    scale = np.sqrt(family.box.cell_volume)
    _, singular, vh = linalg.svd(scale * family.atoms, full_matrices=False)
    threshold = _threshold(singular ** 2, rank_threshold)
    rank = int(np.sum(singular ** 2 > threshold))
    return vh[:rank] / scale


def exterior_frame_pair(space: FramePair, analysis: AtomFamily,
                        rank_threshold: Optional[float] = None) -> FramePair:
    """Frame pair for span(space) with analysis family ``analysis`` lying outside it.

    The synthesis family is the canonical dual of the projected family P phi_k.
    """
    projected = AtomFamily(analysis.nodes, space.reconstruct(analysis.atoms))
    space_rank = frame_bounds(space.atoms, rank_threshold).rank
    if projected.is_zero:
        raise CertificationError("analysis family is orthogonal to the space",
                                 {"space_rank": space_rank, "rank": 0})
    spectrum = frame_bounds(projected, rank_threshold)
    if spectrum.rank < space_rank:
        raise CertificationError(
            f"analysis family does not span the space (rank {spectrum.rank} < {space_rank})",
            {"space_rank": space_rank, "rank": spectrum.rank})
    synthesis = canonical_dual(projected, rank_threshold).duals
    return FramePair(synthesis, analysis, spectrum.gap, spectrum.upper)


@dataclass(frozen=True)
class DecayFit:
    """Fitted radial envelope C (1 + r)^(-s)"""
    constant: float
    exponent: float
    radii: np.ndarray
    maxima: np.ndarray


def decay_fit(family: AtomFamily, max_exponent: Optional[float] = None,
              noise_floor: float = 1e-12) -> DecayFit:
    """Fit log max|f_k| against log(1 + r) over unit annuli up to L/2"""
    if family.is_zero:
        raise FrameForgeError("zero family")
    distances = family.node_distances()
    magnitudes = np.abs(family.atoms)
    half = family.box.side / 2
    bins = np.floor(distances + GRID_EPS).astype(int)
    floor = noise_floor * magnitudes.max()
    radii, maxima = [], []
    for annulus in range(int(np.floor(half + GRID_EPS)) + 1):
        mask = (bins == annulus) & (distances <= half + GRID_EPS)
        if not mask.any():
            continue
        peak = float(magnitudes[mask].max())
        if peak > floor:
            radii.append(float(distances[mask].min()))
            maxima.append(peak)
    if len(radii) < 3:
        raise FrameForgeError(f"insufficient radial range: {len(radii)} annuli above the noise floor")
    radii, maxima = np.asarray(radii), np.asarray(maxima)
    fit = stats.linregress(np.log1p(radii), np.log(maxima))
    exponent = -float(fit.slope)
    if max_exponent is not None:
        exponent = min(exponent, max_exponent)
    return DecayFit(float(np.exp(fit.intercept)), exponent, radii, maxima)


def operator_bound_check(pair: FramePair, operator: Callable[[np.ndarray], np.ndarray],
                         samples: np.ndarray, p: float = 2.0, w: Optional[Weight] = None,
                         cube_side: float = 1.0) -> BoundCheck:
    """Measured ||T||_{L^p} on span samples against ||G||_W ||T(F)||_W"""
    w = w or Weight(0.0)
    image = pair.atoms.with_atoms(np.stack([operator(atom) for atom in pair.atoms.atoms]))
    samples = np.atleast_2d(samples)
    measured = 0.0
    for f in samples:
        norm = float(lp_norm(f, pair.box, p))
        if norm > 0:
            measured = max(measured, float(lp_norm(operator(f), pair.box, p)) / norm)
    bound = (family_amalgam_norm(pair.duals, w, cube_side).value
             * family_amalgam_norm(image, w, cube_side).value)
    return BoundCheck(measured, bound)
