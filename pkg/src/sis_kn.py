#!/usr/bin/env python3
"""
SIS / KN - shift-invariant spaces and Kohn-Nirenberg symbols

This module provides:
- Commensurate lattices on the periodic box and their fiber structure
- Brackets [f, g] and fiber Gram matrices of generator tuples
- Quilting of shift-invariant systems through fiber-wise dual generators
- Rank-one Kohn-Nirenberg symbols and their STFT identity
- Gabor multipliers and recovery of their masks from probe families
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

try:
    from .grid_core import (Box, CertificationError, FrameForgeError, NodeSet, is_whole,
                            ordered_map)
    from .amalgam import AtomFamily, Envelope
    from .frame_engine import FramePair, span_basis
    from .surgery import (Covering, PartitionOfUnity, QuiltedSystem, analysis_spectrum,
                          build_partition, operator_deviation, quilted_frame_bounds, selection_mask)
    from .gabor_tf import TFLattice, tf_box
except ImportError:
    from grid_core import (Box, CertificationError, FrameForgeError, NodeSet, is_whole,
                           ordered_map)
    from amalgam import AtomFamily, Envelope
    from frame_engine import FramePair, span_basis
    from surgery import (Covering, PartitionOfUnity, QuiltedSystem, analysis_spectrum,
                         build_partition, operator_deviation, quilted_frame_bounds, selection_mask)
    from gabor_tf import TFLattice, tf_box

logger = logging.getLogger(__name__)

# Fibers whose smallest singular value falls below this fraction of the largest are singular
FIBER_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class LatticePair:
    """Lattice A Z^d on the box (generator columns) with its dual lattice"""
    box: Box
    generator: np.ndarray

    def __post_init__(self):
        d = self.box.dim
        generator = np.asarray(self.generator, dtype=float).reshape(d, d)
        object.__setattr__(self, "generator", generator)
        if abs(np.linalg.det(generator)) < 1e-12:
            raise FrameForgeError("lattice generator must be invertible")
        if not all(is_whole(v) for v in (generator / self.box.step).ravel()):
            raise FrameForgeError("incommensurate lattice: generator is not on the grid")
        periods = np.linalg.solve(generator, self.box.side * np.eye(d))
        if not all(is_whole(v) for v in periods.ravel()):
            raise FrameForgeError("incommensurate lattice: box period is not a lattice vector")

    @classmethod
    def diagonal(cls, box: Box, steps: Sequence[float]) -> "LatticePair":
        return cls(box, np.diag(np.asarray(steps, dtype=float).reshape(box.dim)))

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.generator)))

    @property
    def dual_generator(self) -> np.ndarray:
        return np.linalg.inv(self.generator).T

    def step_indices(self) -> np.ndarray:
        """Generator columns in grid steps"""
        return np.rint(self.generator / self.box.step).astype(int)

    def points(self) -> NodeSet:
        """All lattice points in the box, in discovery order from the origin"""
        n = self.box.points_per_axis
        steps = self.step_indices().T
        origin = (0,) * self.box.dim
        seen = {origin}
        order = [origin]
        frontier = [origin]
        while frontier:
            following = []
            for point in frontier:
                for step in steps:
                    nxt = tuple(int(v) for v in np.mod(np.add(point, step), n))
                    if nxt not in seen:
                        seen.add(nxt)
                        order.append(nxt)
                        following.append(nxt)
            frontier = following
        return NodeSet(self.box, np.array(sorted(order)))

    def fiber_labels(self) -> Tuple[np.ndarray, np.ndarray]:
        """Class label of every frequency and the class keys in the dual torus.

        Two frequencies share a fiber iff they differ by a dual lattice vector,
        i.e. iff their characters agree on every generator.
        """
        n = self.box.points_per_axis
        frequencies = self.box.grid_indices()
        characters = np.mod(frequencies @ self.step_indices(), n)
        keys, labels = np.unique(characters, axis=0, return_inverse=True)
        return labels.reshape(-1), keys / n

    @property
    def fiber_keys(self) -> np.ndarray:
        return self.fiber_labels()[1]


def fourier(f: np.ndarray, box: Box) -> np.ndarray:
    """f^(xi_m) = h^d sum_x f(x) exp(-2 pi i x . xi_m), xi_m = m / L, flattened"""
    f = np.asarray(f)
    lead = f.shape[:-1]
    spectrum = np.fft.fftn(f.reshape(lead + box.shape), axes=tuple(range(len(lead), len(lead) + box.dim)))
    return box.cell_volume * spectrum.reshape(lead + (box.size,))


def inverse_fourier(values: np.ndarray, box: Box) -> np.ndarray:
    values = np.asarray(values)
    lead = values.shape[:-1]
    signal = np.fft.ifftn(values.reshape(lead + box.shape), axes=tuple(range(len(lead), len(lead) + box.dim)))
    return signal.reshape(lead + (box.size,)) / box.cell_volume


@dataclass(frozen=True)
class BracketValues:
    keys: np.ndarray
    values: np.ndarray


def bracket(f: np.ndarray, g: np.ndarray, lattice: LatticePair) -> BracketValues:
    """[f, g](x) = sum over the fiber of x of f^ conj(g^)"""
    labels, keys = lattice.fiber_labels()
    product = fourier(f, lattice.box) * fourier(g, lattice.box).conj()
    values = (np.bincount(labels, weights=product.real, minlength=len(keys))
              + 1j * np.bincount(labels, weights=product.imag, minlength=len(keys)))
    return BracketValues(keys, values)


def bracket_on_grid(f: np.ndarray, g: np.ndarray, lattice: LatticePair) -> np.ndarray:
    """Bracket spread back over the full frequency grid (dual-lattice periodic)"""
    labels, _ = lattice.fiber_labels()
    return bracket(f, g, lattice).values[labels]


def translate(f: np.ndarray, shift_index: Sequence[int], box: Box) -> np.ndarray:
    """T_lambda f for a lattice point given in grid steps"""
    moved = np.roll(np.asarray(f).reshape(box.shape), tuple(int(s) for s in shift_index),
                    axis=tuple(range(box.dim)))
    return moved.reshape(box.size)


def translate_family(generators: np.ndarray, lattice: LatticePair,
                     envelope: Optional[Envelope] = None) -> AtomFamily:
    """T_lambda g_n for every generator n and lattice point lambda (generator-major)"""
    generators = np.atleast_2d(generators)
    points = lattice.points()
    atoms = [translate(g, shift, lattice.box) for g in generators for shift in points.indices]
    nodes = NodeSet(lattice.box, np.tile(points.indices, (len(generators), 1)),
                    tuple((n, label) for n in range(len(generators)) for label in points.labels))
    return AtomFamily(nodes, np.array(atoms), envelope)


@dataclass(eq=False)
class FiberGram:
    """Fiber matrices G(x)_{n,m} = [f_n, g_m](x) with their conditioning"""
    keys: np.ndarray
    matrices: np.ndarray
    norms: np.ndarray
    inverse_norms: np.ndarray
    singular_fibers: List[Tuple[float, ...]]
    lattice_volume: float

    @property
    def sup_norm(self) -> float:
        return float(self.norms.max())

    @property
    def sup_inverse_norm(self) -> float:
        return float(self.inverse_norms.max())

    @property
    def is_uniformly_invertible(self) -> bool:
        return not self.singular_fibers

    def riesz_bounds(self) -> Tuple[float, float]:
        """Riesz bounds of the translate system (Hermitian fibers only)"""
        eigenvalues = np.linalg.eigvalsh(self.matrices)
        return (float(eigenvalues.min()) / self.lattice_volume,
                float(eigenvalues.max()) / self.lattice_volume)


def fiber_gram(first: np.ndarray, second: np.ndarray, lattice: LatticePair,
               threshold: float = FIBER_RTOL, workers: int = 1) -> FiberGram:
    first, second = np.atleast_2d(first), np.atleast_2d(second)
    labels, keys = lattice.fiber_labels()
    first_hat = fourier(first, lattice.box)
    second_hat = fourier(second, lattice.box)
    products = first_hat.T[:, :, None] * second_hat.T.conj()[:, None, :]
    matrices = np.zeros((len(keys),) + products.shape[1:], dtype=complex)
    np.add.at(matrices, labels, products)

    singular_values = ordered_map(linalg.svdvals, list(matrices), workers)
    norms = np.array([s.max() for s in singular_values])
    square = matrices.shape[1] == matrices.shape[2]
    smallest = np.array([s.min() if square else 0.0 for s in singular_values])
    cutoff = threshold * max(float(norms.max()), np.finfo(float).tiny)
    singular = smallest <= cutoff
    with np.errstate(divide="ignore"):
        inverse_norms = np.where(singular, np.inf, 1.0 / np.where(singular, 1.0, smallest))
    singular_keys = [tuple(float(v) for v in keys[c]) for c in np.flatnonzero(singular)]
    return FiberGram(keys, matrices, norms, inverse_norms, singular_keys, lattice.volume)


def sis_dual_generators(reference: np.ndarray, donor: np.ndarray, lattice: LatticePair,
                        threshold: float = FIBER_RTOL) -> np.ndarray:
    """Generators psi_n of the synthesis system paired with translates of ``donor``.

    psi^_n(xi) = |det A| sum_m (G(x)^-1)_{n,m} f^_m(xi) with G_{m,n} = [f_m, g_n].
    """
    reference, donor = np.atleast_2d(reference), np.atleast_2d(donor)
    fibers = fiber_gram(reference, donor, lattice, threshold)
    if not fibers.is_uniformly_invertible:
        raise CertificationError(
            f"singular fiber: {len(fibers.singular_fibers)} fibers not invertible",
            {"fibers": fibers.singular_fibers[:10]})
    labels, _ = lattice.fiber_labels()
    inverses = np.linalg.inv(fibers.matrices)
    reference_hat = fourier(reference, lattice.box)
    dual_hat = lattice.volume * np.einsum("xnm,mx->nx", inverses[labels], reference_hat)
    return inverse_fourier(dual_hat, lattice.box)


@dataclass(frozen=True)
class SisRow:
    radius: float
    lower_bound: float
    upper_bound: float
    deviation: float


@dataclass
class SisQuiltReport:
    """Quilted shift-invariant system over a range of radii"""
    rows: List[SisRow]
    reference_riesz: Tuple[float, float]
    donor_bounds: List[Tuple[float, float]] = field(default_factory=list)

    def csv_rows(self) -> List[Dict[str, float]]:
        return [{"r": row.radius, "lower_bound": row.lower_bound, "upper_bound": row.upper_bound,
                 "deviation": row.deviation} for row in self.rows]


def sis_donor_pair(reference: np.ndarray, donor: np.ndarray, lattice: LatticePair,
                   basis: np.ndarray, envelope: Optional[Envelope] = None,
                   threshold: float = FIBER_RTOL) -> FramePair:
    """Frame pair (translates of psi, translates of g) for the reference space"""
    analysis = translate_family(donor, lattice, envelope)
    synthesis = translate_family(sis_dual_generators(reference, donor, lattice, threshold), lattice)
    spectrum = analysis_spectrum(analysis.atoms, basis, lattice.box)
    if spectrum.lower <= 0 or not spectrum.is_injective:
        raise CertificationError("donor translates do not form a frame for the reference space",
                                 {"lower": spectrum.lower})
    return FramePair(synthesis, analysis, spectrum.lower, spectrum.upper)


def quilt_sis(reference: np.ndarray, donors: Sequence[np.ndarray], lattice: LatticePair,
              covering: Covering, radii: Sequence[float], envelope: Optional[Envelope] = None,
              partition: Optional[PartitionOfUnity] = None, threshold: float = FIBER_RTOL,
              workers: int = 1) -> SisQuiltReport:
    """Quilt translate systems of donor generators into a frame for V(reference)"""
    reference = np.atleast_2d(reference)
    reference_fibers = fiber_gram(reference, reference, lattice, threshold)
    if not reference_fibers.is_uniformly_invertible:
        raise CertificationError("reference generators do not form a Riesz basis",
                                 {"fibers": reference_fibers.singular_fibers[:10]})
    basis = span_basis(translate_family(reference, lattice))
    pairs = []
    for i, donor in enumerate(donors):
        try:
            pairs.append(sis_donor_pair(reference, donor, lattice, basis, envelope, threshold))
        except CertificationError as e:
            e.diagnostics["donor"] = i
            raise
    partition = partition or build_partition(covering)

    def sis_row(radius: float) -> SisRow:
        system = QuiltedSystem.build(pairs, covering, radius)
        if system.size == 0:
            return SisRow(radius, 0.0, 0.0, operator_deviation(system, partition, basis))
        spectrum = quilted_frame_bounds(system, basis)
        return SisRow(radius, spectrum.lower, spectrum.upper, operator_deviation(system, partition, basis))

    rows = ordered_map(sis_row, [float(r) for r in radii], workers)
    return SisQuiltReport(rows, reference_fibers.riesz_bounds(),
                          [(pair.lower_bound, pair.upper_bound) for pair in pairs])


@dataclass(eq=False)
class KNSymbol:
    """Kohn-Nirenberg symbol sampled as values[time index, frequency bin]"""
    values: np.ndarray
    box: Box

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def translate(self, time_index: int, freq_bin: int) -> "KNSymbol":
        return KNSymbol(np.roll(self.values, (int(time_index), int(freq_bin)), axis=(0, 1)), self.box)

    def inner(self, other: "KNSymbol") -> complex:
        """L^2 inner product on the TF plane (cell area 1/N)"""
        return complex(np.vdot(other.values, self.values) / self.box.points_per_axis)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) / self.box.points_per_axis))


def kn_symbol_rank_one(f: np.ndarray, g: np.ndarray, box: Box) -> KNSymbol:
    """sigma(x, w) = f(x) conj(g^(w)) exp(-2 pi i x w) for the operator h -> <h, g> f"""
    if box.dim != 1:
        raise FrameForgeError("Kohn-Nirenberg symbols support one-dimensional signals only")
    n = box.points_per_axis
    g_hat = fourier(g, box)
    phase = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    return KNSymbol(np.asarray(f, dtype=complex)[:, None] * g_hat.conj()[None, :] * phase, box)


def rank_one_matrix(f: np.ndarray, g: np.ndarray, box: Box) -> np.ndarray:
    """Matrix of h -> <h, g> f on the grid"""
    return box.cell_volume * np.outer(f, np.conj(g))


def hs_inner(first: np.ndarray, second: np.ndarray) -> complex:
    """Hilbert-Schmidt (Frobenius) inner product of operator matrices"""
    return complex(np.vdot(second, first))


def _impulses(lattice: TFLattice, masks: np.ndarray) -> np.ndarray:
    n = lattice.box.points_per_axis
    train = np.zeros((n, n), dtype=complex)
    np.add.at(train, tuple(lattice.index_points().T), masks)
    return train


@dataclass(eq=False)
class GaborMultiplier:
    """T = sum_n sum_lambda m_n(lambda) pi(lambda) (f_n (x) g_n) pi(lambda)*"""
    lattice: TFLattice
    pairs: List[Tuple[np.ndarray, np.ndarray]]
    masks: np.ndarray

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=complex).reshape(len(self.pairs), len(self.lattice))

    def symbol(self) -> KNSymbol:
        """sum_n (mask_n * sigma_n) as a periodic convolution over the TF grid"""
        box = self.lattice.box
        total = np.zeros((box.points_per_axis,) * 2, dtype=complex)
        for (f, g), mask in zip(self.pairs, self.masks):
            sigma = kn_symbol_rank_one(f, g, box).values
            total += np.fft.ifft2(np.fft.fft2(_impulses(self.lattice, mask)) * np.fft.fft2(sigma))
        return KNSymbol(total, box)

    def to_matrix(self, max_points: int = 256) -> np.ndarray:
        """Dense operator matrix, built atom by atom"""
        box = self.lattice.box
        if box.points_per_axis > max_points:
            raise FrameForgeError(f"dense multiplier matrix limited to N <= {max_points}")
        n = box.points_per_axis
        matrix = np.zeros((n, n), dtype=complex)
        phase = np.exp(2j * np.pi * np.arange(n) / n)
        for (f, g), mask in zip(self.pairs, self.masks):
            for (j, m), value in zip(self.lattice.index_points(), mask):
                shift = phase ** m
                matrix += value * rank_one_matrix(np.roll(f, j) * shift, np.roll(g, j) * shift, box)
        return matrix

    def apply(self, signal: np.ndarray) -> np.ndarray:
        return self.to_matrix() @ signal


def lower_symbol(symbol: KNSymbol, pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
                 lattice: TFLattice) -> np.ndarray:
    """<sigma_T, sigma_n(. - lambda)> for every pair n and lattice point lambda"""
    n = symbol.box.points_per_axis
    spectrum = np.fft.fft2(symbol.values)
    rows = []
    for f, g in pairs:
        probe = kn_symbol_rank_one(f, g, symbol.box).values
        correlation = np.fft.ifft2(spectrum * np.fft.fft2(probe).conj()) / n
        rows.append(correlation[tuple(lattice.index_points().T)])
    return np.array(rows)


@dataclass(frozen=True)
class RecoveryResult:
    """Outcome of recovering multiplier masks at one selection radius"""
    radius: float
    masks: Optional[np.ndarray]
    smallest_singular_value: float
    rank_deficient: bool
    n_probes: int
    mask_rel_error: float
    hs_residual: float

    def csv_row(self) -> Dict[str, float]:
        return {"r": self.radius, "n_probes": self.n_probes,
                "smallest_singular_value": self.smallest_singular_value,
                "mask_rel_error": self.mask_rel_error, "hs_residual": self.hs_residual}


def symbol_lattice(lattice: TFLattice) -> LatticePair:
    """The Gabor lattice as a translation lattice of the time-frequency plane"""
    plane = tf_box(lattice.box)
    steps = [round(lattice.time_step / lattice.box.step), round(lattice.freq_step * lattice.box.side)]
    return LatticePair.diagonal(plane, np.asarray(steps) * plane.step)


def symbol_fibers(reference_pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
                  family: Sequence[Tuple[np.ndarray, np.ndarray]], lattice: TFLattice,
                  threshold: float = FIBER_RTOL) -> FiberGram:
    """Fiber matrices of the rank-one symbols of ``family`` against the reference symbols"""
    box = lattice.box
    first = np.array([kn_symbol_rank_one(f, g, box).flat for f, g in reference_pairs])
    second = np.array([kn_symbol_rank_one(f, g, box).flat for f, g in family])
    return fiber_gram(first, second, symbol_lattice(lattice), threshold)


def multiplier_recover(reference_pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
                       probe_families: Sequence[Sequence[Tuple[np.ndarray, np.ndarray]]],
                       covering: Covering, radius: float, multiplier: GaborMultiplier,
                       threshold: float = FIBER_RTOL) -> RecoveryResult:
    """Recover masks of ``multiplier`` in the reference pairs from probe measurements.

    Probe family i is measured at the lattice points within ``radius`` of
    covering region i; the masks solve the resulting least-squares system.
    Every family must have invertible symbol fibers against the reference
    pairs, otherwise CertificationError is raised.
    """
    lattice = multiplier.lattice
    box = lattice.box
    n = box.points_per_axis
    if len(probe_families) != len(covering):
        raise FrameForgeError(f"{len(probe_families)} probe families for {len(covering)} regions")
    if covering.box != tf_box(box):
        raise FrameForgeError("covering must live on the time-frequency plane")
    for i, family in enumerate(probe_families):
        fibers = symbol_fibers(reference_pairs, family, lattice, threshold)
        if not fibers.is_uniformly_invertible:
            raise CertificationError(
                f"singular fiber: family {i} has {len(fibers.singular_fibers)} fibers not invertible",
                {"family": i, "fibers": fibers.singular_fibers[:10]})
    target = multiplier.symbol()
    index_points = lattice.index_points()

    unknowns = np.array([kn_symbol_rank_one(f, g, box).translate(j, m).flat
                         for f, g in reference_pairs for j, m in index_points])
    measured, values = [], []
    nodes = lattice.tf_nodes()
    for i, family in enumerate(probe_families):
        chosen = index_points[selection_mask(nodes, covering.regions[i], radius)]
        for f, g in family:
            probe = kn_symbol_rank_one(f, g, box)
            for j, m in chosen:
                row = probe.translate(j, m).flat
                measured.append(row)
                values.append(np.vdot(row, target.flat) / n)

    n_unknowns = len(unknowns)
    if not measured:
        logger.warning(f"r={radius}: no probe measurements selected")
        return RecoveryResult(radius, None, 0.0, True, 0, float("nan"), float("nan"))
    system = np.array(measured).conj() @ unknowns.T / n
    singular = linalg.svdvals(system)
    smallest = float(singular.min()) if len(measured) >= n_unknowns else 0.0
    deficient = smallest <= threshold * float(singular.max())
    if deficient:
        logger.warning(f"r={radius}: recovery system is rank deficient "
                       f"(smallest singular value {smallest:.3e})")
        return RecoveryResult(radius, None, smallest, True, len(measured), float("nan"), float("nan"))

    solution = linalg.lstsq(system, np.array(values))[0]
    masks = solution.reshape(len(reference_pairs), len(index_points))
    rebuilt = GaborMultiplier(lattice, list(reference_pairs), masks).symbol()
    residual = float(np.linalg.norm(rebuilt.values - target.values) / np.linalg.norm(target.values))
    mask_error = float("nan")
    if multiplier.masks.shape == masks.shape:
        mask_error = float(np.linalg.norm(masks - multiplier.masks) / np.linalg.norm(multiplier.masks))
    return RecoveryResult(radius, masks, smallest, False, len(measured), mask_error, residual)
