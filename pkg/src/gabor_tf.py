#!/usr/bin/env python3
"""
Gabor TF - short-time Fourier transform and quilted Gabor frames

This module covers the time-frequency side of frame-forge:
- Normalized Gaussian window on the signal box
- STFT with a discrete isometry onto the time-frequency plane
- Time-frequency shifts and commensurate Gabor lattices
- Gabor frame bounds and canonical Gabor duals
- Donor frame pairs on the TF plane and quilted Gabor systems
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

try:
    from .grid_core import Box, FrameForgeError, CertificationError, NodeSet, Weight, is_whole, lp_norm
    from .amalgam import AtomFamily, Envelope
    from .frame_engine import FramePair, SpectrumInfo, spectrum_info
    from .surgery import Covering, PartitionOfUnity, QuiltedSystem, build_partition, quilted_frame_bounds
except ImportError:
    from grid_core import Box, FrameForgeError, CertificationError, NodeSet, Weight, is_whole, lp_norm
    from amalgam import AtomFamily, Envelope
    from frame_engine import FramePair, SpectrumInfo, spectrum_info
    from surgery import Covering, PartitionOfUnity, QuiltedSystem, build_partition, quilted_frame_bounds

logger = logging.getLogger(__name__)


def _require_signal_box(box: Box):
    if box.dim != 1:
        raise FrameForgeError("time-frequency tools support one-dimensional signals only")


def tf_box(signal_box: Box) -> Box:
    """Time-frequency plane [0, L)^2 with the signal grid on both axes (needs L^2 = N)"""
    _require_signal_box(signal_box)
    if not is_whole(signal_box.side ** 2) or round(signal_box.side ** 2) != signal_box.points_per_axis:
        raise FrameForgeError(
            f"time-frequency plane needs side**2 == points_per_axis, got side={signal_box.side}, "
            f"N={signal_box.points_per_axis}")
    return Box(2, signal_box.side, signal_box.points_per_axis)


@dataclass(frozen=True, eq=False)
class GaussWindow:
    """phi(x) = pi^(-1/4) exp(-x^2/2), renormalized to unit discrete L^2 norm"""
    box: Box
    samples: np.ndarray = field(init=False, repr=False)
    raw_norm: float = field(init=False)

    def __post_init__(self):
        _require_signal_box(self.box)
        distance = self.box.distances_from(np.zeros(1, dtype=int))
        raw = np.pi ** -0.25 * np.exp(-distance ** 2 / 2)
        norm = float(np.sqrt(self.box.cell_volume * np.sum(raw ** 2)))
        object.__setattr__(self, "raw_norm", norm)
        object.__setattr__(self, "samples", (raw / norm).astype(complex))


def _window_samples(window: Union[GaussWindow, np.ndarray]) -> np.ndarray:
    if isinstance(window, GaussWindow):
        return window.samples
    return np.asarray(window, dtype=complex)


def tf_indices(point: Tuple[float, float], box: Box) -> Tuple[int, int]:
    """Grid indices (time step j, frequency bin m) of a TF point (x, w)"""
    x, w = point
    time_index, freq_bin = x / box.step, w * box.side
    if not (is_whole(time_index) and is_whole(freq_bin)):
        raise FrameForgeError(f"time-frequency point {point} is off the grid")
    n = box.points_per_axis
    return int(round(time_index)) % n, int(round(freq_bin)) % n


def shift_indices(g: np.ndarray, time_index: int, freq_bin: int) -> np.ndarray:
    n = len(g)
    return np.roll(g, time_index) * np.exp(2j * np.pi * freq_bin * np.arange(n) / n)


def tf_atom(point: Tuple[float, float], g: np.ndarray, box: Box) -> np.ndarray:
    """pi(x, w) g = M_w T_x g"""
    _require_signal_box(box)
    return shift_indices(np.asarray(g, dtype=complex), *tf_indices(point, box))


@dataclass(eq=False)
class STFTImage:
    """V_g f sampled as values[time index, frequency bin]"""
    values: np.ndarray
    box: Box

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def energy(self) -> float:
        """L^2 norm on the TF plane (cell area h / L)"""
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) / self.box.points_per_axis))


def stft_many(signals: np.ndarray, window: Union[GaussWindow, np.ndarray], box: Box,
              chunk: int = 16) -> np.ndarray:
    """V[k, j, m] = h sum_n f_k[n] conj(g[n - j]) exp(-2 pi i m n / N)"""
    _require_signal_box(box)
    signals = np.atleast_2d(np.asarray(signals, dtype=complex))
    g = _window_samples(window)
    n = box.points_per_axis
    shifted = g[(np.arange(n)[None, :] - np.arange(n)[:, None]) % n].conj()
    out = np.empty((len(signals), n, n), dtype=complex)
    for start in range(0, len(signals), chunk):
        block = signals[start:start + chunk]
        out[start:start + chunk] = box.step * np.fft.fft(block[:, None, :] * shifted[None], axis=-1)
    return out


def stft(f: np.ndarray, window: Union[GaussWindow, np.ndarray], box: Box) -> STFTImage:
    return STFTImage(stft_many(f, window, box)[0], box)


def modulation_norm(f: np.ndarray, window: GaussWindow, p: float, v: Optional[Weight] = None) -> float:
    """||V_phi f||_{L^p_v} on the TF plane"""
    plane = tf_box(window.box)
    return float(lp_norm(stft(f, window, window.box).flat, plane, p, v))


@dataclass(frozen=True, eq=False)
class TFLattice:
    """Commensurate lattice a Z x b Z + (time offset, frequency offset)"""
    box: Box
    time_step: float
    freq_step: float
    time_offset: float = 0.0
    freq_offset: float = 0.0

    def __post_init__(self):
        _require_signal_box(self.box)
        if self.time_step <= 0 or self.freq_step <= 0:
            raise FrameForgeError(f"lattice steps must be positive, got a={self.time_step}, b={self.freq_step}")
        h, side = self.box.step, self.box.side
        checks = [
            (self.time_step / h, "time step is not a multiple of the grid step"),
            (side / self.time_step, "time step does not divide the box side"),
            (self.freq_step * side, "frequency step is not a multiple of 1/L"),
            ((1.0 / h) / self.freq_step, "frequency step does not divide the frequency period"),
            (self.time_offset / h, "time offset is not on the grid"),
            (self.freq_offset * side, "frequency offset is not on the grid"),
        ]
        for value, message in checks:
            if not is_whole(value):
                raise FrameForgeError(f"incommensurate lattice: {message}")

    @property
    def density(self) -> float:
        return self.time_step * self.freq_step

    def index_points(self) -> np.ndarray:
        """(count, 2) integer (time index, frequency bin), time-major"""
        n = self.box.points_per_axis
        times = (round(self.time_offset / self.box.step)
                 + round(self.time_step / self.box.step) * np.arange(round(self.box.side / self.time_step)))
        bins = (round(self.freq_offset * self.box.side)
                + round(self.freq_step * self.box.side) * np.arange(round(n / (self.freq_step * self.box.side))))
        grid = np.stack(np.meshgrid(times % n, bins % n, indexing="ij"), axis=-1)
        return grid.reshape(-1, 2)

    def points(self) -> np.ndarray:
        """(count, 2) real TF points (x, w)"""
        idx = self.index_points()
        return np.stack([idx[:, 0] * self.box.step, idx[:, 1] / self.box.side], axis=-1)

    def __len__(self) -> int:
        return len(self.index_points())

    def tf_nodes(self) -> NodeSet:
        return NodeSet(tf_box(self.box), self.index_points())


def gabor_atoms(lattice: TFLattice, g: np.ndarray) -> np.ndarray:
    """Rows pi(lambda) g for lambda in the lattice"""
    g = np.asarray(g, dtype=complex)
    return np.stack([shift_indices(g, int(j), int(m)) for j, m in lattice.index_points()])


def gabor_system(lattice: TFLattice, g: np.ndarray) -> AtomFamily:
    """Atoms pi(lambda) g on the signal box, indexed by their time positions"""
    nodes = NodeSet(lattice.box, lattice.index_points()[:, :1],
                    tuple(map(tuple, lattice.index_points().tolist())))
    return AtomFamily(nodes, gabor_atoms(lattice, g))


def frame_operator(atoms: np.ndarray, box: Box) -> np.ndarray:
    """Matrix of S f = sum <f, a> a on the signal grid"""
    atoms = np.asarray(atoms)
    return box.cell_volume * (atoms.T @ atoms.conj())


def gabor_frame_bounds(lattice: TFLattice, g: np.ndarray) -> SpectrumInfo:
    """Spectrum of the Gabor frame operator; lower/upper are the frame bounds on C^N"""
    return spectrum_info(frame_operator(gabor_atoms(lattice, g), lattice.box))


def canonical_gabor_dual(lattice: TFLattice, g: np.ndarray) -> np.ndarray:
    """Rows S^-1 pi(lambda) g"""
    atoms = gabor_atoms(lattice, g)
    operator = frame_operator(atoms, lattice.box)
    spectrum = spectrum_info(operator)
    if not spectrum.is_injective:
        raise FrameForgeError(f"Gabor system is not a frame (rank {spectrum.rank} < {lattice.box.size})")
    return linalg.solve(operator, atoms.T, assume_a="her").T


def tf_space_basis(window: GaussWindow) -> np.ndarray:
    """Orthonormal basis V_phi(e_n) of the range of V_phi, flattened"""
    box = window.box
    unit = np.eye(box.points_per_axis) / np.sqrt(box.step)
    return stft_many(unit, window, box).reshape(box.points_per_axis, -1)


@dataclass(eq=False)
class GaborDonor:
    """Gabor system pi(lattice) g used as a donor"""
    lattice: TFLattice
    generator: np.ndarray


def tf_frame_pair(donor: GaborDonor, window: GaussWindow,
                  envelope: Optional[Envelope] = None) -> FramePair:
    """Donor frame pair on the TF plane: analysis V_phi(pi(l) g), synthesis V_phi(pi(l) gamma)"""
    spectrum = gabor_frame_bounds(donor.lattice, donor.generator)
    if spectrum.lower <= 0 or not spectrum.is_injective:
        raise CertificationError("Gabor donor is not a frame",
                                 {"time_step": donor.lattice.time_step, "freq_step": donor.lattice.freq_step,
                                  "lower": spectrum.lower})
    box = window.box
    nodes = donor.lattice.tf_nodes()
    analysis = stft_many(gabor_atoms(donor.lattice, donor.generator), window, box)
    synthesis = stft_many(canonical_gabor_dual(donor.lattice, donor.generator), window, box)
    duals = AtomFamily(nodes, analysis.reshape(len(nodes), -1), envelope)
    atoms = AtomFamily(nodes, synthesis.reshape(len(nodes), -1))
    return FramePair(atoms, duals, spectrum.lower, spectrum.upper)


@dataclass(eq=False)
class GaborQuilt:
    """Quilted Gabor system with its frame bounds on both sides of V_phi"""
    system: QuiltedSystem
    partition: PartitionOfUnity
    tf_spectrum: SpectrumInfo
    signal_spectrum: Optional[SpectrumInfo]


def signal_side_bounds(system: QuiltedSystem, donors: Sequence[GaborDonor]) -> SpectrumInfo:
    """Frame operator spectrum of the selected signal-domain atoms"""
    box = donors[0].lattice.box
    rows = [gabor_system(donor.lattice, donor.generator).atoms[mask]
            for donor, mask in zip(donors, system.selection)]
    selected = np.concatenate(rows) if rows else np.zeros((0, box.size))
    return spectrum_info(frame_operator(selected, box))


def quilt_gabor(donors: Sequence[Union[GaborDonor, FramePair]], covering: Covering, radius: float,
                window: GaussWindow, envelope: Optional[Envelope] = None,
                partition: Optional[PartitionOfUnity] = None) -> GaborQuilt:
    """Quilt Gabor systems (or envelope-checked molecule pairs) over a TF covering"""
    pairs = [d if isinstance(d, FramePair) else tf_frame_pair(d, window, envelope) for d in donors]
    partition = partition or build_partition(covering)
    system = QuiltedSystem.build(pairs, covering, radius)
    size = window.box.points_per_axis
    if system.size == 0:
        logger.warning(f"r={radius}: no donor nodes selected, quilt is empty")
        empty = SpectrumInfo(np.zeros(size), 0, 0.0)
        return GaborQuilt(system, partition, empty, empty)
    tf_spectrum = quilted_frame_bounds(system, tf_space_basis(window))
    signal_spectrum = None
    if all(isinstance(d, GaborDonor) for d in donors):
        signal_spectrum = signal_side_bounds(system, donors)
    return GaborQuilt(system, partition, tf_spectrum, signal_spectrum)
