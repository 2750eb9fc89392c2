#!/usr/bin/env python3
"""
Tests for the STFT, Gabor lattices and quilted Gabor frames
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from grid_core import Box, FrameForgeError, EnvelopeError, CertificationError
from amalgam import Envelope
from surgery import Covering, build_partition, certify_quilt
from gabor_tf import (
    GaussWindow, TFLattice, GaborDonor, tf_box, tf_indices, shift_indices, tf_atom,
    stft, stft_many, modulation_norm, gabor_atoms, gabor_system, gabor_frame_bounds, canonical_gabor_dual,
    tf_space_basis, tf_frame_pair, quilt_gabor
)


def random_signal(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def signal_norm(f, box):
    return np.sqrt(box.cell_volume * np.sum(np.abs(f) ** 2))


class TestWindowAndShifts:
    """Gaussian window and time-frequency shifts"""

    def test_window_has_unit_norm(self, window, signal_box):
        assert signal_norm(window.samples, signal_box) == pytest.approx(1.0)
        assert window.raw_norm == pytest.approx(1.0, abs=1e-3)

    def test_window_needs_one_dimension(self):
        with pytest.raises(FrameForgeError, match="one-dimensional"):
            GaussWindow(Box(2, 8.0, 64))

    def test_tf_box(self, signal_box):
        plane = tf_box(signal_box)
        assert plane.dim == 2
        assert plane.shape == (64, 64)
        with pytest.raises(FrameForgeError, match="side\\*\\*2"):
            tf_box(Box(1, 16.0, 128))

    def test_tf_indices(self, signal_box):
        assert tf_indices((1.0, 0.5), signal_box) == (8, 4)
        assert tf_indices((8.0, 8.0), signal_box) == (0, 0)
        with pytest.raises(FrameForgeError, match="off the grid"):
            tf_indices((0.05, 0.0), signal_box)

    def test_tf_atom_matches_shift(self, window, signal_box):
        atom = tf_atom((1.0, 0.5), window.samples, signal_box)
        assert atom == pytest.approx(shift_indices(window.samples, 8, 4))
        assert signal_norm(atom, signal_box) == pytest.approx(1.0)


class TestSTFT:
    """Discrete short-time Fourier transform"""

    def test_isometry(self, window, signal_box, rng):
        f = random_signal(rng, 64)
        assert stft(f, window, signal_box).energy() == pytest.approx(signal_norm(f, signal_box))
        assert modulation_norm(f, window, 2.0) == pytest.approx(signal_norm(f, signal_box))

    def test_covariance(self, window, signal_box, rng):
        f = random_signal(rng, 64)
        image = np.abs(stft(f, window, signal_box).values)
        shifted = np.abs(stft(shift_indices(f, 5, 3), window, signal_box).values)
        assert shifted == pytest.approx(np.roll(image, (5, 3), axis=(0, 1)), abs=1e-12)

    def test_batch_matches_single(self, window, signal_box, rng):
        signals = np.stack([random_signal(rng, 64) for _ in range(3)])
        batch = stft_many(signals, window, signal_box, chunk=2)
        assert batch.shape == (3, 64, 64)
        assert batch[1] == pytest.approx(stft(signals[1], window, signal_box).values)

    def test_range_basis_is_orthonormal(self, window):
        basis = tf_space_basis(window)
        gram = basis.conj() @ basis.T / 64
        assert gram == pytest.approx(np.eye(64), abs=1e-10)


class TestGaborLattice:
    """Commensurate lattices and Gabor frames"""

    def test_counts_and_density(self, signal_box):
        lattice = TFLattice(signal_box, 1.0, 0.5)
        assert len(lattice) == 128
        assert lattice.density == 0.5
        assert lattice.points()[1] == pytest.approx([0.0, 0.5])
        assert len(lattice.tf_nodes()) == 128

    def test_offsets(self, signal_box):
        lattice = TFLattice(signal_box, 1.0, 0.5, time_offset=0.5, freq_offset=0.25)
        assert tuple(lattice.index_points()[0]) == (4, 2)

    @pytest.mark.parametrize("steps,message", [
        ((0.0, 0.5), "must be positive"),
        ((3.0, 0.5), "incommensurate"),
        ((1.0, 0.3), "incommensurate"),
    ])
    def test_invalid_lattices(self, signal_box, steps, message):
        with pytest.raises(FrameForgeError, match=message):
            TFLattice(signal_box, *steps)

    def test_frame_and_dual(self, window, signal_box, rng):
        lattice = TFLattice(signal_box, 1.0, 0.5)
        spectrum = gabor_frame_bounds(lattice, window.samples)
        assert spectrum.is_injective
        assert 0 < spectrum.lower <= spectrum.upper

        f = random_signal(rng, 64)
        atoms = gabor_atoms(lattice, window.samples)
        duals = canonical_gabor_dual(lattice, window.samples)
        rebuilt = signal_box.cell_volume * duals.T @ (atoms.conj() @ f)
        assert rebuilt == pytest.approx(f, abs=1e-9)

    def test_gabor_system_family(self, window, signal_box):
        lattice = TFLattice(signal_box, 2.0, 0.5)
        family = gabor_system(lattice, window.samples)
        assert len(family) == len(lattice)
        assert family.nodes.labels[1] == (0, 4)
        assert family.nodes.indices[:, 0] == pytest.approx(lattice.index_points()[:, 0])
        assert family.atoms == pytest.approx(gabor_atoms(lattice, window.samples))

    def test_critical_density_basis(self, signal_box):
        lattice = TFLattice(signal_box, 1.0, 1.0)
        assert len(lattice) == 64
        assert lattice.density == 1.0
        box_window = np.where(np.arange(64) < 8, 1.0, 0.0)
        spectrum = gabor_frame_bounds(lattice, box_window)
        assert spectrum.lower == pytest.approx(1.0)
        assert spectrum.upper == pytest.approx(1.0)
        duals = canonical_gabor_dual(lattice, box_window)
        assert duals == pytest.approx(gabor_atoms(lattice, box_window), abs=1e-10)

    def test_critical_density_gaussian_is_not_a_frame(self, window, signal_box):
        # the Zak transform of an even window vanishes at the half-period point
        lattice = TFLattice(signal_box, 1.0, 1.0)
        spectrum = gabor_frame_bounds(lattice, window.samples)
        assert spectrum.lower == pytest.approx(0.0, abs=1e-10)
        assert not spectrum.is_injective
        with pytest.raises(CertificationError, match="not a frame"):
            tf_frame_pair(GaborDonor(lattice, window.samples), window)

    def test_undersampled_lattice(self, window, signal_box):
        lattice = TFLattice(signal_box, 2.0, 1.0)
        assert len(lattice) == 32
        assert not gabor_frame_bounds(lattice, window.samples).is_injective
        with pytest.raises(FrameForgeError, match="not a frame"):
            canonical_gabor_dual(lattice, window.samples)
        with pytest.raises(CertificationError, match="not a frame") as info:
            tf_frame_pair(GaborDonor(lattice, window.samples), window)
        assert info.value.diagnostics["time_step"] == 2.0


class TestGaborQuilt:
    """Two Gabor donors quilted over the two time halves of the plane"""

    @pytest.fixture(scope="class")
    def quilt_setup(self, window, signal_box):
        donors = [
            GaborDonor(TFLattice(signal_box, 1.0, 0.5), window.samples),
            GaborDonor(TFLattice(signal_box, 1.0, 0.5, time_offset=0.5, freq_offset=0.25), window.samples),
        ]
        covering = Covering.from_axis_intervals(tf_box(signal_box), [(0, 4), (4, 8)])
        return donors, covering

    def test_tf_pair_shapes(self, quilt_setup, window):
        donors, _ = quilt_setup
        pair = tf_frame_pair(donors[0], window)
        assert len(pair.atoms) == 128
        assert pair.atoms.atoms.shape == (128, 64 * 64)
        assert pair.lower_bound > 0

    def test_envelope_violation(self, quilt_setup, window):
        donors, _ = quilt_setup
        with pytest.raises(EnvelopeError):
            tf_frame_pair(donors[0], window, Envelope(1e-3, 5.0))

    @pytest.mark.slow
    def test_full_quilt(self, quilt_setup, window):
        donors, covering = quilt_setup
        quilt = quilt_gabor(donors, covering, 6.0, window)
        assert quilt.system.size == 256
        assert quilt.tf_spectrum.lower > 0
        assert quilt.signal_spectrum is not None
        assert quilt.signal_spectrum.lower > 0
        certificate = certify_quilt(quilt.system, quilt.partition, tf_space_basis(window))
        assert certificate.deviation < 1e-8

    def test_quilt_reuses_partition(self, quilt_setup, window):
        donors, covering = quilt_setup
        partition = build_partition(covering)
        quilt = quilt_gabor(donors, covering, 0.5, window, partition=partition)
        assert quilt.partition is partition
        assert 0 < quilt.system.size <= 256

    def test_spectra_agree_on_both_sides(self, quilt_setup, window):
        donors, covering = quilt_setup
        quilt = quilt_gabor(donors, covering, 1.0, window)
        assert quilt.tf_spectrum.eigenvalues == pytest.approx(quilt.signal_spectrum.eigenvalues, abs=1e-8)
        assert quilt.tf_spectrum.lower == pytest.approx(quilt.signal_spectrum.lower, abs=1e-8)

    def test_lower_bound_grows_with_radius(self, quilt_setup, window):
        donors, covering = quilt_setup
        partition = build_partition(covering)
        lower = [quilt_gabor(donors, covering, r, window, partition=partition).tf_spectrum.lower
                 for r in (0.5, 1.0, 2.0, 4.0)]
        assert all(b >= a - 1e-10 for a, b in zip(lower, lower[1:]))
        assert lower[-1] > 0
