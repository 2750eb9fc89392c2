#!/usr/bin/env python3
"""
Tests for frame bounds, canonical duals and pseudo-inverses
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from grid_core import Box, NodeSet, Weight, FrameForgeError, CertificationError
from amalgam import AtomFamily, gaussian_bumps, envelope_atoms
from frame_engine import (
    FramePair, gram, frame_bounds, spectrum_info, canonical_dual, span_basis,
    pseudo_inverse_svd, pseudo_inverse_contour, contour_points,
    universal_projector, exterior_frame_pair, decay_fit, operator_bound_check
)


def orthonormal_family(box, copies=1):
    """Scaled grid deltas, optionally repeated"""
    nodes = NodeSet(box, np.tile(box.grid_indices(), (copies, 1)))
    atoms = np.tile(np.eye(box.size), (copies, 1)) / np.sqrt(box.cell_volume)
    return AtomFamily(nodes, atoms)


def psd_matrix(rng, zeros=3, size=12):
    vectors = np.linalg.qr(rng.standard_normal((size, size)))[0]
    eigenvalues = np.concatenate([np.zeros(zeros), rng.uniform(0.5, 4.0, size - zeros)])
    return (vectors * eigenvalues) @ vectors.T


class TestFrameBounds:
    """Spectral frame bounds on the closed span"""

    def test_orthonormal_family(self):
        spectrum = frame_bounds(orthonormal_family(Box(1, 4.0, 8)))
        assert spectrum.lower == pytest.approx(1.0)
        assert spectrum.upper == pytest.approx(1.0)
        assert spectrum.rank == 8
        assert spectrum.is_injective

    def test_repeated_family_is_redundant(self):
        spectrum = frame_bounds(orthonormal_family(Box(1, 4.0, 8), copies=2))
        assert spectrum.rank == 8
        assert spectrum.gap == pytest.approx(2.0)
        assert spectrum.upper == pytest.approx(2.0)
        assert spectrum.lower == pytest.approx(0.0, abs=1e-12)
        assert not spectrum.is_injective

    def test_zero_family(self, small_box):
        family = AtomFamily(NodeSet.lattice(small_box, 1.0), np.zeros((10, small_box.size)))
        with pytest.raises(FrameForgeError, match="zero family"):
            frame_bounds(family)

    def test_gram_entry_order(self, small_box):
        nodes = NodeSet.lattice(small_box, 5.0)
        x = small_box.positions()[:, 0]
        atoms = np.stack([np.exp(1j * x) * np.exp(-(x - 2.0) ** 2), np.exp(-(x - 4.0) ** 2)])
        entries = gram(AtomFamily(nodes, atoms)).entries
        # C_kj = <f_k, f_j> = h sum f_k conj(f_j)
        assert entries[0, 1] == pytest.approx(small_box.cell_volume * np.vdot(atoms[1], atoms[0]))
        assert entries[1, 0] == pytest.approx(np.conj(entries[0, 1]))

    @pytest.mark.edge_case
    def test_empty_spectrum(self):
        spectrum = spectrum_info(np.zeros((0, 0)))
        assert spectrum.rank == 0
        assert spectrum.lower == 0.0
        assert spectrum.upper == 0.0


class TestPseudoInverse:
    """Eigen and contour pseudo-inverses"""

    def test_svd_is_moore_penrose(self, rng):
        matrix = psd_matrix(rng)
        inverse = pseudo_inverse_svd(matrix)
        assert matrix @ inverse @ matrix == pytest.approx(matrix, abs=1e-10)
        assert inverse @ matrix @ inverse == pytest.approx(inverse, abs=1e-10)

    def test_contour_matches_svd(self, rng):
        matrix = psd_matrix(rng)
        reference = pseudo_inverse_svd(matrix)
        contour = pseudo_inverse_contour(matrix, 0.5, 64)
        assert np.linalg.norm(contour - reference) / np.linalg.norm(reference) < 1e-6
        assert np.isrealobj(contour)

    def test_contour_penrose_identities(self, rng):
        for _ in range(20):
            size = int(rng.integers(8, 65))
            matrix = psd_matrix(rng, zeros=int(rng.integers(0, size // 2)), size=size)
            inverse = pseudo_inverse_contour(matrix, 0.5, 64)
            assert np.linalg.norm(inverse - pseudo_inverse_svd(matrix)) <= 1e-6
            assert np.linalg.norm(matrix @ inverse @ matrix - matrix) <= 1e-6
            assert np.linalg.norm(inverse @ matrix @ inverse - inverse) <= 1e-6
            assert np.linalg.norm((matrix @ inverse).T - matrix @ inverse) <= 1e-6
            assert np.linalg.norm((inverse @ matrix).T - inverse @ matrix) <= 1e-6

    def test_contour_threaded_matches_serial(self, rng):
        matrix = psd_matrix(rng)
        serial = pseudo_inverse_contour(matrix, 0.5, 32)
        threaded = pseudo_inverse_contour(matrix, 0.5, 32, workers=4)
        assert threaded == pytest.approx(serial, abs=1e-14)

    def test_contour_is_counterclockwise(self):
        points, steps = contour_points(1.0, 3.0, 64)
        assert len(points) == 256
        # integral of dz / z around a loop enclosing nothing vanishes; around 2 it is 2 pi i
        assert np.sum(steps / (points - 2.0)) == pytest.approx(2j * np.pi)
        assert abs(np.sum(steps / points)) < 1e-10

    def test_gap_violation(self):
        with pytest.raises(FrameForgeError, match="spectral gap violated"):
            pseudo_inverse_contour(np.diag([1.0, 0.2]), 0.5)

    def test_parameter_checks(self):
        with pytest.raises(FrameForgeError, match="num_quad"):
            pseudo_inverse_contour(np.eye(2), 0.5, num_quad=4)
        with pytest.raises(FrameForgeError, match="gap must be positive"):
            pseudo_inverse_contour(np.eye(2), 0.0)


class TestCanonicalDual:
    """Canonical duals and reconstruction"""

    def test_reconstruction_on_span(self, gaussian_space, rng):
        f = rng.standard_normal(len(gaussian_space)) @ gaussian_space.atoms.atoms
        assert np.linalg.norm(gaussian_space.reconstruct(f) - f) / np.linalg.norm(f) < 1e-8

    def test_contour_dual_agrees(self, box_1d):
        family = gaussian_bumps(NodeSet.lattice(box_1d, 1.0), 0.5)
        eigen = canonical_dual(family)
        contour = canonical_dual(family, method="contour", num_quad=128)
        assert np.abs(contour.duals.atoms - eigen.duals.atoms).max() < 1e-6

    def test_dual_frame_bounds_are_reciprocal(self, gaussian_space):
        atoms = frame_bounds(gaussian_space.atoms)
        duals = frame_bounds(gaussian_space.duals)
        assert duals.rank == atoms.rank
        assert duals.lower == pytest.approx(1.0 / atoms.upper, rel=1e-6)
        assert duals.upper == pytest.approx(1.0 / atoms.lower, rel=1e-6)

    def test_unknown_method(self, box_1d):
        family = gaussian_bumps(NodeSet.lattice(box_1d, 1.0), 0.5)
        with pytest.raises(FrameForgeError, match="unknown pseudo-inverse method"):
            canonical_dual(family, method="qr")

    def test_projector_is_idempotent(self, gaussian_space, rng):
        projector = universal_projector(gaussian_space.atoms)
        f = rng.standard_normal(gaussian_space.box.size)
        once = projector(f)
        assert projector(once) == pytest.approx(once, abs=1e-10)

    def test_span_basis_orthonormal(self, gaussian_space):
        basis = span_basis(gaussian_space.atoms)
        gram = gaussian_space.box.cell_volume * basis.conj() @ basis.T
        assert basis.shape[0] == len(gaussian_space)
        assert gram == pytest.approx(np.eye(len(basis)), abs=1e-10)

    def test_frame_pair_validation(self, gaussian_space):
        with pytest.raises(FrameForgeError, match="lower bound must be positive"):
            FramePair(gaussian_space.atoms, gaussian_space.duals, 0.0, 1.0)


class TestExteriorPair:
    """Donor pairs with analysis atoms outside the space"""

    def test_shifted_gaussians(self, gaussian_space, box_1d, rng):
        shifted = gaussian_bumps(NodeSet.lattice(box_1d, 1.0, 0.25), 0.5)
        pair = exterior_frame_pair(gaussian_space, shifted)
        f = rng.standard_normal(len(gaussian_space)) @ gaussian_space.atoms.atoms
        assert np.linalg.norm(pair.reconstruct(f) - f) / np.linalg.norm(f) < 1e-7
        assert pair.duals is shifted

    def test_too_few_atoms(self, gaussian_space, box_1d):
        sparse = gaussian_bumps(NodeSet.lattice(box_1d, 2.0), 0.5)
        with pytest.raises(CertificationError, match="does not span") as info:
            exterior_frame_pair(gaussian_space, sparse)
        assert info.value.diagnostics["space_rank"] == 16


class TestDecayFit:
    """Radial decay of families"""

    def test_exact_power_law(self):
        box = Box(1, 32.0, 256)
        fit = decay_fit(envelope_atoms(NodeSet.lattice(box, 4.0), 3.0))
        assert fit.exponent == pytest.approx(3.0, abs=1e-9)
        assert fit.constant == pytest.approx(1.0, rel=1e-9)

    def test_exponent_cap(self):
        box = Box(1, 32.0, 256)
        fit = decay_fit(envelope_atoms(NodeSet.lattice(box, 4.0), 3.0), max_exponent=2.0)
        assert fit.exponent == 2.0

    def test_dual_keeps_polynomial_decay(self):
        box = Box(1, 32.0, 256)
        space = canonical_dual(envelope_atoms(NodeSet.lattice(box, 1.0), 4.0))
        assert decay_fit(space.duals).exponent >= 3.5

    def test_insufficient_radial_range(self, box_1d):
        narrow = gaussian_bumps(NodeSet.lattice(box_1d, 4.0), 0.1)
        with pytest.raises(FrameForgeError, match="insufficient radial range"):
            decay_fit(narrow)


class TestOperatorBound:
    def test_identity_operator(self, gaussian_space, rng):
        samples = rng.standard_normal((3, len(gaussian_space))) @ gaussian_space.atoms.atoms
        check = operator_bound_check(gaussian_space, lambda f: f, samples, p=2.0, w=Weight(1.0))
        assert check.measured == pytest.approx(1.0)
        assert check.holds
