#!/usr/bin/env python3
"""
Tests for reproducing kernels and quilted sampling sets
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from grid_core import NodeSet, Weight, FrameForgeError, CertificationError
from frame_engine import frame_bounds, span_basis
from surgery import Covering
from sampling import (
    SamplingExperiment, kernel_at, kernel_family, sampling_bounds, sampling_constants,
    kernel_donor, quilt_sampling
)


@pytest.fixture
def space_function(gaussian_space, rng):
    """Losowa funkcja z przestrzeni rozpiętej przez atomy"""
    return rng.standard_normal(len(gaussian_space)) @ gaussian_space.atoms.atoms


@pytest.fixture
def experiment(gaussian_space, box_1d):
    donor_sets = [NodeSet.lattice(box_1d, 0.5), NodeSet.lattice(box_1d, 0.5, 0.25)]
    covering = Covering.from_intervals(box_1d, [(0, 8), (8, 16)])
    return SamplingExperiment(gaussian_space, donor_sets, covering)


class TestReproducingKernel:
    """Kernels K_x of the span"""

    @pytest.mark.parametrize("point", [0.0, 3.25, 15.875])
    def test_reproduces_point_values(self, gaussian_space, box_1d, space_function, point):
        kernel = kernel_at(point, gaussian_space)
        assert kernel.point == round(point / box_1d.step)
        value = box_1d.inner(space_function, kernel.kernel)
        assert value == pytest.approx(space_function[kernel.point], abs=1e-8)

    def test_kernel_family(self, gaussian_space, box_1d):
        points = NodeSet.lattice(box_1d, 2.0)
        family = kernel_family(points, gaussian_space)
        assert family.atoms.shape == (8, 128)
        assert family.atoms[1] == pytest.approx(kernel_at(2.0, gaussian_space).kernel)


class TestSamplingBounds:
    """Sampling inequalities for point sets"""

    def test_full_grid(self, gaussian_space, box_1d):
        basis = span_basis(gaussian_space.atoms)
        grid = NodeSet(box_1d, box_1d.grid_indices())
        spectrum = sampling_bounds(grid, basis)
        assert spectrum.lower == pytest.approx(8.0)
        assert spectrum.upper == pytest.approx(8.0)

    def test_measured_constants(self, gaussian_space, box_1d):
        basis = span_basis(gaussian_space.atoms)
        grid = NodeSet(box_1d, box_1d.grid_indices())
        lower, upper = sampling_constants(grid, basis[:4], 2.0)
        assert lower == pytest.approx(np.sqrt(8.0))
        assert upper == pytest.approx(np.sqrt(8.0))

    def test_empty_set(self, gaussian_space, box_1d):
        basis = span_basis(gaussian_space.atoms)
        with pytest.raises(FrameForgeError, match="empty sampling set"):
            sampling_bounds(NodeSet(box_1d, np.zeros((0, 1), dtype=int)), basis)

    def test_single_point_is_not_sampling(self, gaussian_space, box_1d):
        basis = span_basis(gaussian_space.atoms)
        with pytest.raises(CertificationError, match="donor set 3"):
            kernel_donor(NodeSet.from_positions(box_1d, [2.0]), gaussian_space, basis, 3)

    def test_kernel_donor(self, gaussian_space, box_1d):
        basis = span_basis(gaussian_space.atoms)
        pair = kernel_donor(NodeSet.lattice(box_1d, 0.5), gaussian_space, basis)
        assert len(pair) == 32
        assert pair.lower_bound > 0

    @pytest.mark.parametrize("spacing,offset", [(0.5, 0.0), (0.5, 0.25), (1.0, 0.0), (0.25, 0.125)])
    def test_matches_kernel_frame_bounds(self, gaussian_space, box_1d, spacing, offset):
        points = NodeSet.lattice(box_1d, spacing, offset)
        sampling = sampling_bounds(points, span_basis(gaussian_space.atoms))
        kernels = frame_bounds(kernel_family(points, gaussian_space))
        # kernels are redundant for dense sets: compare with the smallest nonzero eigenvalue
        assert kernels.rank == len(gaussian_space)
        assert sampling.lower == pytest.approx(kernels.gap, abs=1e-8)
        assert sampling.upper == pytest.approx(kernels.upper, abs=1e-8)


class TestQuiltedSampling:
    """Quilting two shifted sampling sets over two halves of the box"""

    def test_mismatched_sets(self, gaussian_space, box_1d):
        with pytest.raises(FrameForgeError, match="sampling sets for"):
            SamplingExperiment(gaussian_space, [NodeSet.lattice(box_1d, 0.5)],
                               Covering.from_intervals(box_1d, [(0, 8), (8, 16)]))

    def test_full_radius(self, experiment):
        table = quilt_sampling(experiment, [1.0, 16.0])
        first, last = table.rows
        assert last.n_points == 64
        assert first.n_points < last.n_points
        assert last.recon_rel_error < 1e-8
        assert 0 < last.lower <= last.upper
        assert list(table.csv_rows()[0]) == ["r", "A_r", "B_r", "recon_rel_error", "n_points"]

    def test_lower_bound_grows_with_radius(self, experiment):
        lower = [row.lower for row in quilt_sampling(experiment, [0.5, 1.0, 2.0, 4.0, 16.0]).rows]
        assert min(lower) > 0
        assert all(b >= a - 1e-10 for a, b in zip(lower, lower[1:]))

    def test_weighted_sup_norm(self, experiment, gaussian_space, rng):
        tests = rng.standard_normal((3, len(gaussian_space))) @ gaussian_space.atoms.atoms
        table = quilt_sampling(experiment, [2.0, 16.0], p=np.inf, v=Weight(1.0), test_functions=tests)
        last = table.rows[-1]
        assert last.recon_rel_error < 1e-8
        assert 0 < last.lower <= last.upper
