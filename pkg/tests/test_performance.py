"""
Testy wydajności i benchmarki dla frame-forge.
"""

import os
import sys
import time

import numpy as np
import psutil
import pytest
from memory_profiler import memory_usage

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from grid_core import Box, NodeSet, ordered_map
from amalgam import gaussian_bumps
from frame_engine import canonical_dual, pseudo_inverse_contour, pseudo_inverse_svd
from surgery import error_sweep
from gabor_tf import GaussWindow, TFLattice, GaborDonor, stft_many, tf_frame_pair


def timed(function, repeats):
    """Zwraca listę czasów wykonania funkcji"""
    times = []
    for _ in range(repeats):
        start_time = time.time()
        function()
        end_time = time.time()
        times.append(end_time - start_time)
    return times


def report(title, times):
    avg_time = sum(times) / len(times)
    print(f"\n{title}:")
    print(f"  Średni czas: {avg_time:.4f}s")
    print(f"  Min czas: {min(times):.4f}s")
    print(f"  Max czas: {max(times):.4f}s")
    return avg_time


@pytest.mark.performance
class TestPerformanceBenchmarks:
    """Benchmarki wydajności obliczeń"""

    def test_canonical_dual_speed(self):
        """Benchmark wyznaczania dualnej ramy kanonicznej"""
        box = Box(1, 32.0, 256)
        family = gaussian_bumps(NodeSet.lattice(box, 1.0), 0.35)

        # Rozgrzewka
        canonical_dual(family)

        avg_time = report("Dualna rama kanoniczna", timed(lambda: canonical_dual(family), 5))
        assert avg_time < 2.0

    def test_contour_pseudo_inverse_speed(self, rng):
        """Benchmark pseudo-odwrotności przez całkę konturową"""
        vectors = np.linalg.qr(rng.standard_normal((64, 64)))[0]
        eigenvalues = np.concatenate([np.zeros(8), rng.uniform(0.5, 4.0, 56)])
        matrix = (vectors * eigenvalues) @ vectors.T

        avg_time = report("Pseudo-odwrotność konturowa",
                          timed(lambda: pseudo_inverse_contour(matrix, 0.5, 64), 3))
        reference = pseudo_inverse_svd(matrix)
        contour = pseudo_inverse_contour(matrix, 0.5, 64)
        assert np.linalg.norm(contour - reference) / np.linalg.norm(reference) < 1e-6
        assert avg_time < 5.0

    @pytest.mark.slow
    def test_error_sweep_speed(self, surgery_setup):
        """Benchmark przeglądu błędu rekonstrukcji"""
        s = surgery_setup

        def sweep():
            return error_sweep(s.donors, s.covering, s.partition, [1, 2, 4, 8, 16], s.tests)

        avg_time = report("Przegląd błędu (5 promieni)", timed(sweep, 3))
        assert avg_time < 10.0

    def test_stft_batch_speed(self, window, signal_box, rng):
        """Benchmark STFT dla paczki sygnałów"""
        signals = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
        avg_time = report("STFT (64 sygnały)", timed(lambda: stft_many(signals, window, signal_box), 5))
        assert avg_time < 1.0


@pytest.mark.performance
class TestMemoryUsage:
    """Testy zużycia pamięci"""

    def test_memory_usage_gabor_pair(self, signal_box):
        """Pamięć potrzebna na parę ramek Gabora na płaszczyźnie czas-częstotliwość"""
        window = GaussWindow(signal_box)
        donor = GaborDonor(TFLattice(signal_box, 1.0, 0.5), window.samples)

        process = psutil.Process(os.getpid())
        memory_before = process.memory_info().rss / 1024 / 1024  # MB
        pair = tf_frame_pair(donor, window)
        memory_after = process.memory_info().rss / 1024 / 1024  # MB
        memory_used = memory_after - memory_before

        print(f"\nPara ramek Gabora:")
        print(f"  Przed: {memory_before:.2f} MB")
        print(f"  Po: {memory_after:.2f} MB")
        print(f"  Użyte: {memory_used:.2f} MB")
        print(f"  Atomy: {len(pair)}")

        # 2 x 128 atomów po 4096 wartości zespolonych to ok. 16 MB
        assert memory_used < 200.0

    def test_peak_memory_canonical_dual(self):
        """Szczytowe zużycie pamięci przy wyznaczaniu dualnej ramy"""
        box = Box(1, 32.0, 256)
        family = gaussian_bumps(NodeSet.lattice(box, 0.5), 0.35)

        samples = memory_usage((canonical_dual, (family,)), interval=0.01)
        peak = max(samples) - min(samples)
        print(f"\nSzczyt pamięci (dualna rama): {peak:.2f} MB")
        assert peak < 200.0


@pytest.mark.performance
class TestConcurrency:
    """Testy współbieżności"""

    def test_threaded_sweep_matches_sequential(self, surgery_setup):
        """Przegląd w wielu wątkach daje te same wyniki co sekwencyjny"""
        s = surgery_setup
        radii = [1, 2, 4, 6]

        start_time = time.time()
        sequential = error_sweep(s.donors, s.covering, s.partition, radii, s.tests, workers=1)
        sequential_time = time.time() - start_time

        start_time = time.time()
        concurrent = error_sweep(s.donors, s.covering, s.partition, radii, s.tests, workers=4)
        concurrent_time = time.time() - start_time

        print(f"\nWspółbieżność:")
        print(f"  Czas sekwencyjny: {sequential_time:.4f}s")
        print(f"  Czas współbieżny: {concurrent_time:.4f}s")
        print(f"  Przyspieszenie: {sequential_time/concurrent_time:.2f}x")

        assert [row.radius for row in concurrent.rows] == [row.radius for row in sequential.rows]
        assert ([row.worst_rel_error for row in concurrent.rows]
                == pytest.approx([row.worst_rel_error for row in sequential.rows]))

    def test_ordered_map_keeps_order(self):
        """Kolejność wyników nie zależy od liczby wątków"""
        def slow_square(x):
            time.sleep(0.001 * (10 - x))
            return x * x

        assert ordered_map(slow_square, range(10), 4) == [x * x for x in range(10)]
