"""
Konfiguracja pytest dla testów frame-forge.
"""

import json
import os
import sys
from types import SimpleNamespace

import numpy as np
import pytest

# Dodaj src do ścieżki
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from grid_core import Box, NodeSet
from amalgam import gaussian_bumps
from frame_engine import canonical_dual, exterior_frame_pair, span_basis
from surgery import Covering, build_partition
from gabor_tf import GaussWindow


@pytest.fixture
def rng():
    """Zwraca generator liczb losowych z ustalonym ziarnem"""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_box():
    """Pudełko [0, 10) z krokiem 0.1"""
    return Box(1, 10.0, 100)


@pytest.fixture(scope="session")
def box_1d():
    """Pudełko [0, 16) ze 128 punktami"""
    return Box(1, 16.0, 128)


@pytest.fixture(scope="session")
def signal_box():
    """Pudełko sygnału [0, 8) z 64 punktami (L^2 = N, płaszczyzna czas-częstotliwość)"""
    return Box(1, 8.0, 64)


@pytest.fixture(scope="session")
def window(signal_box):
    """Znormalizowane okno Gaussa na pudełku sygnału"""
    return GaussWindow(signal_box)


@pytest.fixture(scope="session")
def gaussian_space(box_1d):
    """Para ramek (atomy Gaussa szerokości 0.5 na liczbach całkowitych, dualne kanoniczne)"""
    return canonical_dual(gaussian_bumps(NodeSet.lattice(box_1d, 1.0), 0.5))


@pytest.fixture(scope="session")
def surgery_setup():
    """Przestrzeń, dwóch dawców i pokrycie dwiema połówkami pudełka [0, 32)"""
    box = Box(1, 32.0, 256)
    reference = gaussian_bumps(NodeSet.lattice(box, 1.0), 0.35)
    space = canonical_dual(reference)
    donors = [exterior_frame_pair(space, gaussian_bumps(NodeSet.lattice(box, 1.0, offset), 0.35))
              for offset in (0.0, 0.25)]
    covering = Covering.from_axis_intervals(box, [(0, 16), (16, 32)])
    tests = np.random.default_rng(7).standard_normal((4, len(reference))) @ reference.atoms
    return SimpleNamespace(
        box=box,
        reference=reference,
        space=space,
        donors=donors,
        covering=covering,
        partition=build_partition(covering),
        basis=span_basis(reference),
        tests=tests,
    )


@pytest.fixture
def temp_config(tmp_path):
    """Zapisuje konfigurację eksperymentu do pliku JSON i zwraca jego ścieżkę"""

    def _write(data, name="config.json"):
        path = tmp_path / name
        if "output" not in data:
            data = dict(data, output=str(tmp_path / "results"))
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def selftest_config():
    """Minimalna konfiguracja autotestu"""
    return {"kind": "selftest", "seed": 0}
