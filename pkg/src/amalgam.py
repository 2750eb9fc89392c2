#!/usr/bin/env python3
"""
Amalgam - localized families and Wiener amalgam norms

This module provides the localization layer of frame-forge:
- Atom families indexed by node sets, with declared decay envelopes
- Local sup windows and the family amalgam norm ||F||_{W(B, L^1_w)}
- Amalgam norms of single functions, W(L^inf, L^p_v)
- Schur-type matrices and their weighted Schur norm
- Synthesis, analysis, matrix-action and cross-correlation estimates
  reported as measured value against the proven bound
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy import interpolate

try:
    from .grid_core import (Box, EnvelopeError, FrameForgeError, ModeratedPair, NodeSet,
                            Weight, index_span, lp_norm, nodeset_from_dict, nodeset_to_dict,
                            ordered_map, weighted_seq_norm, window_reduce)
except ImportError:
    from grid_core import (Box, EnvelopeError, FrameForgeError, ModeratedPair, NodeSet,
                           Weight, index_span, lp_norm, nodeset_from_dict, nodeset_to_dict,
                           ordered_map, weighted_seq_norm, window_reduce)

logger = logging.getLogger(__name__)

# Relative slack accepted when a measured value is compared with a proven bound
BOUND_RTOL = 1e-9


@dataclass(frozen=True)
class Envelope:
    """Declared decay |f_k(x)| <= C (1 + |x - k|)^(-s)"""
    constant: float
    exponent: float

    def __post_init__(self):
        if self.constant <= 0:
            raise FrameForgeError(f"envelope constant must be positive, got {self.constant}")

    def bound(self, distances: np.ndarray) -> np.ndarray:
        return self.constant * (1.0 + distances) ** (-self.exponent)

    @classmethod
    def tightest(cls, atoms: np.ndarray, nodes: NodeSet, exponent: float) -> "Envelope":
        """Smallest constant C for which the atoms satisfy the envelope"""
        scaled = np.abs(atoms) * (1.0 + node_distances(nodes)) ** exponent
        return cls(float(scaled.max()), exponent)

    def to_dict(self) -> Dict[str, float]:
        return {"C": self.constant, "exponent": self.exponent}


def node_distances(nodes: NodeSet) -> np.ndarray:
    """(n, N^d) torus distances from each node to each grid point"""
    grid = nodes.box.grid_indices()
    return nodes.box.index_distance(grid[None, :, :], nodes.indices[:, None, :])


class AtomFamily:
    """Grid functions f_k, one per node (with multiplicity)"""

    def __init__(self, nodes: NodeSet, atoms: np.ndarray, envelope: Optional[Envelope] = None):
        atoms = np.asarray(atoms, dtype=complex)
        if atoms.ndim == 1 and len(nodes) == 1:
            atoms = atoms[None, :]
        if atoms.ndim != 2 or atoms.shape != (len(nodes), nodes.box.size):
            raise FrameForgeError(
                f"atom array of shape {atoms.shape} does not match {len(nodes)} nodes "
                f"on a grid of {nodes.box.size} points")
        self.nodes = nodes
        self.atoms = atoms
        self.envelope = envelope
        if envelope is not None:
            self.verify_envelope()

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return f"AtomFamily(n={len(self)}, box={self.box})"

    @property
    def box(self) -> Box:
        return self.nodes.box

    @property
    def is_zero(self) -> bool:
        return len(self) == 0 or not np.any(self.atoms)

    def node_distances(self) -> np.ndarray:
        return node_distances(self.nodes)

    def verify_envelope(self):
        """Raise EnvelopeError at the worst atom/point exceeding the envelope"""
        ratio = np.abs(self.atoms) / self.envelope.bound(self.node_distances())
        if ratio.size == 0:
            return
        atom, point = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        worst = float(ratio[atom, point])
        if worst > 1 + 1e-12:
            raise EnvelopeError(
                f"atom {atom} exceeds declared envelope at grid point {point} by factor {worst:.4g}",
                atom=int(atom), point=int(point), ratio=worst)

    def subset(self, selector) -> "AtomFamily":
        selector = np.asarray(selector)
        if selector.dtype == bool:
            selector = np.flatnonzero(selector)
        selector = selector.astype(int).reshape(-1)
        return AtomFamily(self.nodes.subset(selector), self.atoms[selector])

    def with_atoms(self, atoms: np.ndarray, envelope: Optional[Envelope] = None) -> "AtomFamily":
        return AtomFamily(self.nodes, atoms, envelope)


def gaussian_bumps(nodes: NodeSet, width: float, envelope: Optional[Envelope] = None) -> AtomFamily:
    """Family exp(-|x-k|^2 / (2 width^2)) centred at each node"""
    if width <= 0:
        raise FrameForgeError(f"width must be positive, got {width}")
    atoms = np.exp(-node_distances(nodes) ** 2 / (2 * width ** 2))
    return AtomFamily(nodes, atoms, envelope)


def bspline_bumps(nodes: NodeSet, width: float = 1.0, degree: int = 3,
                  envelope: Optional[Envelope] = None) -> AtomFamily:
    """Centred cardinal B-spline of the given degree with knot spacing ``width``.

    In two dimensions the tensor product is used.
    """
    box = nodes.box
    knots = (np.arange(degree + 2) - (degree + 1) / 2) * width
    spline = interpolate.BSpline.basis_element(knots, extrapolate=False)
    grid = box.grid_indices()
    atoms = np.ones((len(nodes), box.size))
    for axis in range(box.dim):
        offsets = box.centered_indices(grid[None, :, axis] - nodes.indices[:, axis, None]) * box.step
        atoms *= np.nan_to_num(spline(offsets.ravel()), nan=0.0).reshape(offsets.shape)
    return AtomFamily(nodes, atoms, envelope)


def envelope_atoms(nodes: NodeSet, exponent: float) -> AtomFamily:
    """Atoms equal to their own envelope (1 + |x-k|)^(-s)"""
    envelope = Envelope(1.0, exponent)
    return AtomFamily(nodes, envelope.bound(node_distances(nodes)), envelope)


def local_sup(f: np.ndarray, box: Box, cube_side: float = 1.0, margin: float = 0.0) -> np.ndarray:
    """sup of |f| over the closed window x + [-margin, side + margin]^d"""
    grow = index_span(margin, box.step)
    upper = index_span(cube_side, box.step) + grow
    return window_reduce(np.abs(np.asarray(f)), box, -grow, upper, reducer=np.maximum)


def _check_cube(box: Box, cube_side: float):
    if cube_side < box.step - 1e-12 or cube_side > box.side / 4 + 1e-12:
        raise FrameForgeError(
            f"window cube side {cube_side} outside [h, L/4] = [{box.step}, {box.side / 4}]")


def localized_profiles(family: AtomFamily, w: Weight, cube_side: float = 1.0,
                       workers: int = 1, chunk: int = 64) -> np.ndarray:
    """g_k(x) = ||f_k||_{L^inf(Q + x)} w(x - k), one row per node"""
    box = family.box

    def rows(start: int) -> np.ndarray:
        part = family.subset(np.arange(start, min(start + chunk, len(family))))
        return local_sup(part.atoms, box, cube_side) * w(part.node_distances())

    blocks = ordered_map(rows, range(0, len(family), chunk), workers)
    if not blocks:
        return np.zeros((0, box.size))
    return np.concatenate(blocks, axis=0)


@dataclass(frozen=True)
class FamilyAmalgamNorm:
    """Family amalgam norm with its two constituent terms"""
    value: float
    per_node_l1: np.ndarray
    sup_sum: float
    window_cube_side: float

    @property
    def worst_node_l1(self) -> float:
        return float(np.max(self.per_node_l1, initial=0.0))


def family_amalgam_norm(family: AtomFamily, w: Weight, cube_side: float = 1.0,
                        workers: int = 1) -> FamilyAmalgamNorm:
    """max( sup_k ||g_k||_{L^1}, sup_x sum_k g_k(x) )"""
    box = family.box
    _check_cube(box, cube_side)
    if len(family) == 0:
        return FamilyAmalgamNorm(0.0, np.zeros(0), 0.0, cube_side)
    profiles = localized_profiles(family, w, cube_side, workers)
    per_node = box.cell_volume * profiles.sum(axis=1)
    sup_sum = float(profiles.sum(axis=0).max())
    value = max(float(per_node.max()), sup_sum)
    logger.debug(f"family amalgam norm: l1={per_node.max():.4g} sum={sup_sum:.4g}")
    return FamilyAmalgamNorm(value, per_node, sup_sum, cube_side)


def function_amalgam_norm(f: np.ndarray, box: Box, v: Optional[Weight] = None,
                          cube_side: float = 1.0, p: float = 1.0) -> float:
    """||f||_{W(L^inf, L^p_v)} with local sup over x + Q"""
    _check_cube(box, cube_side)
    return float(lp_norm(local_sup(f, box, cube_side), box, p, v))


@dataclass(frozen=True)
class BoundCheck:
    """A measured quantity next to its proven upper bound"""
    measured: float
    bound: float

    @property
    def ratio(self) -> float:
        if self.bound > 0:
            return self.measured / self.bound
        return 0.0 if self.measured == 0 else float("inf")

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound * (1 + BOUND_RTOL) + 1e-300


class SchurMatrix:
    """Matrix indexed by two node sets"""

    def __init__(self, entries: np.ndarray, row_nodes: NodeSet, col_nodes: NodeSet):
        entries = np.asarray(entries)
        if entries.shape != (len(row_nodes), len(col_nodes)):
            raise FrameForgeError(
                f"matrix of shape {entries.shape} for {len(row_nodes)} x {len(col_nodes)} nodes")
        self.entries = entries
        self.row_nodes = row_nodes
        self.col_nodes = col_nodes

    def __repr__(self) -> str:
        return f"SchurMatrix(shape={self.entries.shape})"

    @classmethod
    def identity(cls, nodes: NodeSet) -> "SchurMatrix":
        return cls(np.eye(len(nodes)), nodes, nodes)

    @classmethod
    def permutation(cls, nodes: NodeSet, order: Sequence[int]) -> "SchurMatrix":
        """Row k picks column order[k]"""
        entries = np.zeros((len(nodes), len(nodes)))
        entries[np.arange(len(nodes)), np.asarray(order, dtype=int)] = 1.0
        return cls(entries, nodes, nodes)

    def node_distances(self) -> np.ndarray:
        box = self.row_nodes.box
        return box.index_distance(self.row_nodes.indices[:, None, :], self.col_nodes.indices[None, :, :])

    def schur_norm(self, w: Optional[Weight] = None) -> float:
        """max of weighted row and column sums of |c_kj| w(k - j)"""
        if self.entries.size == 0:
            return 0.0
        weighted = np.abs(self.entries)
        if w is not None:
            weighted = weighted * w(self.node_distances())
        return float(max(weighted.sum(axis=1).max(), weighted.sum(axis=0).max()))

    def conj_transpose(self) -> "SchurMatrix":
        return SchurMatrix(self.entries.conj().T, self.col_nodes, self.row_nodes)

    def __matmul__(self, other: "SchurMatrix") -> "SchurMatrix":
        if not self.col_nodes.same_nodes(other.row_nodes):
            raise FrameForgeError("index mismatch in Schur matrix product")
        return SchurMatrix(self.entries @ other.entries, self.row_nodes, other.col_nodes)


def synthesize(c: np.ndarray, family: AtomFamily) -> np.ndarray:
    """sum_k c_k f_k (batched over leading axes of c)"""
    c = np.asarray(c)
    if c.shape[-1] != len(family):
        raise FrameForgeError(f"{c.shape[-1]} coefficients for {len(family)} atoms")
    return c @ family.atoms


def analyze(f: np.ndarray, family: AtomFamily) -> np.ndarray:
    """Coefficients <f, f_k> = h^d sum f conj(f_k) (batched over leading axes of f)"""
    f = np.asarray(f)
    if f.shape[-1] != family.box.size:
        raise FrameForgeError(f"function with {f.shape[-1]} samples on a grid of {family.box.size}")
    return family.box.cell_volume * (f @ family.atoms.conj().T)


def matrix_apply(matrix: SchurMatrix, family: AtomFamily) -> AtomFamily:
    """Family h_k = sum_j c_kj f_j indexed by the matrix rows"""
    if not matrix.col_nodes.same_nodes(family.nodes):
        raise FrameForgeError("index mismatch: matrix columns do not match family nodes")
    return AtomFamily(matrix.row_nodes, matrix.entries @ family.atoms)


def cross_correlation(first: AtomFamily, second: AtomFamily) -> SchurMatrix:
    """Matrix <f_k, g_j> indexed by the two node sets"""
    if first.box != second.box:
        raise FrameForgeError("families live on different boxes")
    entries = first.box.cell_volume * (first.atoms @ second.atoms.conj().T)
    return SchurMatrix(entries, first.nodes, second.nodes)


def synthesis_bound(c: np.ndarray, family: AtomFamily, pair: ModeratedPair, p: float,
                    cube_side: float = 1.0) -> BoundCheck:
    """||sum c_k f_k||_{W(L^inf, L^p_v)} against C ||c||_{l^p_v} ||F||_W"""
    measured = function_amalgam_norm(synthesize(c, family), family.box, pair.v, cube_side, p)
    bound = (pair.moderation_constant * weighted_seq_norm(c, family.nodes, p, pair.v)
             * family_amalgam_norm(family, pair.w, cube_side).value)
    return BoundCheck(measured, bound)


def analysis_bound(f: np.ndarray, family: AtomFamily, pair: ModeratedPair, p: float,
                   cube_side: float = 1.0) -> BoundCheck:
    """||(<f, f_k>)_k||_{l^p_v} against C ||f||_{L^p_v} ||F||_W"""
    measured = weighted_seq_norm(analyze(f, family), family.nodes, p, pair.v)
    bound = (pair.moderation_constant * float(lp_norm(f, family.box, p, pair.v))
             * family_amalgam_norm(family, pair.w, cube_side).value)
    return BoundCheck(measured, bound)


def matrix_bound(matrix: SchurMatrix, family: AtomFamily, w: Weight,
                 cube_side: float = 1.0) -> BoundCheck:
    """||C F||_W against ||C||_{S_w} ||F||_W"""
    measured = family_amalgam_norm(matrix_apply(matrix, family), w, cube_side).value
    bound = matrix.schur_norm(w) * family_amalgam_norm(family, w, cube_side).value
    return BoundCheck(measured, bound)


def correlation_bound(first: AtomFamily, second: AtomFamily, w: Weight,
                      cube_side: float = 1.0) -> BoundCheck:
    """||<F, G>||_{S_w} against ||F||_W ||G||_W"""
    measured = cross_correlation(first, second).schur_norm(w)
    bound = (family_amalgam_norm(first, w, cube_side).value
             * family_amalgam_norm(second, w, cube_side).value)
    return BoundCheck(measured, bound)


@dataclass(frozen=True)
class SchurReport:
    """Both halves of the Schur-type interpolation estimate"""
    p: float
    synthesis: BoundCheck
    analysis: BoundCheck

    @property
    def holds(self) -> bool:
        return self.synthesis.holds and self.analysis.holds


def _conjugate_exponents(p: float):
    inverse = 0.0 if np.isinf(p) else 1.0 / p
    return inverse, 1.0 - inverse


def _seq_norm(values: np.ndarray, p: float) -> float:
    values = np.abs(values)
    if values.size == 0:
        return 0.0
    if np.isinf(p):
        return float(values.max())
    return float(np.sum(values ** p) ** (1.0 / p))


def schur_interpolation_check(functions: np.ndarray, box: Box, p: float,
                              coefficients: np.ndarray, density: np.ndarray) -> SchurReport:
    """Check both interpolation estimates for a family of grid functions.

    With A = sup_k ||f_k||_1 and B = sup_x sum_k |f_k(x)|:
      ||sum c_k f_k||_p <= ||c||_p A^(1/p) B^(1/p')
      ||(<g, f_k>)_k||_p <= ||g||_p A^(1/p') B^(1/p)
    """
    magnitudes = np.abs(np.asarray(functions))
    family_l1 = float(np.max(box.cell_volume * magnitudes.sum(axis=1), initial=0.0))
    family_sum = float(np.max(magnitudes.sum(axis=0), initial=0.0))
    inv_p, inv_q = _conjugate_exponents(p)

    combined = np.asarray(coefficients) @ np.asarray(functions)
    synthesis = BoundCheck(float(lp_norm(combined, box, p)),
                           _seq_norm(coefficients, p) * family_l1 ** inv_p * family_sum ** inv_q)

    products = box.cell_volume * (np.asarray(functions).conj() @ np.asarray(density))
    analysis = BoundCheck(_seq_norm(products, p),
                          float(lp_norm(density, box, p)) * family_l1 ** inv_q * family_sum ** inv_p)
    return SchurReport(p, synthesis, analysis)


def family_to_dict(family: AtomFamily) -> Dict[str, Any]:
    """Structured text form of a family (atoms stored as real/imag sample lists)"""
    return {
        "nodes": nodeset_to_dict(family.nodes),
        "atoms_real": family.atoms.real.tolist(),
        "atoms_imag": family.atoms.imag.tolist(),
        "envelope": family.envelope.to_dict() if family.envelope else None,
    }


def family_from_dict(data: Dict[str, Any]) -> AtomFamily:
    nodes, _ = nodeset_from_dict(data["nodes"])
    atoms = np.asarray(data["atoms_real"], dtype=float) + 1j * np.asarray(data.get("atoms_imag", 0.0))
    envelope = None
    if data.get("envelope"):
        envelope = Envelope(float(data["envelope"]["C"]), float(data["envelope"]["exponent"]))
    return AtomFamily(nodes, atoms.reshape(len(nodes), -1), envelope)


def save_family(family: AtomFamily, path: Path):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(family_to_dict(family), handle)


def load_family(path: Path) -> AtomFamily:
    path = Path(path)
    if not path.exists():
        raise FrameForgeError(f"atom family file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise FrameForgeError(f"invalid atom family file {path}: {e}")
    return family_from_dict(data)
