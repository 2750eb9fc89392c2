#!/usr/bin/env python3
"""
Experiment Runner - configuration-driven frame-forge experiments

This module ties the library together into reproducible desk-scale runs:
- JSON experiment configs parsed into validated dataclasses
- One runner method per experiment kind (surgery, Gabor, SIS, sampling, multiplier)
- Deterministic CSV tables and a JSON manifest per run
- Built-in self-test of the core invariants
- Config schema export
"""

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from .grid_core import (Box, CertificationError, ConfigError, FrameForgeError, NodeSet, Weight,
                            conv_nodes_check, is_L_dense, rel_separation)
    from .amalgam import AtomFamily, Envelope, bspline_bumps, envelope_atoms, gaussian_bumps, load_family
    from .frame_engine import (canonical_dual, decay_fit, exterior_frame_pair, gram, pseudo_inverse_contour,
                               pseudo_inverse_svd, span_basis)
    from .surgery import (SWEEP_COLUMNS, Covering, QuiltedSystem, build_partition, certify_quilt,
                          error_sweep)
    from .gabor_tf import (GaborDonor, GaussWindow, TFLattice, quilt_gabor, shift_indices, signal_side_bounds, stft,
                           tf_box, tf_frame_pair, tf_space_basis)
    from .sis_kn import (FIBER_RTOL, GaborMultiplier, LatticePair, fiber_gram, fourier, kn_symbol_rank_one,
                         multiplier_recover, quilt_sis, rank_one_matrix, translate_family)
    from .sampling import SamplingExperiment, kernel_at, quilt_sampling
except ImportError:
    from grid_core import (Box, CertificationError, ConfigError, FrameForgeError, NodeSet, Weight,
                           conv_nodes_check, is_L_dense, rel_separation)
    from amalgam import AtomFamily, Envelope, bspline_bumps, envelope_atoms, gaussian_bumps, load_family
    from frame_engine import (canonical_dual, decay_fit, exterior_frame_pair, gram, pseudo_inverse_contour,
                              pseudo_inverse_svd, span_basis)
    from surgery import (SWEEP_COLUMNS, Covering, QuiltedSystem, build_partition, certify_quilt,
                         error_sweep)
    from gabor_tf import (GaborDonor, GaussWindow, TFLattice, quilt_gabor, shift_indices, signal_side_bounds, stft,
                          tf_box, tf_frame_pair, tf_space_basis)
    from sis_kn import (FIBER_RTOL, GaborMultiplier, LatticePair, fiber_gram, fourier, kn_symbol_rank_one,
                        multiplier_recover, quilt_sis, rank_one_matrix, translate_family)
    from sampling import SamplingExperiment, kernel_at, quilt_sampling

logger = logging.getLogger(__name__)

VERSION = "0.1.0"
THREADS_ENV = "FRAME_FORGE_THREADS"
DEFAULT_OUTPUT = "results"

GABOR_COLUMNS = ["r", "lower_bound", "upper_bound", "signal_lower_bound", "signal_upper_bound",
                 "deviation", "overlap_count"]
SIS_COLUMNS = ["r", "lower_bound", "upper_bound", "deviation"]
SAMPLING_COLUMNS = ["r", "A_r", "B_r", "recon_rel_error", "n_points"]
MULTIPLIER_COLUMNS = ["r", "n_probes", "smallest_singular_value", "mask_rel_error", "hs_residual"]


class ExperimentKind(Enum):
    """Experiment kinds understood by the runner"""
    SURGERY_SWEEP = "surgery-sweep"
    GABOR_QUILT = "gabor-quilt"
    SIS_QUILT = "sis-quilt"
    SAMPLING = "sampling"
    MULTIPLIER = "multiplier"
    SELFTEST = "selftest"


class AtomKind(Enum):
    """Atom families a config can request"""
    GAUSSIAN_BUMPS = "gaussian-bumps"
    BSPLINE_LIKE = "bspline-like"
    CUSTOM_FILE = "custom-file"


class CoveringKind(Enum):
    INTERVALS = "intervals"
    RANDOM_BOXES = "random-boxes"
    WHOLE = "whole"


def _enum(enum_cls, value, name: str):
    try:
        return enum_cls(value)
    except ValueError:
        choices = ", ".join(member.value for member in enum_cls)
        raise ConfigError(f"{name}: unknown value '{value}' (expected one of {choices})")


def _require(data: Dict[str, Any], key: str, prefix: str):
    if key not in data or data[key] is None:
        raise ConfigError(f"{prefix}{key}: required field is missing")
    return data[key]


def _optional_float(data: Dict[str, Any], key: str) -> Optional[float]:
    return float(data[key]) if data.get(key) is not None else None


@dataclass
class DomainSpec:
    """Periodic box [0, L)^d with N points per axis"""
    side: float
    points_per_axis: int
    dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"domain.dim: expected 1 or 2, got {self.dim}")
        if self.side <= 0 or self.points_per_axis < 2:
            raise ConfigError(f"domain: invalid box side={self.side} N={self.points_per_axis}")

    def box(self) -> Box:
        return Box(self.dim, self.side, self.points_per_axis)


@dataclass
class AtomSpec:
    """Atom family description; scientific parameters carry no defaults"""
    kind: AtomKind
    spacing: Optional[float] = None
    offset: float = 0.0
    width: Optional[float] = None
    degree: int = 3
    path: Optional[str] = None
    envelope: Optional[Envelope] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind == AtomKind.CUSTOM_FILE:
            if not self.path:
                raise ConfigError("atoms.path: required for custom-file atoms")
            if not Path(self.path).exists():
                raise ConfigError(f"atoms.path: file not found: {self.path}")
        elif self.width is None:
            raise ConfigError(f"atoms.width: required for {self.kind.value} atoms")

    def family(self, box: Box, nodes: Optional[NodeSet] = None) -> AtomFamily:
        """Build the family on ``nodes`` (default: the lattice from ``spacing``/``offset``)"""
        if self.kind == AtomKind.CUSTOM_FILE:
            return load_family(Path(self.path))
        if nodes is None:
            if self.spacing is None:
                raise ConfigError(f"atoms.spacing: required for {self.kind.value} atoms")
            nodes = NodeSet.lattice(box, self.spacing, self.offset)
        if self.kind == AtomKind.GAUSSIAN_BUMPS:
            return gaussian_bumps(nodes, self.width)
        return bspline_bumps(nodes, self.width, self.degree)

    def generator(self, box: Box, shift: float = 0.0) -> np.ndarray:
        """Single atom centred at ``shift``"""
        return self.family(box, NodeSet.from_positions(box, [shift] * box.dim)).atoms[0]


@dataclass
class DonorSpec:
    """One donor; which fields are required depends on the experiment kind"""
    kind: Optional[AtomKind] = None
    spacing: Optional[float] = None
    offset: float = 0.0
    width: Optional[float] = None
    time_step: Optional[float] = None
    freq_step: Optional[float] = None
    time_offset: float = 0.0
    freq_offset: float = 0.0
    time_shift: float = 0.0

    def require(self, names: Sequence[str], index: int):
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"donors[{index}].{name}: required field is missing")


@dataclass
class CoveringSpec:
    kind: CoveringKind
    intervals: List[Tuple[float, float]] = field(default_factory=list)
    axis: int = 0
    count: int = 0
    max_margin: float = 1.0

    def __post_init__(self):
        if self.kind == CoveringKind.INTERVALS and not self.intervals:
            raise ConfigError("covering.intervals: required for an interval covering")
        if self.kind == CoveringKind.RANDOM_BOXES and self.count < 1:
            raise ConfigError("covering.count: must be positive for a random covering")

    def build(self, box: Box, rng: np.random.Generator) -> Covering:
        if self.kind == CoveringKind.WHOLE:
            return Covering.whole(box)
        if self.kind == CoveringKind.RANDOM_BOXES:
            return Covering.random_boxes(box, self.count, rng, self.max_margin)
        return Covering.from_axis_intervals(box, self.intervals, self.axis)


@dataclass
class ExperimentConfig:
    """A single experiment: one kind, one seed, one output directory"""
    kind: ExperimentKind
    seed: int
    domain: Optional[DomainSpec] = None
    atoms: Optional[AtomSpec] = None
    donors: List[DonorSpec] = field(default_factory=list)
    covering: Optional[CoveringSpec] = None
    radii: List[float] = field(default_factory=list)
    grid: List[Tuple[float, float]] = field(default_factory=list)
    lattice: List[float] = field(default_factory=list)
    test_functions: int = 8
    output: str = DEFAULT_OUTPUT
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind == ExperimentKind.SELFTEST:
            return
        for name in ("domain", "covering"):
            if getattr(self, name) is None:
                raise ConfigError(f"{name}: required field is missing")
        if self.kind != ExperimentKind.MULTIPLIER and self.atoms is None:
            raise ConfigError("atoms: required field is missing")
        if len(self.radii) < 2 or any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ConfigError(f"radii: must hold at least two strictly increasing values, got {self.radii}")
        if self.radii[0] < 0:
            raise ConfigError("radii: selection radii must be non-negative")
        if not self.donors:
            raise ConfigError("donors: at least one donor is required")
        if self.kind in (ExperimentKind.SURGERY_SWEEP, ExperimentKind.GABOR_QUILT) and (
                self.atoms is None or self.atoms.envelope is None):
            raise ConfigError("atoms.envelope: a declared envelope is required for this experiment")
        if self.kind == ExperimentKind.SURGERY_SWEEP and not self.grid:
            raise ConfigError("grid: at least one (p, weight_exponent) pair is required")
        if self.kind == ExperimentKind.SURGERY_SWEEP:
            if self.atoms.alpha is None:
                raise ConfigError("atoms.envelope.alpha: required field is missing")
            if self.atoms.alpha < 0 or self.atoms.envelope.exponent - self.atoms.alpha <= self.domain.dim:
                raise ConfigError(
                    f"atoms.envelope.alpha: need alpha >= 0 and exponent - alpha > d, got alpha={self.atoms.alpha} "
                    f"exponent={self.atoms.envelope.exponent} d={self.domain.dim}")
        if self.kind in (ExperimentKind.SIS_QUILT, ExperimentKind.MULTIPLIER) and not self.lattice:
            raise ConfigError("lattice: lattice steps are required for this experiment")
        if self.test_functions < 1:
            raise ConfigError("test_functions: must be positive")


def _parse_envelope(data: Optional[Dict[str, Any]]) -> Optional[Envelope]:
    if data is None:
        return None
    try:
        return Envelope(float(_require(data, "C", "atoms.envelope.")),
                        float(_require(data, "exponent", "atoms.envelope.")))
    except FrameForgeError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"atoms.envelope: {e}")


def _parse_p(value) -> float:
    if isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return float("inf")
    return float(value)


def config_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Validate a raw config mapping into an ExperimentConfig"""
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    kind = _enum(ExperimentKind, _require(data, "kind", ""), "kind")
    seed = data.get("seed")
    if kind != ExperimentKind.SELFTEST and seed is None:
        raise ConfigError("seed: required field is missing")
    try:
        domain = None
        if data.get("domain") is not None:
            spec = data["domain"]
            domain = DomainSpec(float(_require(spec, "side", "domain.")),
                                int(_require(spec, "points_per_axis", "domain.")),
                                int(_require(spec, "dim", "domain.")))
        atoms = None
        if data.get("atoms") is not None:
            spec = data["atoms"]
            path = spec.get("path")
            if path is not None and base_dir is not None and not Path(path).is_absolute():
                path = str(base_dir / path)
            atoms = AtomSpec(_enum(AtomKind, _require(spec, "kind", "atoms."), "atoms.kind"),
                             _optional_float(spec, "spacing"), float(spec.get("offset", 0.0)),
                             _optional_float(spec, "width"), int(spec.get("degree", 3)), path,
                             _parse_envelope(spec.get("envelope")),
                             _optional_float(spec.get("envelope") or {}, "alpha"))
        donors = []
        for i, spec in enumerate(data.get("donors", [])):
            donor_kind = _enum(AtomKind, spec["kind"], f"donors[{i}].kind") if "kind" in spec else None
            donors.append(DonorSpec(donor_kind, _optional_float(spec, "spacing"),
                                    float(spec.get("offset", 0.0)), _optional_float(spec, "width"),
                                    _optional_float(spec, "time_step"), _optional_float(spec, "freq_step"),
                                    float(spec.get("time_offset", 0.0)), float(spec.get("freq_offset", 0.0)),
                                    float(spec.get("time_shift", 0.0))))
        covering = None
        if data.get("covering") is not None:
            spec = data["covering"]
            covering = CoveringSpec(_enum(CoveringKind, _require(spec, "kind", "covering."), "covering.kind"),
                                    [tuple(float(v) for v in pair) for pair in spec.get("intervals", [])],
                                    int(spec.get("axis", 0)), int(spec.get("count", 0)),
                                    float(spec.get("max_margin", 1.0)))
        grid = [(_parse_p(_require(cell, "p", "grid[].")), float(_require(cell, "weight_exponent", "grid[].")))
                for cell in data.get("grid", [])]
        return ExperimentConfig(
            kind=kind,
            seed=int(seed) if seed is not None else 0,
            domain=domain,
            atoms=atoms,
            donors=donors,
            covering=covering,
            radii=[float(r) for r in data.get("radii", [])],
            grid=grid,
            lattice=[float(v) for v in data.get("lattice", [])],
            test_functions=int(data.get("test_functions", 8)),
            output=str(data.get("output", DEFAULT_OUTPUT)),
            raw=data,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config: malformed value ({e})")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: invalid JSON in {path}: {e}")
    return config_from_dict(data, path.parent)


def thread_count() -> int:
    """Worker threads from FRAME_FORGE_THREADS (default 1)"""
    value = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: expected an integer, got '{value}'")
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV}: must be at least 1, got {threads}")
    return threads


CONFIG_SCHEMA = [
    ("kind", "string", True, "surgery-sweep | gabor-quilt | sis-quilt | sampling | multiplier | selftest"),
    ("seed", "integer", True, "seed for every random draw (test functions, masks, random coverings)"),
    ("domain.side", "number", True, "box side L"),
    ("domain.points_per_axis", "integer", True, "grid points N per axis"),
    ("domain.dim", "integer", True, "dimension d (1 or 2)"),
    ("atoms.kind", "string", True, "gaussian-bumps | bspline-like | custom-file"),
    ("atoms.spacing", "number", False, "node lattice spacing of the reference family"),
    ("atoms.offset", "number", False, "node lattice offset"),
    ("atoms.width", "number", False, "Gaussian width or B-spline knot spacing"),
    ("atoms.degree", "integer", False, "B-spline degree"),
    ("atoms.path", "string", False, "JSON atom family file for custom-file atoms"),
    ("atoms.envelope.C", "number", False, "declared envelope constant"),
    ("atoms.envelope.exponent", "number", False, "declared envelope exponent s + alpha"),
    ("atoms.envelope.alpha", "number", False, "weight exponent alpha; the error rate uses s = exponent - alpha (surgery-sweep)"),
    ("donors[]", "array", True, "donor families, Gabor lattices, sampling sets or probe shifts"),
    ("covering.kind", "string", True, "intervals | random-boxes | whole"),
    ("covering.intervals", "array", False, "closed [a, b] intervals along covering.axis"),
    ("covering.axis", "integer", False, "axis of the interval covering"),
    ("covering.count", "integer", False, "number of regions of a random covering"),
    ("radii", "array", True, "strictly increasing selection radii"),
    ("grid[].p", "number|'inf'", False, "integrability exponent p"),
    ("grid[].weight_exponent", "number", False, "exponent of the weight v"),
    ("lattice", "array", False, "lattice steps (SIS per axis; multiplier time and frequency)"),
    ("test_functions", "integer", False, "number of random span elements"),
    ("output", "string", False, "output directory (default results)"),
]


def config_schema() -> List[Dict[str, Any]]:
    return [{"field": name, "type": kind, "required": required, "description": text}
            for name, kind, required, text in CONFIG_SCHEMA]


class RunLogger:
    """Logger that also keeps the errors and warnings of a run for the manifest"""

    def __init__(self, level=logging.INFO):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.logger.setLevel(level)
        self.errors = []
        self.warnings = []

    def log_error(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        if diagnostics:
            message = f"{message} ({json.dumps(diagnostics, sort_keys=True, default=str)})"
        self.errors.append(message)
        self.logger.error(message)

    def log_warning(self, message: str):
        self.warnings.append(message)
        self.logger.warning(message)

    def log_info(self, message: str):
        self.logger.info(message)


@dataclass
class RunResult:
    exit_code: int
    outputs: List[Path] = field(default_factory=list)
    fitted: Dict[str, Any] = field(default_factory=dict)
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Dict[str, Any]]):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row[column]) for column in columns])


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else repr(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    return value


class ExperimentRunner:
    """Runs one experiment config and writes its CSV table and manifest"""

    def __init__(self, workers: Optional[int] = None, log_level=logging.INFO):
        self.workers = workers if workers is not None else thread_count()
        self.logger = RunLogger(log_level)

    def run(self, config: ExperimentConfig) -> RunResult:
        handlers: Dict[ExperimentKind, Callable] = {
            ExperimentKind.SURGERY_SWEEP: self._run_surgery_sweep,
            ExperimentKind.GABOR_QUILT: self._run_gabor_quilt,
            ExperimentKind.SIS_QUILT: self._run_sis_quilt,
            ExperimentKind.SAMPLING: self._run_sampling,
            ExperimentKind.MULTIPLIER: self._run_multiplier,
            ExperimentKind.SELFTEST: self._run_selftest,
        }
        output_dir = Path(config.output)
        output_dir.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(config.seed)
        self.logger.log_info(f"Running {config.kind.value} (seed {config.seed}, {self.workers} threads)")

        outputs: List[Path] = []
        fitted: Dict[str, Any] = {}
        exit_code = 0
        try:
            exit_code, outputs, fitted = handlers[config.kind](config, rng, output_dir)
        except CertificationError as e:
            self.logger.log_error(f"certification refused: {e}", e.diagnostics)
            exit_code = 2
        except FrameForgeError as e:
            self.logger.log_error(str(e))
            exit_code = 1

        manifest = output_dir / "manifest.json"
        outputs.append(manifest)
        self._write_manifest(manifest, config, fitted, outputs, exit_code)
        return RunResult(exit_code, outputs, fitted, list(self.logger.errors), list(self.logger.warnings))

    def _write_manifest(self, path: Path, config: ExperimentConfig, fitted: Dict[str, Any],
                        outputs: List[Path], exit_code: int):
        manifest = {
            "config": config.raw,
            "kind": config.kind.value,
            "version": VERSION,
            "seed": config.seed,
            "threads": self.workers,
            "exit_code": exit_code,
            "fitted": fitted,
            "warnings": self.logger.warnings,
            "errors": self.logger.errors,
            "outputs": [p.name for p in outputs],
        }
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(_jsonable(manifest), handle, indent=2, sort_keys=True)
            handle.write("\n")

    def _random_span(self, space_atoms: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
        coefficients = rng.standard_normal((count, len(space_atoms)))
        return coefficients @ space_atoms

    def _run_surgery_sweep(self, config: ExperimentConfig, rng: np.random.Generator, output_dir: Path):
        box = config.domain.box()
        reference = config.atoms.family(box)
        space = canonical_dual(reference)
        basis = span_basis(reference)
        envelope = config.atoms.envelope
        donors = []
        for i, spec in enumerate(config.donors):
            spec.require(["kind", "spacing", "width"], i)
            donor_atoms = AtomSpec(spec.kind, spec.spacing, spec.offset, spec.width).family(box)
            donor_atoms = AtomFamily(donor_atoms.nodes, donor_atoms.atoms, envelope)
            donors.append(exterior_frame_pair(space, donor_atoms))
        covering = config.covering.build(box, rng)
        partition = build_partition(covering)
        tests = self._random_span(reference.atoms, config.test_functions, rng)
        decay_exponent = envelope.exponent - config.atoms.alpha

        rows, fitted = [], {"alpha": config.atoms.alpha, "decay_exponent": decay_exponent, "sweeps": []}
        for p, t in config.grid:
            table = error_sweep(donors, covering, partition, config.radii, tests, p, Weight(t),
                                basis, decay_exponent, self.workers)
            rows.extend(table.csv_rows())
            fitted["sweeps"].append({"p": p, "weight_exponent": t, "fitted_slope": table.fitted_slope,
                                     "fitted_constant": table.fitted_constant,
                                     "monotone": table.monotone})
            if not table.monotone:
                self.logger.log_warning(f"p={p} t={t}: reconstruction error is not monotone in r")

        certified = None
        for radius in config.radii:
            system = QuiltedSystem.build(donors, covering, radius)
            if system.size == 0:
                continue
            certificate = certify_quilt(system, partition, basis)
            if certificate.certified:
                certified = {"r": radius, "deviation": certificate.deviation,
                             "certified_lower": certificate.certified_lower,
                             "measured_lower": certificate.spectrum.lower,
                             "consistent": certificate.consistent}
                break
        if certified is None:
            self.logger.log_warning("no radius certified: deviation of A^r stayed >= 1")
        fitted["certified"] = certified
        fitted["dual_decay"] = decay_fit(space.duals).exponent

        path = output_dir / "surgery_sweep.csv"
        write_csv(path, SWEEP_COLUMNS, rows)
        return 0, [path], fitted

    def _run_gabor_quilt(self, config: ExperimentConfig, rng: np.random.Generator, output_dir: Path):
        box = config.domain.box()
        window = GaussWindow(box)
        generator = config.atoms.generator(box)
        generator = generator / np.sqrt(box.cell_volume * np.sum(np.abs(generator) ** 2))
        donors = []
        for i, spec in enumerate(config.donors):
            spec.require(["time_step", "freq_step"], i)
            lattice = TFLattice(box, spec.time_step, spec.freq_step, spec.time_offset, spec.freq_offset)
            donors.append(GaborDonor(lattice, generator))
        pairs = [tf_frame_pair(donor, window, config.atoms.envelope) for donor in donors]
        covering = config.covering.build(tf_box(box), rng)
        partition = build_partition(covering)
        basis = tf_space_basis(window)

        rows, certified = [], None
        for radius in config.radii:
            quilt = quilt_gabor(pairs, covering, radius, window, partition=partition)
            signal = signal_side_bounds(quilt.system, donors) if quilt.system.size else None
            certificate = certify_quilt(quilt.system, partition, basis)
            if certified is None and certificate.certified:
                certified = {"r": radius, "deviation": certificate.deviation,
                             "certified_lower": certificate.certified_lower,
                             "measured_lower": quilt.tf_spectrum.lower}
            rows.append({"r": radius, "lower_bound": quilt.tf_spectrum.lower,
                         "upper_bound": quilt.tf_spectrum.upper,
                         "signal_lower_bound": signal.lower if signal else 0.0,
                         "signal_upper_bound": signal.upper if signal else 0.0,
                         "deviation": certificate.deviation, "overlap_count": covering.overlap_count})
        if certified is None:
            self.logger.log_warning("no radius certified for the Gabor quilt")

        f = self._random_span(np.eye(box.size), 1, rng)[0]
        norm = np.sqrt(box.cell_volume * np.sum(np.abs(f) ** 2))
        isometry_error = abs(stft(f, window, box).energy() - norm) / norm
        path = output_dir / "gabor_quilt.csv"
        write_csv(path, GABOR_COLUMNS, rows)
        return 0, [path], {"certified": certified, "stft_isometry_error": isometry_error}

    def _run_sis_quilt(self, config: ExperimentConfig, rng: np.random.Generator, output_dir: Path):
        box = config.domain.box()
        lattice = LatticePair.diagonal(box, config.lattice)
        reference = config.atoms.generator(box)
        generators = []
        for i, spec in enumerate(config.donors):
            spec.require(["kind", "width"], i)
            generators.append(AtomSpec(spec.kind, None, 0.0, spec.width).generator(box, spec.offset))
        covering = config.covering.build(box, rng)
        report = quilt_sis(reference, generators, lattice, covering, config.radii,
                           config.atoms.envelope, workers=self.workers)
        first = next((row.radius for row in report.rows if row.deviation < 1), None)
        if first is None:
            self.logger.log_warning("no radius reached deviation < 1 for the SIS quilt")
        path = output_dir / "sis_quilt.csv"
        write_csv(path, SIS_COLUMNS, report.csv_rows())
        fitted = {"reference_riesz": list(report.reference_riesz), "donor_bounds": report.donor_bounds,
                  "certified_r": first}
        return 0, [path], fitted

    def _run_sampling(self, config: ExperimentConfig, rng: np.random.Generator, output_dir: Path):
        box = config.domain.box()
        space = canonical_dual(config.atoms.family(box))
        sets = []
        for i, spec in enumerate(config.donors):
            spec.require(["spacing"], i)
            sets.append(NodeSet.lattice(box, spec.spacing, spec.offset))
        covering = config.covering.build(box, rng)
        experiment = SamplingExperiment(space, sets, covering)
        tests = self._random_span(space.atoms.atoms, config.test_functions, rng)
        rows, fitted = [], {"slopes": []}
        grid = config.grid or [(2.0, 0.0)]
        for p, t in grid:
            table = quilt_sampling(experiment, config.radii, p, Weight(t), tests, workers=self.workers)
            rows.extend(table.csv_rows())
            fitted["slopes"].append({"p": p, "weight_exponent": t, "fitted_slope": table.fitted_slope})
        path = output_dir / "sampling.csv"
        write_csv(path, SAMPLING_COLUMNS, rows)
        return 0, [path], fitted

    def _run_multiplier(self, config: ExperimentConfig, rng: np.random.Generator, output_dir: Path):
        box = config.domain.box()
        if len(config.lattice) != 2:
            raise ConfigError("lattice: multiplier lattice needs [time_step, freq_step]")
        lattice = TFLattice(box, config.lattice[0], config.lattice[1])
        window = GaussWindow(box).samples
        reference_pairs = [(window, window)]
        masks = rng.standard_normal(len(lattice)) + 1j * rng.standard_normal(len(lattice))
        multiplier = GaborMultiplier(lattice, reference_pairs, masks)
        probes = []
        for spec in config.donors:
            shifted = shift_indices(window, int(round(spec.time_shift / box.step)), 0)
            probes.append([(shifted, shifted)])
        covering = config.covering.build(tf_box(box), rng)

        results = [multiplier_recover(reference_pairs, probes, covering, radius, multiplier)
                   for radius in config.radii]
        for result in results:
            if result.rank_deficient:
                self.logger.log_warning(f"r={result.radius}: rank deficient recovery "
                                        f"(smallest singular value {result.smallest_singular_value:.3e})")
        path = output_dir / "multiplier.csv"
        write_csv(path, MULTIPLIER_COLUMNS, [result.csv_row() for result in results])
        first = next((r.radius for r in results if not r.rank_deficient), None)
        exit_code = 2 if results[-1].rank_deficient else 0
        if exit_code:
            self.logger.log_error("mask recovery is rank deficient at the largest radius")
        return exit_code, [path], {"certified_r": first}

    def _run_selftest(self, config: ExperimentConfig, rng: np.random.Generator, output_dir: Path):
        report = SelfTest(config.seed).run()
        path = output_dir / "selftest.csv"
        write_csv(path, ["check", "passed", "detail"],
                  [{"check": c.name, "passed": c.passed, "detail": c.detail} for c in report.checks])
        return (0 if report.passed else 1), [path], {"passed": report.passed}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class SelfTestReport:
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def lines(self) -> List[str]:
        return [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in self.checks]


class SelfTest:
    """Small, fast invariant checks across every module"""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def run(self) -> SelfTestReport:
        checks = []
        for name in sorted(n for n in dir(self) if n.startswith("check_")):
            try:
                passed, detail = getattr(self, name)()
            except FrameForgeError as e:
                passed, detail = False, f"raised {e.__class__.__name__}: {e}"
            checks.append(CheckResult(name[len("check_"):], bool(passed), detail))
            self.logger.debug(f"{name}: {'ok' if passed else 'failed'} ({detail})")
        return SelfTestReport(checks)

    def check_rel_separation(self):
        box = Box(1, 10.0, 100)
        value = rel_separation(NodeSet.from_positions(box, np.arange(10)))
        return value == 2, f"rel of integers on [0, 10) = {value}"

    def check_density(self):
        box = Box(1, 10.0, 100)
        nodes = NodeSet.from_positions(box, np.arange(10))
        dense, sparse = is_L_dense(nodes, 0.6), is_L_dense(nodes, 0.4)
        return dense and not sparse, f"dense(0.6)={dense}, dense(0.4)={sparse}"

    def check_conv_nodes(self):
        box = Box(1, 32.0, 256)
        report = conv_nodes_check(NodeSet.from_positions(box, [0.0]), 2.0, images=0)
        return report.ratio_constant == 1.0, f"single-node ratio constant {report.ratio_constant!r}"

    def check_contour_pseudo_inverse(self):
        vectors = np.linalg.qr(self.rng.standard_normal((12, 12)))[0]
        eigenvalues = np.concatenate([np.zeros(3), self.rng.uniform(0.5, 4.0, 9)])
        matrix = (vectors * eigenvalues) @ vectors.T
        reference = pseudo_inverse_svd(matrix)
        contour = pseudo_inverse_contour(matrix, 0.5, 64)
        error = np.linalg.norm(contour - reference) / np.linalg.norm(reference)
        return error <= 1e-6, f"relative discrepancy {error:.2e}"

    def check_dual_reconstruction(self):
        box = Box(1, 16.0, 128)
        pair = canonical_dual(gaussian_bumps(NodeSet.lattice(box, 1.0), 0.5))
        f = self.rng.standard_normal(len(pair)) @ pair.atoms.atoms
        error = np.linalg.norm(pair.reconstruct(f) - f) / np.linalg.norm(f)
        return error <= 1e-8, f"relative error {error:.2e}"

    def check_partition_of_unity(self):
        box = Box(1, 16.0, 128)
        partition = build_partition(Covering.from_intervals(box, [(0, 8), (6, 14), (13, 16)]))
        deviation = float(np.max(np.abs(partition.total() - 1)))
        return deviation <= 1e-12, f"max |sum eta - 1| = {deviation:.1e}"

    def check_stft_isometry(self):
        box = Box(1, 8.0, 64)
        f = self.rng.standard_normal(64) + 1j * self.rng.standard_normal(64)
        norm = np.sqrt(box.cell_volume * np.sum(np.abs(f) ** 2))
        error = abs(stft(f, GaussWindow(box), box).energy() - norm) / norm
        return error <= 1e-10, f"relative isometry error {error:.2e}"

    def check_kn_isometry(self):
        box = Box(1, 8.0, 64)
        f, g = self.rng.standard_normal(64), self.rng.standard_normal(64)
        symbol = kn_symbol_rank_one(f, g, box).norm()
        hs = np.linalg.norm(rank_one_matrix(f, g, box))
        error = abs(symbol - hs) / hs
        return error <= 1e-8, f"relative HS discrepancy {error:.2e}"

    def check_kernel_reproduction(self):
        box = Box(1, 16.0, 128)
        pair = canonical_dual(gaussian_bumps(NodeSet.lattice(box, 1.0), 0.5))
        f = self.rng.standard_normal(len(pair)) @ pair.atoms.atoms
        kernel = kernel_at(3.25, pair)
        error = abs(box.inner(f, kernel.kernel) - f[kernel.point])
        return error <= 1e-8 * np.max(np.abs(f)), f"|<f, K_x> - f(x)| = {error:.2e}"

    def check_dual_decay(self):
        box = Box(1, 32.0, 256)
        pair = canonical_dual(envelope_atoms(NodeSet.lattice(box, 1.0), 4.0))
        exponent = decay_fit(pair.duals).exponent
        return exponent >= 3.5, f"dual decay exponent {exponent:.3f} for atoms with s = 4"

    def check_kn_fourier_identity(self):
        box = Box(1, 8.0, 64)
        n = box.points_per_axis
        f = self.rng.standard_normal(n) + 1j * self.rng.standard_normal(n)
        window = GaussWindow(box)
        spectrum = fourier(kn_symbol_rank_one(f, window.samples, box).flat, tf_box(box)).reshape(n, n)
        image = stft(f, window, box).values
        error = float(np.abs(spectrum - image[(-np.arange(n)) % n, :].T).max())
        return error <= 1e-8, f"max |F sigma - V_g f| = {error:.2e}"

    def check_fiber_agreement(self):
        box = Box(1, 16.0, 128)
        lattice = LatticePair.diagonal(box, [1.0])
        x = box.positions()[:, 0]
        chi = ((x >= -1e-9) & (x < 1 - 1e-9)).astype(float)
        haar = chi - np.roll(chi, 8)
        verdicts = []
        for generator in (chi, haar):
            fibers = fiber_gram(generator, generator, lattice).is_uniformly_invertible
            eigenvalues = np.linalg.eigvalsh(gram(translate_family(generator, lattice)).entries)
            verdicts.append((fibers, bool(eigenvalues.min() > FIBER_RTOL * eigenvalues.max())))
        agree = all(a == b for a, b in verdicts)
        return agree and verdicts[0][0] and not verdicts[1][0], f"fiber / Gram verdicts {verdicts}"
