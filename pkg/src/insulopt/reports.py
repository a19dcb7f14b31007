"""Serialization helpers and convergence studies used by the command line."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__, oracles
from .fem import AssembledOperators, assemble
from .mesh import atomic_write_text, disk, interval

__all__ = [
    "JSON_DIGITS",
    "CSV_DIGITS",
    "round_sig",
    "to_jsonable",
    "dump_json",
    "write_json",
    "write_csv",
    "SourceSpecError",
    "parse_source",
    "SOURCE_PROFILES",
    "parse_mass",
    "mesh_size",
    "ConvergenceConfig",
    "ConvergenceRow",
    "convergence_study",
]

JSON_DIGITS = 12
CSV_DIGITS = 9


def round_sig(x: float, digits: int = JSON_DIGITS) -> float:
    if x == 0 or not math.isfinite(x):
        return x
    return float(f"{x:.{digits}g}")


def to_jsonable(obj, digits: int = JSON_DIGITS):
    """Recursively convert to plain JSON types, rounding floats.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v, digits) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return round_sig(x, digits)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(payload: dict, config: dict | None = None, timestamp: bool = True) -> str:
    doc = dict(payload)
    doc["version"] = __version__
    if config is not None:
        doc["config"] = config
    if timestamp:
        doc["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return json.dumps(to_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, payload: dict, config: dict | None = None) -> str:
    text = dump_json(payload, config)
    atomic_write_text(path, text)
    return text


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{CSV_DIGITS}g}"
    return str(v)


def write_csv(path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


# ----------------------------------------------------------------------
# heat sources


class SourceSpecError(ValueError):
    pass


SOURCE_PROFILES = {
    # nonnegative radial profiles of r = |x - c| / r_max
    "bump": lambda r: np.maximum(1.0 - r * r, 0.0),
    "gaussian": lambda r: np.exp(-4.0 * r * r),
    "ring": lambda r: r * r,
}


def parse_source(spec: str, ops: AssembledOperators) -> np.ndarray:
    """Nodal heat source from ``const:<value>`` or ``radial:<profile>``."""
    kind, _, arg = str(spec).partition(":")
    if kind == "const":
        try:
            value = float(arg)
        except ValueError:
            raise SourceSpecError(f"bad constant in source spec {spec!r}") from None
        if not (math.isfinite(value) and value >= 0):
            raise SourceSpecError("constant source must be finite and nonnegative")
        return np.full(ops.n, value)
    if kind == "radial":
        if arg not in SOURCE_PROFILES:
            raise SourceSpecError(f"unknown radial profile {arg!r}; known: {', '.join(sorted(SOURCE_PROFILES))}")
        x = ops.mesh.nodes
        c = x[ops.boundary_nodes].mean(axis=0)
        r = np.linalg.norm(x - c, axis=1)
        return SOURCE_PROFILES[arg](r / r.max())
    raise SourceSpecError(f"source spec must be const:<v> or radial:<name>, got {spec!r}")


_MASS_RE = re.compile(r"^\s*([0-9.eE+-]*)\s*\*?\s*m0\s*$")


def parse_mass(text: str, radius: float | None = None) -> float:
    """Insulator mass from a number or a multiple of the disk threshold (``2m0``, ``0.5*m0``)."""
    text = str(text)
    mt = _MASS_RE.match(text)
    if mt:
        if radius is None:
            raise ValueError("multiples of m0 need a disk domain")
        factor = float(mt.group(1)) if mt.group(1) else 1.0
        value = factor * oracles.threshold_m0(radius)
    else:
        value = float(text)
    if not (math.isfinite(value) and value > 0):
        raise ValueError("m must be positive")
    return value


# ----------------------------------------------------------------------
# convergence studies


def mesh_size(mesh) -> float:
    """Largest element diameter."""
    x = mesh.nodes[mesh.elements]
    if mesh.dim == 1:
        return float(np.abs(x[:, 1, 0] - x[:, 0, 0]).max())
    edges = [np.linalg.norm(x[:, a] - x[:, b], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))]
    return float(np.max(edges))


STUDIES = ("disk-energy", "disk-lambda", "interval-lambda")


@dataclass
class ConvergenceConfig:
    study: str
    levels: list = field(default_factory=lambda: [2, 3, 4])
    m: float | None = None  # default: 1 (energy), 2 m0 (disk), 2 (interval)
    radius: float = 1.0
    base_elements: int = 10  # interval level k has base_elements * 2**k elements

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"no oracle for study {self.study!r}; available: {', '.join(STUDIES)}")
        self.levels = [int(k) for k in self.levels]
        if len(self.levels) < 3:
            raise ValueError("a convergence study needs at least 3 levels")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly increasing")


@dataclass
class ConvergenceRow:
    level: int
    h: float
    quantity: float
    reference: float
    error: float
    rate: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _study_point(cfg: ConvergenceConfig, level: int):
    from .eigen import EigenProblem, StartSpec, solve_eigen
    from .energy import EnergyProblem, solve_energy

    if cfg.study == "disk-energy":
        mesh = disk(cfg.radius, level)
        m = 1.0 if cfg.m is None else cfg.m
        sol = solve_energy(EnergyProblem(assemble(mesh), m, 1.0))
        ref = oracles.ball_energy(oracles.BallSpec(2, cfg.radius), m)[1]
        return mesh, sol.energy, ref
    if cfg.study == "disk-lambda":
        mesh = disk(cfg.radius, level)
        m = 2.0 * oracles.threshold_m0(cfg.radius) if cfg.m is None else cfg.m
        sol = solve_eigen(EigenProblem(assemble(mesh), m, [StartSpec("uniform", name="uniform")]))
        return mesh, sol.lam, oracles.disk_radial_lambda(cfg.radius, m)
    mesh = interval(-1.0, 1.0, cfg.base_elements * 2**level)
    m = 2.0 if cfg.m is None else cfg.m
    sol = solve_eigen(EigenProblem(assemble(mesh), m, [StartSpec("uniform", name="uniform")]))
    return mesh, sol.lam, oracles.interval_lambda(m)


def convergence_study(config: ConvergenceConfig) -> list[ConvergenceRow]:
    """Relative error against the oracle per level, with observed rates in ``h``."""
    rows: list[ConvergenceRow] = []
    for level in config.levels:
        mesh, q, ref = _study_point(config, level)
        h = mesh_size(mesh)
        err = abs(q - ref) / abs(ref)
        rate = math.nan
        if rows and rows[-1].error > 0 and err > 0:
            rate = math.log(rows[-1].error / err) / math.log(rows[-1].h / h)
        rows.append(ConvergenceRow(level, h, q, ref, err, rate))
    return rows
