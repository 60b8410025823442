"""Crack-extension measurement, field export and performance reports."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .mesh import Mesh

CRACK_THRESHOLD = 0.95

METRIC_COLUMNS = (
    "strategy",
    "wall_time_s",
    "factorizations",
    "iters_phi",
    "iters_u",
    "final_crack_extension_mm",
)


@dataclass
class IncrementRecord:
    """Per-increment log entry."""

    increment: int
    cycle: float
    load: float
    outer: int
    iters_phi: int
    iters_u: int
    fact_u: int
    fact_phi: int
    residual_phi: float
    residual_u: float
    crack_extension: float
    crack_set_size: int


@dataclass
class RunResult:
    """Outcome of a fatigue analysis (complete, or partial up to the last converged increment)."""

    strategy: str
    history: list[tuple[float, float]] = field(default_factory=list)
    records: list[IncrementRecord] = field(default_factory=list)
    factorizations: int = 0
    factorizations_phi: int = 0
    iters_phi: int = 0
    iters_u: int = 0
    mn_failures: int = 0
    wall_time: float = 0.0
    increments: int = 0
    cycles: float = 0.0
    converged: bool = True
    phi_min: float = 0.0
    phi_max: float = 0.0
    u: np.ndarray | None = None
    phi: np.ndarray | None = None
    alpha: np.ndarray | None = None
    history_field: np.ndarray | None = None
    crack_set: np.ndarray | None = None

    @property
    def final_crack_extension(self) -> float:
        if self.records:
            return self.records[-1].crack_extension
        return 0.0

    def extension_at(self, cycles: Sequence[float]) -> np.ndarray:
        """Crack extension at the given cycle counts (step-wise, last value at or before)."""
        if not self.history:
            return np.zeros(len(cycles))
        c, a = np.array(self.history).T
        idx = np.searchsorted(c, np.asarray(cycles, dtype=float), side="right") - 1
        return np.where(idx >= 0, a[np.clip(idx, 0, None)], 0.0)

    def metrics_row(self) -> dict[str, object]:
        return {
            "strategy": self.strategy,
            "wall_time_s": f"{self.wall_time:.6f}",
            "factorizations": self.factorizations,
            "iters_phi": self.iters_phi,
            "iters_u": self.iters_u,
            "final_crack_extension_mm": f"{self.final_crack_extension:.15g}",
        }


def _mesh_edges(mesh: Mesh) -> np.ndarray:
    e = mesh.elements
    edges = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 3]], e[:, [3, 0]]])
    return np.unique(np.sort(edges, axis=1), axis=0)


def crack_extension(
    phi: np.ndarray,
    mesh: Mesh,
    original_tip: Sequence[float],
    exclude: Iterable[int] | np.ndarray = (),
    threshold: float = CRACK_THRESHOLD,
    interpolate: bool = False,
    edges: np.ndarray | None = None,
) -> float:
    """Distance from the original tip to the furthest point with ``phi >= threshold``.

    Nodes in ``exclude`` (the initial crack) never count.  With
    ``interpolate`` the threshold crossing is also located along element
    edges leaving a counted node, which removes the mesh-size staircase.
    """
    phi = np.asarray(phi, dtype=float)
    tip = np.asarray(original_tip, dtype=float)
    counted = phi >= threshold
    excl = np.asarray(list(exclude) if not isinstance(exclude, np.ndarray) else exclude, dtype=np.int64)
    if excl.size:
        counted[excl] = False
    if not counted.any():
        return 0.0
    dist = np.linalg.norm(mesh.nodes[counted] - tip, axis=1).max()
    if not interpolate:
        return float(dist)

    if edges is None:
        edges = _mesh_edges(mesh)
    a, b = edges[:, 0], edges[:, 1]
    hi_a = counted[a] & (phi[b] < threshold)
    hi_b = counted[b] & (phi[a] < threshold)
    src = np.concatenate([a[hi_a], b[hi_b]])
    dst = np.concatenate([b[hi_a], a[hi_b]])
    if src.size:
        t = (phi[src] - threshold) / (phi[src] - phi[dst])
        pts = mesh.nodes[src] + t[:, None] * (mesh.nodes[dst] - mesh.nodes[src])
        dist = max(dist, np.linalg.norm(pts - tip, axis=1).max())
    return float(dist)


def extension_deviation(result_n, result_1) -> float:
    """Signed relative deviation ``100 (a_N - a_1) / a_1`` in percent.

    Accepts :class:`RunResult` objects or plain extensions.  Returns ``nan``
    when the reference extension is zero (deviation undefined).
    """
    if isinstance(result_n, RunResult) and isinstance(result_1, RunResult):
        if not math.isclose(result_n.cycles, result_1.cycles):
            raise ValueError(f"runs cover different cycle counts: {result_n.cycles} vs {result_1.cycles}")
    a_n = result_n.final_crack_extension if isinstance(result_n, RunResult) else float(result_n)
    a_1 = result_1.final_crack_extension if isinstance(result_1, RunResult) else float(result_1)
    if a_1 == 0.0:
        return math.nan
    return 100.0 * (a_n - a_1) / a_1


# ---------------------------------------------------------------------------
# VTK
# ---------------------------------------------------------------------------

_VTK_QUAD = 9
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


def _fmt(values: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.15g}" for v in row) for row in np.atleast_2d(values))


def write_vtk(mesh: Mesh, fields: Mapping[str, np.ndarray], path, title: str = "pffatigue") -> Path:
    """Legacy ASCII VTK unstructured grid.

    Each field is routed by its leading dimension: ``n_nodes`` to point data,
    ``n_elements`` to cell data.  1D arrays are scalars, ``(n, 2)`` or
    ``(n, 3)`` arrays are vectors.
    """
    point, cell = {}, {}
    for name, values in fields.items():
        if not name or not _NAME.match(name):
            raise ValueError(f"invalid VTK field name {name!r}")
        values = np.asarray(values, dtype=float)
        if values.ndim == 2 and values.shape[1] == 2:
            values = np.column_stack([values, np.zeros(len(values))])
        if values.ndim not in (1, 2) or (values.ndim == 2 and values.shape[1] != 3):
            raise ValueError(f"field {name!r} must be scalar or 2/3-vector per entity, got {values.shape}")
        if len(values) == mesh.n_nodes:
            point[name] = values
        elif len(values) == mesh.n_elements:
            cell[name] = values
        else:
            raise ValueError(
                f"field {name!r} has {len(values)} entries; mesh has {mesh.n_nodes} nodes and {mesh.n_elements} cells"
            )

    n, m = mesh.n_nodes, mesh.n_elements
    xyz = np.column_stack([mesh.nodes, np.zeros(n)])
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
        _fmt(xyz),
        f"CELLS {m} {5 * m}",
        "\n".join("4 " + " ".join(map(str, c)) for c in mesh.elements),
        f"CELL_TYPES {m}",
        "\n".join([str(_VTK_QUAD)] * m),
    ]

    def block(header: str, data: dict):
        if not data:
            return
        lines.append(f"{header} {len(next(iter(data.values())))}")
        for name, values in data.items():
            if values.ndim == 1:
                lines.extend([f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(values[:, None])])
            else:
                lines.extend([f"VECTORS {name} double", _fmt(values)])

    block("POINT_DATA", point)
    block("CELL_DATA", cell)

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(line for line in lines if line != "") + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk_fields(path) -> dict[str, np.ndarray]:
    """Parse the scalar/vector blocks of a file written by :func:`write_vtk`."""
    tokens = Path(path).read_text(encoding="utf-8").split("\n")
    out: dict[str, np.ndarray] = {}
    i = 0
    count = 0
    while i < len(tokens):
        parts = tokens[i].split()
        if parts and parts[0] in ("POINT_DATA", "CELL_DATA", "POINTS"):
            count = int(parts[1])
            if parts[0] == "POINTS":
                out["POINTS"] = np.loadtxt(tokens[i + 1 : i + 1 + count], ndmin=2)
                i += count
        elif parts and parts[0] == "SCALARS":
            out[parts[1]] = np.loadtxt(tokens[i + 2 : i + 2 + count], ndmin=1)
            i += 1 + count
        elif parts and parts[0] == "VECTORS":
            out[parts[1]] = np.loadtxt(tokens[i + 1 : i + 1 + count], ndmin=2)
            i += count
        elif parts and parts[0] == "CELL_TYPES":
            out["CELL_TYPES"] = np.array(tokens[i + 1 : i + 1 + int(parts[1])], dtype=int)
            i += int(parts[1])
        i += 1
    return out


def solution_fields(mesh: Mesh, u: np.ndarray, phi: np.ndarray, alpha: np.ndarray | None = None,
                    history: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Standard export set: phi, displacement, |u| and cell-averaged fatigue history."""
    disp = np.asarray(u).reshape(-1, 2)
    fields = {"phi": phi, "u_magnitude": np.linalg.norm(disp, axis=1), "displacement": disp}
    if alpha is not None:
        fields["alpha_bar"] = np.asarray(alpha).mean(axis=1)
    if history is not None:
        fields["history"] = np.asarray(history).mean(axis=1)
    return fields


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_metrics(results: RunResult | Sequence[RunResult], path, history_path=None) -> tuple[Path, Path]:
    """Table-style metrics CSV plus the crack-extension history CSV.

    A single result gives a ``cycle,delta_a_mm`` history; several results
    give a long-format ``strategy,cycle,delta_a_mm`` history.
    """
    single = isinstance(results, RunResult)
    results = [results] if single else list(results)
    path = Path(path)
    history_path = Path(history_path) if history_path is not None else path.with_name(path.stem + "_history.csv")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for res in results:
                writer.writerow(res.metrics_row())
        with history_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if single:
                writer.writerow(["cycle", "delta_a_mm"])
                for c, a in results[0].history:
                    writer.writerow([f"{c:.15g}", f"{a:.15g}"])
            else:
                writer.writerow(["strategy", "cycle", "delta_a_mm"])
                for res in results:
                    for c, a in res.history:
                        writer.writerow([res.strategy, f"{c:.15g}", f"{a:.15g}"])
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    return path, history_path


def write_increment_log(result: RunResult, path) -> Path:
    """Per-increment records as CSV (the counts sum to the metrics totals)."""
    path = Path(path)
    names = list(IncrementRecord.__dataclass_fields__)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for rec in result.records:
            writer.writerow([getattr(rec, n) for n in names])
    return path
