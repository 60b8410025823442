"""Structured quadrilateral meshes with a locally refined band."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for inconsistent geometry, refinement or crack definitions."""


@dataclass(frozen=True)
class Mesh:
    """Bilinear quadrilateral mesh.

    Attributes
    ----------
    nodes : ndarray, shape (n_nodes, 2)
        Coordinates in mm.
    elements : ndarray, shape (n_elements, 4)
        Counter-clockwise node indices.
    node_sets : dict
        Named, sorted, unique node index arrays.
    """

    nodes: np.ndarray
    elements: np.ndarray
    node_sets: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ConfigurationError(f"nodes must have shape (n, 2), got {nodes.shape}")
        if elements.ndim != 2 or elements.shape[1] != 4:
            raise ConfigurationError(f"elements must have shape (m, 4), got {elements.shape}")
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise ConfigurationError("element connectivity references missing nodes")
        sets = {}
        for name, idx in self.node_sets.items():
            idx = np.unique(np.asarray(idx, dtype=np.int64))
            if idx.size and (idx[0] < 0 or idx[-1] >= len(nodes)):
                raise ConfigurationError(f"node set {name!r} references missing nodes")
            idx.flags.writeable = False
            sets[name] = idx
        nodes.flags.writeable = False
        elements.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "node_sets", sets)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def with_node_set(self, name: str, indices) -> "Mesh":
        sets = dict(self.node_sets)
        sets[name] = np.asarray(indices, dtype=np.int64)
        return Mesh(self.nodes, self.elements, sets)

    def element_sizes(self) -> np.ndarray:
        """Longest edge of every element."""
        xy = self.nodes[self.elements]
        edges = np.roll(xy, -1, axis=1) - xy
        return np.linalg.norm(edges, axis=2).max(axis=1)


@dataclass(frozen=True)
class RefinementSpec:
    """Axis-aligned box ``[x0, x1] x [y0, y1]`` meshed with edge length ``<= h_fine``.

    ``grading`` is the size ratio between neighbouring cells outside the box;
    a very large value gives an abrupt jump to ``h_coarse``.
    """

    box: tuple[float, float, float, float]
    h_fine: float
    grading: float = 1.3


@dataclass(frozen=True)
class CrackSpec:
    """Straight, axis-aligned initial crack from ``start`` to ``tip``.

    The phase field is pinned to one on the node line carrying the crack
    and on the neighbouring node line on ``side`` (-1: towards smaller
    coordinates, +1: larger), giving a crack one element row wide.
    """

    start: tuple[float, float]
    tip: tuple[float, float]
    side: int = -1

    @property
    def length(self) -> float:
        return math.dist(self.start, self.tip)


def _segment_sizes(length: float, h: float) -> np.ndarray:
    n = max(1, math.ceil(length / h - 1e-9))
    return np.full(n, length / n)


def _graded_sizes(length: float, h_start: float, h_end: float, ratio: float) -> np.ndarray:
    """Cell sizes growing from ``h_start`` by ``ratio`` up to ``h_end``, filling ``length``."""
    if h_start >= h_end or ratio <= 1.0:
        return _segment_sizes(length, h_end)
    sizes = []
    total = 0.0
    s = h_start
    while total < length - 1e-12 * length:
        s = min(s * ratio, h_end)
        sizes.append(s)
        total += s
    # shrink to fit so no cell exceeds h_end
    sizes = np.array(sizes)
    return sizes * (length / sizes.sum())


def graded_coordinates(
    length: float,
    h_coarse: float,
    lo: float | None = None,
    hi: float | None = None,
    h_fine: float | None = None,
    grading: float = 1.3,
    anchors: Sequence[float] = (),
) -> np.ndarray:
    """1D node coordinates on ``[0, length]``.

    Inside ``[lo, hi]`` the spacing is uniform and ``<= h_fine``; outside it
    grows geometrically towards ``h_coarse``.  Every ``anchor`` becomes a
    node.
    """
    refined = lo is not None and hi is not None and h_fine is not None
    breaks = {0.0, float(length)}
    if refined:
        breaks |= {float(lo), float(hi)}
    for a in anchors:
        if not 0.0 <= a <= length:
            raise ConfigurationError(f"anchor {a} outside [0, {length}]")
        breaks.add(float(a))
    breaks = np.array(sorted(breaks))
    # merge breakpoints closer than round-off
    keep = np.concatenate([[True], np.diff(breaks) > 1e-12 * max(length, 1.0)])
    breaks = breaks[keep]
    breaks[-1] = length

    coords = [0.0]
    for a, b in zip(breaks[:-1], breaks[1:]):
        seg = b - a
        if refined and a >= lo - 1e-12 and b <= hi + 1e-12:
            sizes = _segment_sizes(seg, h_fine)
        elif refined and abs(a - hi) < 1e-12:
            sizes = _graded_sizes(seg, h_fine, h_coarse, grading)
        elif refined and abs(b - lo) < 1e-12:
            sizes = _graded_sizes(seg, h_fine, h_coarse, grading)[::-1]
        else:
            sizes = _segment_sizes(seg, h_coarse)
        pts = a + np.cumsum(sizes)
        pts[-1] = b
        coords.extend(pts.tolist())
    return np.array(coords)


def structured_mesh(xs: np.ndarray, ys: np.ndarray) -> Mesh:
    """Tensor-product quad mesh on grid lines ``xs`` x ``ys``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    ids = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    sets = {
        "bottom": ids[0, :],
        "top": ids[-1, :],
        "left": ids[:, 0],
        "right": ids[:, -1],
    }
    return Mesh(nodes, elements, sets)


def generate_rect_mesh(
    width: float,
    height: float,
    h_coarse: float,
    refine: RefinementSpec | None = None,
    x_anchors: Sequence[float] = (),
    y_anchors: Sequence[float] = (),
) -> Mesh:
    """Rectangle ``[0, width] x [0, height]`` with an optional refined box.

    The mesh is a conforming tensor product: refinement acts on whole grid
    columns and rows, so no hanging nodes arise.  Anchors force grid lines
    at given coordinates (crack lines, crack tips, load points).
    """
    if not (width > 0 and height > 0 and h_coarse > 0):
        raise ConfigurationError("width, height and h_coarse must be positive")
    if refine is None:
        xs = graded_coordinates(width, h_coarse, anchors=x_anchors)
        ys = graded_coordinates(height, h_coarse, anchors=y_anchors)
        return structured_mesh(xs, ys)

    x0, x1, y0, y1 = refine.box
    if not refine.h_fine > 0:
        raise ConfigurationError("h_fine must be positive")
    if refine.h_fine > h_coarse:
        raise ConfigurationError(f"h_fine={refine.h_fine} exceeds h_coarse={h_coarse}")
    tol = 1e-12 * max(width, height)
    if not (-tol <= x0 < x1 <= width + tol and -tol <= y0 < y1 <= height + tol):
        raise ConfigurationError(f"refinement box {refine.box} outside domain [0, {width}] x [0, {height}]")
    xs = graded_coordinates(width, h_coarse, x0, x1, refine.h_fine, refine.grading, x_anchors)
    ys = graded_coordinates(height, h_coarse, y0, y1, refine.h_fine, refine.grading, y_anchors)
    return structured_mesh(xs, ys)


def select_nodes(mesh: Mesh, predicate: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Indices (ascending) of nodes where ``predicate(x, y)`` is true."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    mask = np.broadcast_to(np.asarray(predicate(x, y), dtype=bool), x.shape)
    return np.flatnonzero(mask)


def _grid_lines(values: np.ndarray, tol: float) -> np.ndarray:
    v = np.sort(values)
    keep = np.concatenate([[True], np.diff(v) > tol])
    return v[keep]


def initial_crack_nodes(mesh: Mesh, crack: CrackSpec, tol: float = 1e-9) -> np.ndarray:
    """Nodes carrying the initial-crack condition ``phi = 1``.

    Two node lines: the one through the crack and its neighbour on
    ``crack.side``, restricted to the crack's extent.
    """
    if crack.length <= tol:
        return np.empty(0, dtype=np.int64)
    (sx, sy), (tx, ty) = crack.start, crack.tip
    if abs(sy - ty) <= tol:
        along, across, line, lo, hi = 0, 1, sy, min(sx, tx), max(sx, tx)
    elif abs(sx - tx) <= tol:
        along, across, line, lo, hi = 1, 0, sx, min(sy, ty), max(sy, ty)
    else:
        raise ConfigurationError("initial crack must be horizontal or vertical")
    if crack.side not in (-1, 1):
        raise ConfigurationError("crack side must be -1 or +1")

    a = mesh.nodes[:, along]
    c = mesh.nodes[:, across]
    on_line = np.abs(c - line) <= tol
    if not on_line.any():
        raise ConfigurationError(f"crack line at {line} is not a mesh line")
    lines_along = _grid_lines(a[on_line], tol)
    for end in (lo, hi):
        if np.min(np.abs(lines_along - end)) > tol:
            raise ConfigurationError(f"crack end {end} does not coincide with a mesh node")

    rows = _grid_lines(c, tol)
    k = int(np.argmin(np.abs(rows - line)))
    k2 = k + crack.side
    if not 0 <= k2 < len(rows):
        raise ConfigurationError("crack lies on the boundary; no neighbouring node line on that side")
    within = (a >= lo - tol) & (a <= hi + tol)
    mask = within & (on_line | (np.abs(c - rows[k2]) <= tol))
    return np.flatnonzero(mask)


def remove_elements(mesh: Mesh, drop: np.ndarray) -> Mesh:
    """Delete flagged elements and the nodes no longer referenced."""
    drop = np.asarray(drop, dtype=bool)
    elements = mesh.elements[~drop]
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[elements.ravel()] = True
    new_id = np.full(mesh.n_nodes, -1, dtype=np.int64)
    new_id[used] = np.arange(used.sum())
    sets = {name: new_id[idx[used[idx]]] for name, idx in mesh.node_sets.items()}
    return Mesh(mesh.nodes[used], new_id[elements], sets)


def remove_disks(mesh: Mesh, centres: Sequence[tuple[float, float]], radius: float) -> Mesh:
    """Staircase voids: drop every element whose centroid lies in one of the disks."""
    centroids = mesh.nodes[mesh.elements].mean(axis=1)
    drop = np.zeros(mesh.n_elements, dtype=bool)
    for cx, cy in centres:
        drop |= np.hypot(centroids[:, 0] - cx, centroids[:, 1] - cy) < radius
    return remove_elements(mesh, drop)
