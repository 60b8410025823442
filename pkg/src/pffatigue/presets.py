"""Geometry definitions and built-in case studies.

The single-edge-notched tension specimen is a unit square with a
horizontal edge crack of half the width at mid-height, loaded on the top
edge.  The three-point-bending beam follows the classic asymmetric
layout with three holes; dimensions are approximate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constitutive import MaterialParams, SplitKind
from .mesh import ConfigurationError, CrackSpec, Mesh, RefinementSpec, generate_rect_mesh, initial_crack_nodes, remove_disks
from .solver import DirichletBC, LoadProgram, Problem, SolverConfig

GEOMETRY_KINDS = ("tension", "bending")


@dataclass(frozen=True)
class GeometrySpec:
    """Rectangular specimen with a refined box, an edge crack and optional holes.

    ``kind="tension"``: bottom edge clamped, top edge pulled in y.
    ``kind="bending"``: two supports on the bottom edge at ``supports`` (x
    positions, left pinned and right on a roller) and a downward load on
    the top edge centred at ``load_x``, spread over ``load_width``.
    """

    kind: str = "tension"
    width: float = 1.0
    height: float = 1.0
    h_coarse: float = 0.04
    h_fine: float = 0.0125
    refine_box: tuple[float, float, float, float] = (0.3, 1.0, 0.3, 0.7)
    grading: float = 1.3
    crack_start: tuple[float, float] = (0.0, 0.5)
    crack_tip: tuple[float, float] = (0.5, 0.5)
    holes: tuple[tuple[float, float], ...] = ()
    hole_radius: float = 0.0
    supports: tuple[float, float] = (0.0, 0.0)
    load_x: float = 0.0
    load_width: float = 0.0
    fatigue_region: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.kind not in GEOMETRY_KINDS:
            raise ConfigurationError(f"geometry kind must be one of {GEOMETRY_KINDS}, got {self.kind!r}")
        if self.holes and not self.hole_radius > 0:
            raise ConfigurationError("hole_radius must be positive when holes are given")

    def anchors(self) -> tuple[list[float], list[float]]:
        xa = [self.crack_start[0], self.crack_tip[0]]
        ya = [self.crack_start[1], self.crack_tip[1]]
        if self.kind == "bending":
            xa += list(self.supports) + [self.load_x]
            if self.load_width > 0:
                xa += [self.load_x - self.load_width / 2, self.load_x + self.load_width / 2]
        xa = [min(max(v, 0.0), self.width) for v in xa]
        ya = [min(max(v, 0.0), self.height) for v in ya]
        return xa, ya

    def build_mesh(self) -> Mesh:
        xa, ya = self.anchors()
        mesh = generate_rect_mesh(
            self.width, self.height, self.h_coarse,
            RefinementSpec(self.refine_box, self.h_fine, self.grading), xa, ya,
        )
        if self.holes:
            mesh = remove_disks(mesh, self.holes, self.hole_radius)
        return mesh

    def crack(self) -> CrackSpec:
        return CrackSpec(self.crack_start, self.crack_tip, -1)

    def boundary_conditions(self, mesh: Mesh) -> list[DirichletBC]:
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        tol = 1e-9 * max(self.width, self.height)
        bottom = np.flatnonzero(np.abs(y) <= tol)
        top = np.flatnonzero(np.abs(y - self.height) <= tol)
        if self.kind == "tension":
            return [
                DirichletBC(bottom, 0, 0.0),
                DirichletBC(bottom, 1, 0.0),
                DirichletBC(top, 0, 0.0),
                DirichletBC(top, 1, 1.0),
            ]

        def nearest(candidates, x0):
            return candidates[np.argmin(np.abs(x[candidates] - x0))]

        left = nearest(bottom, self.supports[0])
        right = nearest(bottom, self.supports[1])
        half = self.load_width / 2
        loaded = top[np.abs(x[top] - self.load_x) <= half + tol]
        if loaded.size == 0:
            loaded = np.array([nearest(top, self.load_x)])
        return [
            DirichletBC(np.array([left]), 0, 0.0),
            DirichletBC(np.array([left, right]), 1, 0.0),
            DirichletBC(loaded, 1, -1.0),
        ]


@dataclass(frozen=True)
class CaseStudy:
    """Everything needed to run one analysis."""

    geometry: GeometrySpec
    material: MaterialParams
    split: SplitKind
    load: LoadProgram
    solver: SolverConfig = field(default_factory=SolverConfig)
    name: str = "case"

    def build_problem(self) -> Problem:
        mesh = self.geometry.build_mesh()
        crack = self.geometry.crack()
        return Problem(
            mesh=mesh,
            material=self.material,
            u_bcs=self.geometry.boundary_conditions(mesh),
            crack_nodes=initial_crack_nodes(mesh, crack),
            crack_tip=tuple(crack.tip),
            split=self.split,
            name=self.name,
            fatigue_region=self.geometry.fatigue_region,
        )

    def with_split(self, split) -> "CaseStudy":
        return replace(self, split=SplitKind.parse(split))


STEEL = dict(E=210.0, nu=0.3, Gc=2.7)

# Paper-scale single-edge-notched tension: ~32k elements at h = 0.003 mm.
SENT_GEOMETRY = GeometrySpec(
    kind="tension", h_coarse=0.05, h_fine=0.003, refine_box=(0.35, 1.0, 0.36, 0.64),
)

# Desk-scale variant: ell = 0.05 mm, h = ell / 4, ~3.3k elements.
DESK_SENT_GEOMETRY = GeometrySpec(
    kind="tension", h_coarse=0.04, h_fine=0.0125, refine_box=(0.3, 1.0, 0.3, 0.7),
)

_TPB_HOLES = ((6.0, 2.75), (6.0, 4.75), (6.0, 6.75))

# Paper-scale asymmetric three-point bending: 20 x 8 mm beam, h = 0.01 mm.
TPB_GEOMETRY = GeometrySpec(
    kind="bending", width=20.0, height=8.0, h_coarse=1.0, h_fine=0.01,
    refine_box=(4.75, 6.25, 0.0, 8.0), grading=1.3,
    crack_start=(5.0, 0.0), crack_tip=(5.0, 1.0),
    holes=_TPB_HOLES, hole_radius=0.25,
    supports=(1.0, 19.0), load_x=10.0, load_width=0.5,
    fatigue_region=(4.5, 6.5, 0.0, 8.0),
)


def _scaled(geom: GeometrySpec, s: float, h_fine: float, h_coarse: float, grading: float) -> GeometrySpec:
    def sc(p):
        return tuple(s * v for v in p)

    return replace(
        geom, width=s * geom.width, height=s * geom.height, h_fine=h_fine, h_coarse=h_coarse,
        grading=grading, refine_box=sc(geom.refine_box), crack_start=sc(geom.crack_start),
        crack_tip=sc(geom.crack_tip), holes=tuple(sc(h) for h in geom.holes),
        hole_radius=s * geom.hole_radius, supports=sc(geom.supports), load_x=s * geom.load_x,
        load_width=s * geom.load_width,
        fatigue_region=sc(geom.fatigue_region) if geom.fatigue_region else None,
    )


# Desk-scale beam: geometry scaled by 0.2 (4 x 1.6 mm), ell = 0.06 mm, ~15k elements.
DESK_TPB_GEOMETRY = replace(
    _scaled(TPB_GEOMETRY, 0.2, h_fine=0.0135, h_coarse=0.1, grading=1.3),
    refine_box=(0.9, 2.1, 0.0, 1.6),
)


def _case(name, geometry, ell, u_max, cycles, split=SplitKind.NOTENSION, solver=None) -> CaseStudy:
    return CaseStudy(
        geometry=geometry,
        material=MaterialParams(ell=ell, **STEEL),
        split=split,
        load=LoadProgram(u_max=u_max, total_cycles=cycles, R=0.0),
        solver=solver or SolverConfig(),
        name=name,
    )


def preset(name: str) -> CaseStudy:
    """Built-in case study by name: ``sent``, ``desk_sent``, ``tpb`` or ``desk_tpb``."""
    key = name.lower().replace("-", "_")
    if key == "sent":
        return _case("sent", SENT_GEOMETRY, 0.016, 2e-4, 120_000)
    if key == "desk_sent":
        return _case("desk_sent", DESK_SENT_GEOMETRY, 0.05, 8e-4, 500)
    if key == "tpb":
        return _case("tpb", TPB_GEOMETRY, 0.05, 3e-3, 90_000)
    if key == "desk_tpb":
        return _case("desk_tpb", DESK_TPB_GEOMETRY, 0.06, 3e-3, 2_000,
                     solver=SolverConfig.for_strategy("mn+cla", cycles_per_increment=4.0))
    raise ConfigurationError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")


PRESETS = ("sent", "desk_sent", "tpb", "desk_tpb")
