"""Cycle-by-cycle fatigue analysis with multi-pass staggered solves.

Acceleration switches
---------------------
``use_mn``
    Modified Newton: tangents are refactorized only at the start, after
    ``n_c`` increments, or when a subproblem needs ``n_i`` iterations.
``use_cla``
    Constant load accumulation: the peak load is held and every increment
    counts ``cycles_per_increment`` cycles.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterator, Sequence

import numpy as np

from . import constitutive as cm
from .assembly import Assembler, DofMap
from .constitutive import MaterialParams, QuadraturePointState, SplitKind
from .linsolve import FactorCounter, Factorization, Ordering, factorize, solve
from .mesh import Mesh
from .postprocess import CRACK_THRESHOLD, IncrementRecord, RunResult, _mesh_edges, crack_extension

log = logging.getLogger(__name__)

SUBPROBLEMS = ("u", "phi")

STRATEGIES = {
    "baseline": (False, False),
    "mn": (True, False),
    "cla": (False, True),
    "mn+cla": (True, True),
}


class SolverError(RuntimeError):
    pass


class NonConvergenceError(SolverError):
    """Staggered or inner iterations did not converge.

    ``result`` holds everything up to the last converged increment.
    """

    def __init__(self, message: str, result: RunResult | None = None, residuals: dict | None = None):
        super().__init__(message)
        self.result = result
        self.residuals = residuals or {}

    @property
    def last_cycle(self) -> float:
        return self.result.cycles if self.result is not None else 0.0


class InvariantError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances, Modified-Newton triggers and loading strategy.

    Residual tolerances are absolute infinity norms in N (displacement) and
    N mm (phase field).  ``n_i_phi`` / ``n_c_phi`` default to ``n_i`` / ``n_c``.
    """

    tol_in: float = 1e-5
    tol_out: float = 1e-4
    n_i: int = 25
    n_c: int = 100
    n_i_phi: int | None = None
    n_c_phi: int | None = None
    max_outer: int = 500
    max_inner: int = 1000
    use_mn: bool = False
    use_cla: bool = False
    cycles_per_increment: float = 1.0
    crack_set_threshold: float = CRACK_THRESHOLD
    residual_stiffness: float = 0.0

    def __post_init__(self):
        if not (0 < self.tol_in <= self.tol_out):
            raise ValueError("tolerances must satisfy 0 < tol_in <= tol_out")
        for name in ("n_i", "n_c", "max_outer", "max_inner"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("n_i_phi", "n_c_phi"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.cycles_per_increment > 0:
            raise ValueError("cycles_per_increment must be positive")
        if not 0 < self.crack_set_threshold < 1:
            raise ValueError("crack_set_threshold must lie in (0, 1)")
        if self.residual_stiffness < 0:
            raise ValueError("residual_stiffness must be >= 0")

    @classmethod
    def for_strategy(cls, strategy: str, **kwargs) -> "SolverConfig":
        try:
            mn, cla = STRATEGIES[strategy.lower()]
        except KeyError:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}") from None
        return cls(use_mn=mn, use_cla=cla, **kwargs)

    def with_strategy(self, strategy: str) -> "SolverConfig":
        mn, cla = STRATEGIES[strategy.lower()]
        return replace(self, use_mn=mn, use_cla=cla)

    @property
    def strategy(self) -> str:
        for name, flags in STRATEGIES.items():
            if flags == (self.use_mn, self.use_cla):
                return name
        raise AssertionError("unreachable")

    def n_i_for(self, sub: str) -> int:
        return self.n_i_phi if sub == "phi" and self.n_i_phi is not None else self.n_i

    def n_c_for(self, sub: str) -> int:
        return self.n_c_phi if sub == "phi" and self.n_c_phi is not None else self.n_c


def mn_should_refactorize(subproblem: str, iter_count: int, increments_since_update: int,
                          at_start: bool, config: SolverConfig) -> bool:
    """Modified-Newton refactorization trigger for one subproblem."""
    return (
        at_start
        or iter_count >= config.n_i_for(subproblem)
        or increments_since_update >= config.n_c_for(subproblem)
    )


class LoadMode(str, Enum):
    RESOLVED_R0 = "resolved"
    RESOLVED_RNEG = "resolved_rneg"
    CLA = "cla"


@dataclass(frozen=True)
class LoadStep:
    index: int
    load: float
    cycle: float
    cycles_weight: float
    peak: bool


@dataclass(frozen=True)
class LoadProgram:
    """Displacement-controlled cyclic program.

    ``mode`` defaults to CLA when requested by the solver, otherwise to two
    (``R >= 0``) or four (``R < 0``) increments per cycle.
    """

    u_max: float
    total_cycles: float
    R: float = 0.0
    mode: LoadMode | None = None

    def __post_init__(self):
        if not self.total_cycles >= 1:
            raise ValueError("total_cycles must be >= 1")
        if self.R < -1.0 or self.R >= 1.0:
            raise ValueError("load ratio must satisfy -1 <= R < 1")
        if self.mode is LoadMode.RESOLVED_RNEG and self.R >= 0:
            raise ValueError("four-increment resolved mode requires R < 0")
        if self.mode is LoadMode.RESOLVED_R0 and self.R < 0:
            raise ValueError("two-increment resolved mode requires R >= 0")

    def resolve_mode(self, use_cla: bool) -> LoadMode:
        if use_cla:
            return LoadMode.CLA
        if self.mode is not None and self.mode is not LoadMode.CLA:
            return self.mode
        return LoadMode.RESOLVED_RNEG if self.R < 0 else LoadMode.RESOLVED_R0

    def n_increments(self, mode: LoadMode, cycles_per_increment: float = 1.0) -> int:
        if mode is LoadMode.CLA:
            return math.ceil(self.total_cycles / cycles_per_increment - 1e-9)
        per_cycle = 4 if mode is LoadMode.RESOLVED_RNEG else 2
        return per_cycle * int(round(self.total_cycles))

    def steps(self, mode: LoadMode, cycles_per_increment: float = 1.0) -> Iterator[LoadStep]:
        u = self.u_max
        idx = 0
        if mode is LoadMode.CLA:
            done = 0.0
            for _ in range(self.n_increments(mode, cycles_per_increment)):
                w = min(cycles_per_increment, self.total_cycles - done)
                done += w
                yield LoadStep(idx, u, done, w, True)
                idx += 1
            return
        if abs(self.total_cycles - round(self.total_cycles)) > 1e-9:
            raise ValueError("resolved cycling needs an integer cycle count")
        stops = [(u, True), (0.0, False), (self.R * u, False), (0.0, False)]
        if mode is LoadMode.RESOLVED_R0:
            stops = [(u, True), (self.R * u, False)]
        for k in range(1, int(round(self.total_cycles)) + 1):
            for load, peak in stops:
                yield LoadStep(idx, load, float(k), 1.0 if peak else 0.0, peak)
                idx += 1


@dataclass(frozen=True)
class DirichletBC:
    """``u[nodes, component] = factor * applied_load``."""

    nodes: np.ndarray
    component: int
    factor: float = 0.0


@dataclass(frozen=True)
class Problem:
    """Boundary value problem: mesh, material, split, supports and initial crack.

    ``fatigue_region`` (x0, x1, y0, y1) limits fatigue accumulation to a box;
    outside it the fracture toughness is never degraded.
    """

    mesh: Mesh
    material: MaterialParams
    u_bcs: Sequence[DirichletBC]
    crack_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    crack_tip: tuple[float, float] = (0.0, 0.0)
    split: SplitKind = SplitKind.NOTENSION
    name: str = "problem"
    fatigue_region: tuple[float, float, float, float] | None = None


class CrackSet:
    """Grow-only set of nodes pinned to ``phi = 1``."""

    def __init__(self, n_nodes: int, initial: np.ndarray = ()):
        self.mask = np.zeros(n_nodes, dtype=bool)
        self.mask[np.asarray(initial, dtype=np.int64)] = True
        self.initial = self.mask.copy()

    def __len__(self) -> int:
        return int(self.mask.sum())

    @property
    def nodes(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def update_crack_set(phi: np.ndarray, crack_set: CrackSet, threshold: float = CRACK_THRESHOLD) -> np.ndarray:
    """Add every node with ``phi > threshold``; return the newly added nodes."""
    new = (np.asarray(phi) > threshold) & ~crack_set.mask
    crack_set.mask |= new
    return np.flatnonzero(new)


@dataclass
class IncrementStats:
    outer: int = 0
    iters_phi: int = 0
    iters_u: int = 0
    residual_phi: float = 0.0
    residual_u: float = 0.0


class FatigueSolver:
    """State and algorithms of one analysis.

    Call :meth:`run` for a complete program or drive :meth:`increment`
    directly.  States are committed only when an increment converges.
    """

    def __init__(self, problem: Problem, config: SolverConfig | None = None, R: float = 0.0):
        self.problem = problem
        self.config = config or SolverConfig()
        self.R = R
        mesh = problem.mesh
        self.asm = Assembler(mesh, problem.material, problem.split)
        self.dofmap = DofMap(mesh.n_nodes)
        for bc in problem.u_bcs:
            self.dofmap.fix_u(bc.nodes, bc.component, 0.0)
        self._bc_factors = np.zeros(self.dofmap.n_u)
        for bc in problem.u_bcs:
            self._bc_factors[DofMap.u_dof(bc.nodes, bc.component)] = bc.factor

        self.crack_set = CrackSet(mesh.n_nodes, problem.crack_nodes)
        self.dofmap.fix_phi(self.crack_set.nodes, 1.0)
        self.u = np.zeros(self.dofmap.n_u)
        self.phi = np.zeros(self.dofmap.n_phi)
        self.phi[self.crack_set.mask] = 1.0
        self.state = QuadraturePointState.zeros((mesh.n_elements, self.asm.n_qp))
        self._psi = np.zeros_like(self.state.alpha)
        self._fatigue_mask = None
        if problem.fatigue_region is not None:
            x0, x1, y0, y1 = problem.fatigue_region
            xq = self.asm.geom.qp_coords
            self._fatigue_mask = (xq[..., 0] >= x0) & (xq[..., 0] <= x1) & (xq[..., 1] >= y0) & (xq[..., 1] <= y1)

        self.counter = FactorCounter()
        self.orderings = {s: Ordering() for s in SUBPROBLEMS}
        self.factors: dict[str, Factorization | None] = {s: None for s in SUBPROBLEMS}
        self.since_update = {s: 0 for s in SUBPROBLEMS}
        self.iterations = {s: 0 for s in SUBPROBLEMS}
        self.mn_failures = 0
        self.n_increments = 0
        self.cycles = 0.0
        self.phi_min = float(self.phi.min())
        self.phi_max = float(self.phi.max())
        self._edges = _mesh_edges(mesh)

    # -- helpers -----------------------------------------------------------

    @property
    def degradation(self) -> np.ndarray:
        return cm.fatigue_degradation(self.state.alpha, self.problem.material.alpha_T)

    def crack_extension(self, interpolate: bool = False) -> float:
        return crack_extension(
            self.phi, self.problem.mesh, self.problem.crack_tip,
            exclude=np.flatnonzero(self.crack_set.initial),
            threshold=self.config.crack_set_threshold, interpolate=interpolate, edges=self._edges,
        )

    def _u_system(self, matrix: bool):
        return self.asm.displacement(self.u, self.phi, self.dofmap, matrix=matrix,
                                     residual_stiffness=self.config.residual_stiffness)

    def _phi_system(self, history, fdeg, matrix: bool):
        return self.asm.phasefield(self.phi, history, fdeg, self.dofmap, matrix=matrix)

    def _refactorize(self, sub: str, history=None, fdeg=None) -> None:
        if sub == "u":
            K, _ = self._u_system(True)
        else:
            K, _ = self._phi_system(history, fdeg, True)
        self.factors[sub] = factorize(K, sub, self.counter, self.orderings[sub], self.n_increments)
        self.since_update[sub] = 0

    # -- inner Newton loop -------------------------------------------------

    def _newton(self, sub: str, history, fdeg) -> tuple[int, float]:
        """Drive one subproblem to ``||r||_inf <= tol_in``; returns (iterations, residual)."""
        cfg = self.config
        fixed = self.dofmap.u_fixed if sub == "u" else self.dofmap.phi_fixed
        x = self.u if sub == "u" else self.phi
        x0 = x.copy()
        res0 = None
        its = 0
        since_factor = 0
        while True:
            _, r = self._u_system(False) if sub == "u" else self._phi_system(history, fdeg, False)
            res = float(np.abs(r).max()) if r.size else 0.0
            if res <= cfg.tol_in:
                return its, res
            if its >= cfg.max_inner:
                raise NonConvergenceError(f"{sub} subproblem did not converge in {its} iterations",
                                          residuals={sub: res})
            if res0 is None:
                res0 = res
            if not cfg.use_mn:
                self._refactorize(sub, history, fdeg)
            else:
                # a stale factor can make the fixed-point iteration diverge
                diverging = since_factor > 0 and res > res0
                if self.factors[sub] is None:
                    self._refactorize(sub, history, fdeg)
                elif diverging or mn_should_refactorize(sub, since_factor, 0, False, cfg):
                    self.mn_failures += 1
                    log.debug("mn failure on %s after %d iterations (diverging=%s)", sub, since_factor, diverging)
                    if since_factor > 0:
                        # retry the solve from its starting point with fresh tangents
                        x[:] = x0
                        _, r = self._u_system(False) if sub == "u" else self._phi_system(history, fdeg, False)
                    for s in SUBPROBLEMS:
                        self._refactorize(s, history, fdeg)
                    since_factor = 0
            dx = solve(self.factors[sub], -r)
            dx[fixed] = 0.0
            x += dx
            its += 1
            since_factor += 1

    # -- one increment -----------------------------------------------------

    def increment(self, load: float) -> IncrementStats:
        """Multi-pass alternate minimization at the applied ``load``.

        Returns iteration statistics; the caller commits the state with
        :meth:`commit`.
        """
        cfg = self.config
        self.u[self.dofmap.u_fixed] = self._bc_factors[self.dofmap.u_fixed] * load
        self.dofmap.phi_fixed[:] = self.crack_set.mask
        self.phi[self.crack_set.mask] = 1.0
        fdeg = self.degradation
        history = self.state.history.copy()

        if cfg.use_mn:
            # the start-of-analysis factorization happens at each subproblem's first solve
            for s in SUBPROBLEMS:
                if self.factors[s] is not None and mn_should_refactorize(s, 0, self.since_update[s], False, cfg):
                    self._refactorize(s, history, fdeg)

        stats = IncrementStats()
        for k in range(cfg.max_outer):
            its, _ = self._newton("phi", history, fdeg)
            stats.iters_phi += its
            its, stats.residual_u = self._newton("u", history, fdeg)
            stats.iters_u += its
            stats.outer = k + 1
            self._psi = self.asm.active_energy(self.u)
            np.maximum(history, self._psi, out=history)
            _, r = self._phi_system(history, fdeg, False)
            stats.residual_phi = float(np.abs(r).max())
            if stats.residual_phi <= cfg.tol_out:
                break
        else:
            raise NonConvergenceError(
                f"staggered scheme did not converge in {cfg.max_outer} passes",
                residuals={"phi": stats.residual_phi, "u": stats.residual_u},
            )
        self._pending_history = history
        self.iterations["phi"] += stats.iters_phi
        self.iterations["u"] += stats.iters_u
        return stats

    def commit(self, step: LoadStep) -> None:
        """Accept the converged increment: fatigue, history, crack set."""
        cfg = self.config
        st = self.state
        psi = self._psi
        if cfg.use_cla:
            alpha = cm.accumulate_cla(st.alpha, psi, step.cycles_weight, self.R)
        else:
            alpha = cm.accumulate_resolved(st.alpha, st.psi_prev, psi)
        if self._fatigue_mask is not None:
            alpha = np.where(self._fatigue_mask, alpha, st.alpha)
        history = self._pending_history
        if np.any(alpha < st.alpha) or np.any(history < st.history):
            raise InvariantError("fatigue or history variable decreased")
        self.state = QuadraturePointState(alpha, history, psi.copy())
        update_crack_set(self.phi, self.crack_set, cfg.crack_set_threshold)
        self.phi_min = min(self.phi_min, float(self.phi.min()))
        self.phi_max = max(self.phi_max, float(self.phi.max()))
        self.n_increments += 1
        self.cycles = step.cycle
        for s in SUBPROBLEMS:
            self.since_update[s] += 1

    # -- full program ------------------------------------------------------

    def run(self, program: LoadProgram, on_increment: Callable[["FatigueSolver", IncrementRecord], None] | None = None,
            interpolate_extension: bool = False) -> RunResult:
        """Execute the load program; see :func:`run_fatigue`."""
        cfg = self.config
        if program.R != self.R:
            self.R = program.R
        mode = program.resolve_mode(cfg.use_cla)
        result = RunResult(strategy=cfg.strategy)
        t0 = time.perf_counter()
        for step in program.steps(mode, cfg.cycles_per_increment):
            f_before = dict(self.counter.counts)
            try:
                stats = self.increment(step.load)
            except NonConvergenceError as exc:
                self._finalize(result, t0, converged=False)
                exc.result = result
                log.error("nonconvergence at increment %d (last converged cycle %g): %s",
                          step.index, result.cycles, exc)
                raise
            self.commit(step)
            da = self.crack_extension(interpolate_extension)
            rec = IncrementRecord(
                increment=step.index, cycle=step.cycle, load=step.load, outer=stats.outer,
                iters_phi=stats.iters_phi, iters_u=stats.iters_u,
                fact_u=self.counter["u"] - f_before.get("u", 0),
                fact_phi=self.counter["phi"] - f_before.get("phi", 0),
                residual_phi=stats.residual_phi, residual_u=stats.residual_u,
                crack_extension=da, crack_set_size=len(self.crack_set),
            )
            result.records.append(rec)
            if step.peak:
                result.history.append((step.cycle, da))
            log.info(
                "increment=%d cycle=%g load=%.6g outer=%d it_phi=%d it_u=%d r_phi=%.3e r_u=%.3e "
                "fact=%d da=%.6g", step.index, step.cycle, step.load, stats.outer, stats.iters_phi,
                stats.iters_u, stats.residual_phi, stats.residual_u, self.counter.paired, da,
            )
            if on_increment is not None:
                on_increment(self, rec)
        self._finalize(result, t0, converged=True)
        return result

    def _finalize(self, result: RunResult, t0: float, converged: bool) -> None:
        result.wall_time = time.perf_counter() - t0
        result.converged = converged
        result.factorizations = self.counter.paired
        result.factorizations_phi = self.counter["phi"]
        result.iters_phi = sum(r.iters_phi for r in result.records)
        result.iters_u = sum(r.iters_u for r in result.records)
        result.mn_failures = self.mn_failures
        result.increments = len(result.records)
        result.cycles = self.cycles
        result.phi_min, result.phi_max = self.phi_min, self.phi_max
        result.u, result.phi = self.u.copy(), self.phi.copy()
        result.alpha, result.history_field = self.state.alpha.copy(), self.state.history.copy()
        result.crack_set = self.crack_set.nodes


def run_fatigue(problem: Problem, program: LoadProgram, config: SolverConfig | None = None,
                on_increment=None, interpolate_extension: bool = False) -> RunResult:
    """Run a complete fatigue analysis and return its :class:`RunResult`.

    Raises :class:`NonConvergenceError` (carrying the partial result) if an
    increment fails to converge.
    """
    solver = FatigueSolver(problem, config, program.R)
    return solver.run(program, on_increment, interpolate_extension)


def staggered_increment(solver: FatigueSolver, load: float) -> IncrementStats:
    """Functional alias of :meth:`FatigueSolver.increment`."""
    return solver.increment(load)
