"""Acceptance criteria at desk scale.

Each criterion prints one ``[PASS]``/``[FAIL]`` line (collected again in the
terminal summary).  Analysis runs are cached per session so that criteria
sharing a run (curves, timings, invariants) do not recompute it.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from conftest import report

from pffatigue.assembly import Assembler
from pffatigue.constitutive import (
    MaterialParams,
    SplitKind,
    elastic_energy,
    fatigue_degradation,
    split_energy,
    split_energy_principal,
    undegraded_stress,
)
from pffatigue.mesh import Mesh, structured_mesh
from pffatigue.postprocess import extension_deviation
from pffatigue.presets import preset
from pffatigue.solver import FatigueSolver, LoadProgram, SolverConfig

pytestmark = pytest.mark.acceptance

STEEL = MaterialParams(E=210.0, nu=0.3, Gc=2.7, ell=0.05)
TOL_OUT = 1e-4


# -- run cache with invariant monitoring -------------------------------------


@dataclass
class Monitor:
    """Checks the global invariants after every committed increment."""

    alpha: np.ndarray | None = None
    history: np.ndarray | None = None
    crack: np.ndarray | None = None
    violations: list[str] = field(default_factory=list)

    def __call__(self, solver, rec):
        st = solver.state
        if self.alpha is not None:
            if np.any(st.alpha < self.alpha):
                self.violations.append(f"alpha decreased at increment {rec.increment}")
            if np.any(st.history < self.history):
                self.violations.append(f"history decreased at increment {rec.increment}")
            if np.any(self.crack & ~solver.crack_set.mask):
                self.violations.append(f"crack set shrank at increment {rec.increment}")
        if solver.phi.min() < -1e-6 or solver.phi.max() > 1 + 1e-6:
            self.violations.append(
                f"phi outside [0, 1] at increment {rec.increment}: [{solver.phi.min()}, {solver.phi.max()}]"
            )
        self.alpha = st.alpha.copy()
        self.history = st.history.copy()
        self.crack = solver.crack_set.mask.copy()


_RUNS: dict = {}


def run_case(case_name: str, strategy: str, u_max=None, cycles=None, split=None, **solver_kw):
    """Run (or fetch) a monitored analysis; returns ``(result, monitor)``."""
    key = (case_name, strategy, u_max, cycles, split, tuple(sorted(solver_kw.items())))
    if key not in _RUNS:
        case = preset(case_name)
        if split is not None:
            case = case.with_split(split)
        load = replace(case.load, u_max=u_max or case.load.u_max, total_cycles=cycles or case.load.total_cycles)
        config = replace(case.solver, **solver_kw).with_strategy(strategy)
        monitor = Monitor()
        solver = FatigueSolver(case.build_problem(), config, load.R)
        # sub-element measurement, so a one-cycle lag at a jump is not a whole element
        result = solver.run(load, monitor, interpolate_extension=True)
        _RUNS[key] = (result, monitor)
    return _RUNS[key]


def all_violations():
    return [(k, v) for k, (_, m) in _RUNS.items() for v in m.violations]


# -- criterion 1: constitutive properties --------------------------------------


def random_strains(n, seed):
    a = np.random.default_rng(seed).normal(scale=1e-3, size=(n, 3, 3))
    return 0.5 * (a + np.swapaxes(a, 1, 2))


def test_criterion_1_constitutive():
    t0 = time.perf_counter()
    eps = random_strains(1000, seed=2024)
    psi0 = elastic_energy(eps, STEEL)
    additivity = 0.0
    for kind in (SplitKind.ISOTROPIC, SplitKind.VOLDEV, SplitKind.SPECTRAL):
        plus, minus = split_energy(eps, STEEL, kind)
        additivity = max(additivity, float(np.max(np.abs(plus + minus - psi0) / psi0)))

    # NoTension: approach each branch boundary from both sides
    nu, h = STEEL.nu, 1e-13
    rng = np.random.default_rng(7)
    jumps = []
    for _ in range(50):
        a, b = np.sort(rng.uniform(0.2, 2.0, 2))[::-1] * 1e-3
        c = rng.uniform(0.5, 2.0) * 1e-3
        t = rng.uniform(0.0, 0.9)
        e2c = -c + t * (1 + nu) * c  # e2 + nu e3 < 0 with e3 = -c
        boundaries = [
            (np.array([a, b, 0.0]), np.array([0, 0, 1.0])),  # e3 = 0
            (np.array([nu * c + b, nu * c, -c]), np.array([0, 1.0, 0])),  # e2 + nu e3 = 0
            (np.array([-nu * (e2c - c) / (1 - nu), e2c, -c]), np.array([1.0, 0, 0])),  # third
        ]
        for p, d in boundaries:
            assert p[0] >= p[1] >= p[2]
            lo = split_energy_principal(p - h * d, STEEL, SplitKind.NOTENSION)[0]
            hi = split_energy_principal(p + h * d, STEEL, SplitKind.NOTENSION)[0]
            scale = max(abs(float(hi)), abs(float(lo)), float(elastic_energy(np.diag(p), STEEL)))
            jumps.append(abs(float(lo - hi)) / scale)
    continuity = max(jumps)

    aT = STEEL.alpha_T
    f_vals = (float(fatigue_degradation(aT, aT)), float(fatigue_degradation(3 * aT, aT)))
    grid = fatigue_degradation(np.linspace(0, 1e3 * aT, 10_000), aT)
    monotone = bool(np.all(np.diff(grid) <= 0))

    sigma = undegraded_stress(eps[:100], STEEL)
    step = 1e-9
    fd = np.zeros_like(sigma)
    for i in range(3):
        for j in range(3):
            d = np.zeros((3, 3))
            d[i, j] += 0.5 * step
            d[j, i] += 0.5 * step
            fd[:, i, j] = (elastic_energy(eps[:100] + d, STEEL) - elastic_energy(eps[:100] - d, STEEL)) / (2 * step)
    fd_err = float(np.max(np.abs(fd - sigma) / np.abs(sigma).max(axis=(1, 2))[:, None, None]))
    elapsed = time.perf_counter() - t0

    ok = (
        additivity <= 1e-10 and continuity <= 1e-8 and f_vals[0] == 1.0
        and abs(f_vals[1] - 0.25) < 1e-15 and monotone and fd_err <= 1e-5 and elapsed < 60
    )
    report("1", ok, f"additivity {additivity:.1e}, NoTension jump {continuity:.1e}, f(aT)={f_vals[0]}, "
                    f"f(3aT)={f_vals[1]}, monotone={monotone}, stress FD {fd_err:.1e}, {elapsed:.1f} s")
    assert ok


# -- criterion 2: discrete verification ----------------------------------------


def test_criterion_2_discrete():
    t0 = time.perf_counter()
    base = structured_mesh(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0]))
    nodes = np.array(base.nodes)
    nodes[4] = [0.57, 0.44]
    mesh = Mesh(nodes, base.elements, dict(base.node_sets))
    asm = Assembler(mesh, STEEL)
    A = np.array([[1.2e-3, 3e-4], [-1e-4, -4e-4]])
    exact = (mesh.nodes @ A.T).ravel()
    # solve with boundary data only, interior node free
    free = np.array([8, 9])
    u = exact.copy()
    u[free] = 0.0
    K, r = asm.displacement(u, np.zeros(mesh.n_nodes))
    Kff = K.tocsc()[free][:, free]
    u[free] -= spla.spsolve(Kff, r[free])
    _, r = asm.displacement(u, np.zeros(mesh.n_nodes))
    patch_field = float(np.abs(u - exact).max())
    patch_res = float(np.abs(r[free]).max())

    single = structured_mesh(np.array([0.0, 0.1]), np.array([0.0, 0.1]))
    asm1 = Assembler(single, STEEL)
    H0 = 17.0
    H = np.full((1, 4), H0)
    phi = np.zeros(4)
    for _ in range(2):
        Kp, rp = asm1.phasefield(phi, H, np.ones((1, 4)))
        phi -= spla.spsolve(Kp.tocsc(), rp)
    expected = 2 * H0 / (2 * H0 + STEEL.Gc / STEEL.ell)
    homog = float(np.abs(phi - expected).max())
    elapsed = time.perf_counter() - t0
    ok = patch_res <= 1e-10 and patch_field <= 1e-12 and homog <= 1e-8 and elapsed < 60
    report("2", ok, f"patch |r_u| {patch_res:.1e}, field error {patch_field:.1e}; "
                    f"homogeneous phi error {homog:.1e}")
    assert ok


# -- criterion 3: MN transparency ---------------------------------------------


def test_criterion_3_mn_transparency():
    tight = dict(tol_in=1e-7)
    t0 = time.perf_counter()
    mn, _ = run_case("desk_sent", "mn", **tight)
    ref, _ = run_case("desk_sent", "baseline", **tight)
    elapsed = time.perf_counter() - t0
    a_mn, a_ref = mn.final_crack_extension, ref.final_crack_extension
    rel = abs(a_mn - a_ref) / a_ref
    dphi = float(np.abs(mn.phi - ref.phi).max())
    ok = a_ref > 0 and rel <= 0.01 and dphi <= 10 * TOL_OUT and elapsed <= 1800
    report("3", ok, f"da MN {a_mn:.5f} vs baseline {a_ref:.5f} (rel {rel:.2e}), "
                    f"|dphi|inf {dphi:.2e} <= {10 * TOL_OUT:.0e}, tol_in 1e-7, {elapsed:.0f} s")
    assert ok


# -- criterion 4: CLA equivalence at R = 0 --------------------------------------


def test_criterion_4_cla_equivalence():
    t0 = time.perf_counter()
    res, _ = run_case("desk_sent", "baseline")
    cla, _ = run_case("desk_sent", "cla")
    elapsed = time.perf_counter() - t0
    cycles = np.array([c for c, _ in res.history])
    a_res = res.extension_at(cycles)
    a_cla = cla.extension_at(cycles)
    a_final = res.final_crack_extension
    curve = float(np.max(np.abs(a_cla - a_res)) / a_final)

    # first ten cycles: alpha after each full cycle
    case = preset("desk_sent")
    snaps = {}
    for name in ("baseline", "cla"):
        solver = FatigueSolver(case.build_problem(), SolverConfig.for_strategy(name))
        out = []

        def grab(s, rec, out=out, name=name):
            if name == "cla" or rec.load == 0.0:
                out.append(s.state.alpha.copy())

        solver.run(LoadProgram(case.load.u_max, 10), grab)
        snaps[name] = out
    alpha_rel = max(
        float(np.abs(a - b).max() / np.abs(b).max()) for a, b in zip(snaps["baseline"], snaps["cla"])
    )
    ok = a_final > 0 and curve <= 0.02 and alpha_rel <= 1e-8 and len(snaps["cla"]) == 10
    report("4", ok, f"max curve gap {100 * curve:.2f}% of final da {a_final:.4f} over {len(cycles)} cycles; "
                    f"alpha over first 10 cycles rel {alpha_rel:.1e}; {elapsed:.0f} s")
    assert ok


# -- criterion 5: multi-cycle increment error -----------------------------------

# peak displacement giving a crack extension of about 0.3 mm at the characteristic count
CHARACTERISTIC = {2000: 5.35e-4, 4000: 4.17e-4, 8000: 3.24e-4}


@pytest.fixture(scope="module")
def deviations():
    out = {}
    t0 = time.perf_counter()
    for cycles, u in CHARACTERISTIC.items():
        r16, _ = run_case("desk_sent", "mn+cla", u_max=u, cycles=cycles, cycles_per_increment=16.0)
        r1, _ = run_case("desk_sent", "mn+cla", u_max=u, cycles=cycles, cycles_per_increment=1.0)
        out[cycles] = (extension_deviation(r16, r1), r16.final_crack_extension, r1.final_crack_extension)
    out["elapsed"] = time.perf_counter() - t0
    return out


def _describe(dev):
    return ", ".join(f"{c}: {dev[c][0]:+.1f}% ({dev[c][1]:.3f}/{dev[c][2]:.3f} mm)" for c in sorted(CHARACTERISTIC))


def test_criterion_5_magnitude(deviations):
    mags = [abs(deviations[c][0]) for c in sorted(CHARACTERISTIC)]
    ok = all(m <= 5.0 for m in mags) and deviations["elapsed"] <= 3600
    report("5 (|deviation| <= 5%, N=16 vs N=1)", ok, _describe(deviations))
    assert ok


def test_criterion_5_trend(deviations):
    mags = [abs(deviations[c][0]) for c in sorted(CHARACTERISTIC)]
    ok = all(b < a for a, b in zip(mags, mags[1:]))
    report("5 (deviation decreases with cycle count)", ok, " > ".join(f"{m:.1f}%" for m in mags))
    assert ok


# -- criterion 6: counter arithmetic --------------------------------------------


def test_criterion_6_counters():
    n_c = 100
    mn, _ = run_case("desk_sent", "mn+cla", u_max=1e-4, cycles=1000, n_c=n_c)
    base, _ = run_case("desk_sent", "baseline", u_max=1e-4, cycles=1000, n_c=n_c)
    I = mn.increments
    expected = 1 + (I - 1) // n_c
    ok = (
        I == 1000 and mn.mn_failures == 0 and mn.factorizations == expected
        and base.increments == 2000 and base.factorizations >= 2000
    )
    report("6", ok, f"MN+CLA: I={I}, failures={mn.mn_failures}, factorizations={mn.factorizations} "
                    f"(expected {expected}); resolved baseline: {base.increments} increments, "
                    f"{base.factorizations} factorizations")
    assert ok


# -- criterion 7: speed-up ordering ---------------------------------------------


def test_criterion_7_speedup_ordering():
    t = {s: run_case("desk_sent", s)[0].wall_time for s in ("baseline", "mn", "cla", "mn+cla")}
    ok = t["mn+cla"] < t["cla"] < t["baseline"] and t["mn+cla"] < t["mn"] < t["baseline"]
    facts = {s: run_case("desk_sent", s)[0].factorizations for s in t}
    report("7", ok, ", ".join(f"{s} {t[s]:.1f} s ({facts[s]} fact.)" for s in ("mn+cla", "cla", "mn", "baseline")))
    assert ok


# -- criterion 8: split-dependent crack paths -----------------------------------


def test_criterion_8_split_paths():
    t0 = time.perf_counter()
    results = {k: run_case("desk_tpb", "mn+cla", split=k) for k in SplitKind}
    elapsed = time.perf_counter() - t0
    complete = all(r.converged and r.cycles == 2000 for r, _ in results.values())
    clean = all(not m.violations for _, m in results.values())
    dphi = float(np.abs(results[SplitKind.ISOTROPIC][0].phi - results[SplitKind.NOTENSION][0].phi).max())
    ok = complete and clean and dphi > 0.5 and elapsed <= 3600
    das = ", ".join(f"{k.value} {r.final_crack_extension:.3f}" for k, (r, _) in results.items())
    report("8", ok, f"all splits complete={complete}, invariants clean={clean}, "
                    f"|phi_iso - phi_notension|inf {dphi:.3f}; da [mm]: {das}; {elapsed:.0f} s")
    assert ok


# -- criterion 9: global invariants and determinism ------------------------------


def test_criterion_9_invariants_and_determinism():
    first, _ = run_case("desk_sent", "mn+cla")
    case = preset("desk_sent")
    again = FatigueSolver(case.build_problem(), case.solver.with_strategy("mn+cla")).run(
        case.load, interpolate_extension=True)
    identical = (again.history == first.history and np.array_equal(again.phi, first.phi)
                 and again.factorizations == first.factorizations)
    bad = all_violations()
    bounds = all(-1e-6 <= r.phi_min and r.phi_max <= 1 + 1e-6 for r, _ in _RUNS.values())
    ok = identical and not bad and bounds and len(_RUNS) > 0
    detail = f"{len(_RUNS)} monitored runs, {len(bad)} violations, rerun bit-identical={identical}"
    if bad:
        detail += f"; first: {bad[0][1]}"
    report("9", ok, detail)
    assert ok
