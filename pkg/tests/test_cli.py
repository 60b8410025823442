"""Run files, overrides and the command-line entry point."""

import csv

import pytest

from pffatigue.cli import (
    ConfigError,
    apply_overrides,
    main,
    resolve_spec,
    spec_from_string,
    spec_to_string,
)
from pffatigue.constitutive import SplitKind
from pffatigue.presets import PRESETS

SMALL_SPEC = """\
[case]
name = small

[geometry]
h_coarse = 0.1
h_fine = 0.05
refine_box = 0.4, 1.0, 0.4, 0.6

[material]
ell = 0.1

[load]
u_max = 1e-3
cycles = 3

[solver]
strategy = mn
"""


@pytest.fixture
def small_spec(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_SPEC)
    return path


class TestSpecParsing:
    def test_sent_preset(self):
        c = resolve_spec("sent").case
        m = c.material
        assert (m.E, m.nu, m.Gc, m.ell) == (210.0, 0.3, 2.7, 0.016)
        assert c.load.u_max == 2e-4 and c.load.R == 0.0
        assert c.load.total_cycles == 120_000

    def test_tpb_preset(self):
        c = resolve_spec("tpb").case
        assert c.load.u_max == 3e-3 and c.load.total_cycles == 90_000
        assert c.geometry.h_fine == 0.01

    @pytest.mark.parametrize("name", PRESETS)
    def test_round_trip(self, name):
        spec = resolve_spec(name)
        again = spec_from_string(spec_to_string(spec))
        assert again == spec
        assert spec_to_string(again) == spec_to_string(spec)

    def test_round_trip_custom(self):
        spec = spec_from_string(SMALL_SPEC + "n_c_phi = 7\nncycles = 2.5\n[output]\nvtk_interval = 0.5\n")
        assert spec_from_string(spec_to_string(spec)) == spec
        assert spec.case.solver.n_c_phi == 7 and spec.case.solver.cycles_per_increment == 2.5

    def test_inline_comments(self):
        spec = spec_from_string("[material]\nE = 210  ; GPa\nGc = 2.7  # kJ/m^2\n")
        assert spec.case.material.E == 210.0 and spec.case.material.Gc == 2.7

    def test_alpha_t_rederived(self):
        spec = spec_from_string("[material]\nGc = 1.2\nell = 0.1\n")
        assert spec.case.material.alpha_T == pytest.approx(1.2 / (12 * 0.1))

    @pytest.mark.parametrize(
        "text, path",
        [
            ("[solver]\ntol_inn = 1e-5\n", "solver.tol_inn"),
            ("[material]\nE = abc\n", "material.E"),
            ("[material]\nsplit = fancy\n", "material.split"),
            ("[solver]\nstrategy = turbo\n", "solver.strategy"),
            ("[mesh]\nh = 1\n", "mesh"),
            ("[case]\npreset = nope\n", "case.preset"),
            ("[material]\nnu = 0.5\n", "material"),
            ("[load]\nR = 1.5\n", "load"),
            ("[solver]\ntol_in = 1e-3\n", "solver"),
            ("[geometry]\nkind = torsion\n", "geometry"),
            ("[output]\nvtk_interval = -1\n", "output.vtk_interval"),
        ],
    )
    def test_errors_carry_field_path(self, text, path):
        with pytest.raises(ConfigError) as info:
            spec_from_string(text)
        assert info.value.path == path
        assert str(info.value).startswith(path)

    def test_malformed(self):
        with pytest.raises(ConfigError, match="malformed"):
            spec_from_string("no section header\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            resolve_spec(str(tmp_path / "absent.ini"))


class TestOverrides:
    def test_all(self):
        spec = apply_overrides(resolve_spec("desk_sent"), cycles=100, strategy="mn+cla", split="iso",
                               ncycles=4, out="elsewhere")
        c = spec.case
        assert c.load.total_cycles == 100
        assert (c.solver.use_mn, c.solver.use_cla) == (True, True)
        assert c.split is SplitKind.ISOTROPIC
        assert c.solver.cycles_per_increment == 4
        assert spec.output.dir == "elsewhere"

    def test_none_is_identity(self):
        spec = resolve_spec("desk_sent")
        assert apply_overrides(spec) == spec

    def test_bad_values(self):
        spec = resolve_spec("desk_sent")
        with pytest.raises(ConfigError, match="load.cycles"):
            apply_overrides(spec, cycles=0)
        with pytest.raises(ConfigError, match="solver.ncycles"):
            apply_overrides(spec, ncycles=-1)

    def test_vtk_interval_default(self):
        spec = resolve_spec("desk_sent")
        assert spec.output.interval(500) == 50


class TestMain:
    def test_run_baseline_increments(self, small_spec, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["run", str(small_spec), "--cycles", "100", "--strategy", "baseline", "--out", str(out)])
        assert code == 0
        assert "increments=200" in capsys.readouterr().out
        rows = list(csv.DictReader((out / "increments_baseline.csv").open()))
        assert len(rows) == 200
        history = (out / "history_baseline.csv").read_text().splitlines()
        assert len(history) == 101
        snapshots = sorted(p.name for p in out.glob("*.vtk"))
        assert len(snapshots) == 11 and "small_baseline_final.vtk" in snapshots

    def test_compare_single(self, small_spec, tmp_path):
        out = tmp_path / "cmp"
        assert main(["compare", str(small_spec), "--strategies", "cla", "--out", str(out)]) == 0
        rows = list(csv.DictReader((out / "comparison.csv").open()))
        assert [r["strategy"] for r in rows] == ["cla"]

    def test_config_error_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[solver]\nn_i = many\n")
        assert main(["run", str(bad)]) == 2
        assert "solver.n_i" in capsys.readouterr().err

    def test_unknown_compare_strategy(self, small_spec, capsys):
        assert main(["compare", str(small_spec), "--strategies", "mn,warp"]) == 2
        assert "warp" in capsys.readouterr().err

    def test_nonconvergence_exit(self, tmp_path, capsys):
        spec = tmp_path / "hard.ini"
        spec.write_text(SMALL_SPEC.replace("u_max = 1e-3", "u_max = 6e-3") + "max_inner = 1\nn_i = 1000\n")
        code = main(["run", str(spec), "--out", str(tmp_path / "o")])
        assert code == 3
        assert "last converged cycle" in capsys.readouterr().err

    @pytest.mark.slow
    def test_compare_four_strategies_desk(self, tmp_path):
        out = tmp_path / "desk"
        code = main(["compare", "desk_sent", "--cycles", "200", "--strategies", "baseline,mn,cla,mn+cla",
                     "--out", str(out)])
        assert code == 0
        rows = {r["strategy"]: int(r["factorizations"]) for r in csv.DictReader((out / "comparison.csv").open())}
        assert len(rows) == 4
        assert rows["mn+cla"] < rows["cla"] and rows["mn+cla"] < rows["baseline"]
        history = list(csv.DictReader((out / "comparison_history.csv").open()))
        assert {r["strategy"] for r in history} == set(rows)
