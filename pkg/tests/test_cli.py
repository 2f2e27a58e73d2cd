import json
import subprocess
import sys

import numpy as np
import pytest

from choicekit import SimConfig, simulate_dataset, write_responses
from choicekit.cli import main
from choicekit.design import write_design

from conftest import make_dataset, random_levels


@pytest.fixture(scope="module")
def sample(tmp_path_factory, design, spec71):
    d = tmp_path_factory.mktemp("sample")
    ds = simulate_dataset(SimConfig(400, design, spec71, seed=21))
    write_responses(ds, d / "choices.csv", d / "respondents.csv")
    return d


def run(*argv):
    return main([str(a) for a in argv])


def read(path):
    return json.loads(path.read_text())


class TestFilter:
    def write_fixture(self, tmp_path, times, chosen, households):
        rng = np.random.default_rng(0)
        ds = make_dataset(random_levels(rng, len(times)), chosen, response_times=times,
                          households=households)
        write_responses(ds, tmp_path / "c.csv", tmp_path / "r.csv")

    def test_one_violator_per_rule(self, tmp_path):
        chosen = np.tile([1, 2], (5, 4))
        chosen[1] = 2
        self.write_fixture(tmp_path, [10, 100, 100, 100, 100], chosen,
                           [(1, 0, 0)] * 4 + [(2, 2, 1)])
        assert run("filter", "--choices", tmp_path / "c.csv", "--respondents", tmp_path / "r.csv",
                   "--out", tmp_path / "out") == 0
        rep = read(tmp_path / "out" / "exclusions.json")
        assert rep["counts"] == {"fast_responders": 1, "straight_liners": 1, "inconsistent": 1,
                                 "union": 3}
        man = read(tmp_path / "out" / "manifest.json")
        assert set(man["outputs"]) == {"choices.csv", "respondents.csv", "exclusions.json"}

    def test_overlap_counted_once(self, tmp_path):
        chosen = np.tile([1, 2], (4, 4))
        chosen[0] = 1
        self.write_fixture(tmp_path, [10, 100, 100, 100], chosen, None)
        run("filter", "--choices", tmp_path / "c.csv", "--respondents", tmp_path / "r.csv",
            "--out", tmp_path / "out")
        c = read(tmp_path / "out" / "exclusions.json")["counts"]
        assert c["fast_responders"] + c["straight_liners"] == 2 and c["union"] == 1

    def test_clean_input_unchanged(self, sample, tmp_path):
        assert run("filter", "--choices", sample / "choices.csv", "--respondents",
                   sample / "respondents.csv", "--out", tmp_path) == 0
        assert read(tmp_path / "exclusions.json")["counts"]["union"] == 0
        assert (tmp_path / "choices.csv").read_bytes() == (sample / "choices.csv").read_bytes()
        assert (tmp_path / "respondents.csv").read_bytes() == (sample / "respondents.csv").read_bytes()

    def test_bad_row_is_validation_error(self, sample, tmp_path, capsys):
        text = (sample / "choices.csv").read_text().splitlines()
        parts = text[3].split(",")
        parts[-1] = "7"
        text[3] = ",".join(parts)
        (tmp_path / "c.csv").write_text("\n".join(text) + "\n")
        assert run("filter", "--choices", tmp_path / "c.csv", "--respondents",
                   sample / "respondents.csv", "--out", tmp_path / "o") == 1
        assert "c.csv:4" in capsys.readouterr().err

    def test_missing_file_is_io_error(self, tmp_path):
        assert run("filter", "--choices", tmp_path / "x.csv", "--respondents", tmp_path / "y.csv",
                   "--out", tmp_path / "o") == 3


class TestEstimate:
    def estimate(self, sample, out, *extra):
        return run(*extra, "estimate", "--choices", sample / "choices.csv", "--respondents",
                   sample / "respondents.csv", "--model", "table7-spec1", "--out", out)

    def test_mnl_report(self, sample, tmp_path):
        assert self.estimate(sample, tmp_path) == 0
        rep = read(tmp_path / "estimates.json")
        assert rep["engine"] == "mnl" and len(rep["parameters"]) == 7
        assert "Loglikelihood" in (tmp_path / "estimates.txt").read_text()

    def test_deterministic(self, sample, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        self.estimate(sample, tmp_path / "a")
        self.estimate(sample, tmp_path / "b")
        for f in ("estimates.json", "estimates.txt", "manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_mxl_fixed_spec_nests_mnl(self, sample, tmp_path):
        self.estimate(sample, tmp_path / "mnl")
        assert run("--draws", 1, "estimate", "--choices", sample / "choices.csv",
                   "--respondents", sample / "respondents.csv", "--model", "table7-spec1",
                   "--engine", "mxl", "--out", tmp_path / "mxl") == 0
        a = read(tmp_path / "mnl" / "estimates.json")["parameters"]
        b = read(tmp_path / "mxl" / "estimates.json")["parameters"]
        assert not (tmp_path / "mxl" / "mixing.json").exists()
        for pa, pb in zip(a, b):
            assert pa["name"] == pb["name"]
            assert pa["estimate"] == pytest.approx(pb["estimate"], abs=1e-5)

    def test_unknown_model_key(self, sample, tmp_path, capsys, spec71):
        d = spec71.to_dict()
        d["termz"] = d.pop("terms")
        (tmp_path / "m.json").write_text(json.dumps(d))
        assert run("estimate", "--choices", sample / "choices.csv", "--respondents",
                   sample / "respondents.csv", "--model", tmp_path / "m.json",
                   "--out", tmp_path / "o") == 1
        assert "termz" in capsys.readouterr().err

    def test_separable_data_is_numerical_error(self, tmp_path):
        rng = np.random.default_rng(8)
        lv = random_levels(rng, 10)
        lv[:, :, 0, 4], lv[:, :, 1, 4] = 1, 0
        write_responses(make_dataset(lv, np.ones((10, 8), int)), tmp_path / "c.csv",
                        tmp_path / "r.csv")
        assert run("estimate", "--choices", tmp_path / "c.csv", "--respondents",
                   tmp_path / "r.csv", "--model", "table7-spec1", "--out", tmp_path / "o") == 2


class TestDesign:
    def test_eval_reference(self, tmp_path):
        assert run("design", "eval", "--out", tmp_path) == 0
        rep = read(tmp_path / "design_report.json")
        assert rep["violations"] == []
        assert rep["partial_profile"]["ok"] is True

    def test_improve_zero_iterations(self, tmp_path, design):
        write_design(design, tmp_path / "in.csv")
        assert run("design", "improve", "--design", tmp_path / "in.csv", "--iterations", 0,
                   "--out", tmp_path / "o") == 0
        assert (tmp_path / "o" / "design.csv").read_bytes() == (tmp_path / "in.csv").read_bytes()

    def test_infeasible_design(self, tmp_path, design, capsys):
        from choicekit import DesignPlan
        lv = design.levels.copy()
        lv[1, 2, 0, 3], lv[1, 2, 0, 5] = 90, 80
        write_design(DesignPlan(lv), tmp_path / "bad.csv")
        assert run("design", "eval", "--design", tmp_path / "bad.csv", "--out", tmp_path / "o") == 1
        assert "situation 11" in capsys.readouterr().err


class TestSensitivity:
    def test_fig2_files(self, tmp_path):
        assert run("--draws", 200, "sensitivity", "--model", "table7-spec2", "--preset", "fig2",
                   "--grid-points", 5, "--out", tmp_path) == 0
        csvs = sorted(p.name for p in tmp_path.glob("*.csv"))
        assert csvs == ["fig2_cases.csv", "fig2_crowding.csv", "fig2_mask.csv",
                        "fig2_travel_time.csv", "fig2_vaccine.csv"]
        man = read(tmp_path / "manifest.json")
        assert set(man["outputs"]) >= set(csvs)

    def test_scenario(self, tmp_path):
        scen = {"schema_version": 1, "pivot": 45,
                "sweeps": [{"name": "late", "attribute": "mask", "grid": [0, 1],
                            "overrides": {"travel_time": 90}}]}
        (tmp_path / "s.json").write_text(json.dumps(scen))
        assert run("--draws", 300, "sensitivity", "--model", "table8-spec1", "--scenario",
                   tmp_path / "s.json", "--out", tmp_path / "o") == 0
        assert (tmp_path / "o" / "late.csv").exists()

    def test_unknown_attribute_named(self, tmp_path, capsys):
        scen = {"schema_version": 1, "sweeps": [{"attribute": "comfort", "grid": [0, 1]}]}
        (tmp_path / "s.json").write_text(json.dumps(scen))
        assert run("sensitivity", "--model", "table7-spec2", "--scenario", tmp_path / "s.json",
                   "--out", tmp_path / "o") == 1
        assert "scenario.sweeps[0].attribute" in capsys.readouterr().err

    def test_group_preset_needs_mixed_model(self, tmp_path):
        assert run("sensitivity", "--model", "table7-spec2", "--preset", "fig4a",
                   "--out", tmp_path) == 1


class TestSmallCommands:
    def test_simulate_then_estimate(self, tmp_path):
        assert run("--seed", 3, "simulate", "--model", "table7-spec1", "--n", 50,
                   "--out", tmp_path / "sim") == 0
        truth = read(tmp_path / "sim" / "truth.json")
        assert truth["n_respondents"] == 50
        assert run("estimate", "--choices", tmp_path / "sim" / "choices.csv", "--respondents",
                   tmp_path / "sim" / "respondents.csv", "--model", "table7-spec1",
                   "--out", tmp_path / "fit") == 0

    def test_lrtest_numbers(self, tmp_path, capsys):
        assert run("lrtest", "--restricted", -4664.9, "--full", -4645.4, "--df", 2,
                   "--out", tmp_path / "lr.json") == 0
        res = read(tmp_path / "lr.json")
        assert res["statistic"] == pytest.approx(39.0)
        assert res["p_value"] == pytest.approx(3.4e-9, rel=0.05)

    def test_lrtest_negative(self):
        assert run("lrtest", "--restricted", -10, "--full", -11, "--df", 1) == 1

    def test_summarize_mixing(self, tmp_path, capsys):
        assert run("summarize-mixing", "--model", "table8-spec1", "--out", tmp_path) == 0
        rep = read(tmp_path / "mixing.json")
        assert rep["crowding"]["statistics"]["mean"] == pytest.approx(0.5058, abs=1e-4)
        assert "Crowding" in capsys.readouterr().out

    def test_usage_error_is_validation_code(self):
        with pytest.raises(SystemExit) as e:
            run("estimate", "--engine", "probit")
        assert e.value.code == 1

    def test_console_script(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "choicekit.cli", "lrtest", "--restricted", "-5",
                            "--full", "-4", "--df", "1"], capture_output=True, text=True)
        assert r.returncode == 0 and "LR statistic 2.0000" in r.stdout
