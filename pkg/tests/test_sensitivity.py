import csv
import math

import numpy as np
import pytest

from choicekit import (ConfigError, MXLResult, SweepSpec, compute_baseline, design_baseline,
                       group_sweep, sweep_mnl, sweep_mxl)
from choicekit.mxl import mnl_equivalent
from choicekit.sensitivity import (FIGURE2, SensitivityTable, baseline_audit, figure2_sweeps,
                                   figure3_sweeps, group_sweeps, write_tables)

from conftest import make_dataset


@pytest.fixture(scope="module")
def mxl1(spec81):
    return MXLResult.from_spec(spec81)


@pytest.fixture(scope="module")
def base72(spec72):
    return design_baseline(spec72)


@pytest.fixture(scope="module")
def base81(spec81):
    return design_baseline(spec81)


def without_sigma(spec):
    vals = dict(spec.values)
    for n in spec.random_names:
        vals[n] = {"mu": vals[n]["mu"], "sigma": 0.0}
    return spec.with_values(vals)


class TestBaseline:
    def test_identical_alternatives(self, spec72):
        lv = np.broadcast_to(np.array([2, 1, 1.15, 50, 1, 65], float), (2, 8, 2, 6))
        b = compute_baseline(make_dataset(lv, np.ones((2, 8), int)), spec72)
        assert b.as_dict()["asc"] == -1.0
        d = b.as_dict()
        assert all(v == 0 for k, v in d.items() if k != "asc")

    def test_hand_computed(self, spec72):
        lv = np.zeros((1, 8, 2, 6))
        lv[..., 3], lv[..., 5] = 10, 5
        lv[0, :, 0, 2], lv[0, :, 1, 2] = 1.3, 0.7
        lv[0, :4, 0, 0], lv[0, 4:, 1, 0] = 6, 2
        lv[0, :4, 0, 4] = 1
        b = compute_baseline(make_dataset(lv, np.ones((1, 8), int), pivots=30), spec72).as_dict()
        assert b["crowding"] == pytest.approx(2.0)
        assert b["travel_time"] == pytest.approx(0.18)
        assert b["mask"] == pytest.approx(0.5)
        assert b["travel_time:mask"] == pytest.approx(0.195)

    def test_empty_rejected(self, spec72):
        lv = np.zeros((1, 8, 2, 6)) + [0, 0, 1, 10, 0, 5]
        ds = make_dataset(lv, np.ones((1, 8), int)).subset([])
        with pytest.raises(ValueError, match="empty"):
            compute_baseline(ds, spec72)

    def test_design_baseline_frozen(self, base72):
        d = base72.as_dict()
        assert d["asc"] == -1.0
        assert d["crowding"] == pytest.approx(-0.125, abs=1e-12)
        assert d["travel_time"] == pytest.approx(0.016875, abs=1e-12)
        assert d["mask"] == pytest.approx(-0.2083333, abs=1e-6)
        assert d["vaccine"] == pytest.approx(0.075, abs=1e-12)


class TestSweepMNL:
    def test_zero_theta(self, base72, spec72):
        t = sweep_mnl(base72, SweepSpec("crowding", FIGURE2["crowding"]), np.zeros(9))
        np.testing.assert_array_equal(t.mean, 0.5)

    @pytest.mark.parametrize("attr, sign", [("crowding", -1), ("travel_time", -1), ("cases", -1),
                                            ("vaccine", 1)])
    def test_direction(self, base72, spec72, attr, sign):
        t = sweep_mnl(base72, SweepSpec(attr, np.linspace(*FIGURE2[attr], 13)), spec72.vector())
        assert np.all(sign * np.diff(t.mean) > 0)

    def test_mask_raises(self, base72, spec72):
        t = sweep_mnl(base72, SweepSpec("mask", [0, 1]), spec72.vector())
        assert t.increment() > 0

    def test_matches_two_utility_oracle(self, base72, spec72):
        theta = spec72.vector()
        sw = SweepSpec("vaccine", [0, 40, 100], overrides={"travel_time": 60})
        t = sweep_mnl(base72, sw, theta)
        names = spec72.term_names
        for g, p in zip(sw.grid, t.mean):
            x1 = dict(base72.as_dict())
            x1.update({"vaccine": g / 100, "travel_time": 0.6,
                       "travel_time:mask": 0.6 * base72.delta_attr[4],
                       "crowding:vaccine": base72.delta_attr[0] * g / 100,
                       "travel_time:cases": 0.6 * base72.delta_attr[3]})
            v1 = sum(theta[k] * x1[n] for k, n in enumerate(names) if n != "asc")
            v2 = theta[names.index("asc")]
            for c in (0.0, 5.0, -40.0):
                e1, e2 = math.exp(v1 + c), math.exp(v2 + c)
                assert p == pytest.approx(e1 / (e1 + e2), abs=1e-12)

    def test_extrapolation_flag(self, base72, spec72):
        t = sweep_mnl(base72, SweepSpec("travel_time", [30, 39, 40]), spec72.vector())
        assert list(t.extrapolated) == [False, False, True]
        t = sweep_mnl(base72, SweepSpec("cases", [0, 10, 90]), spec72.vector())
        assert list(t.extrapolated) == [True, False, False]

    @pytest.mark.parametrize("sweep, field", [
        (SweepSpec("comfort", [0, 1]), "sweep.attribute"),
        (SweepSpec("mask", [0, 1], overrides={"speed": 1}), "sweep.overrides.speed"),
        (SweepSpec("mask", [0, 1], covariates={"male": 1}), "sweep.covariates.male"),
    ])
    def test_unknown_names(self, base72, spec72, sweep, field):
        with pytest.raises(ConfigError, match=field):
            sweep_mnl(base72, sweep, spec72.vector())


class TestSweepMXL:
    def test_sigma_zero_collapses(self, spec81, base81):
        spec = without_sigma(spec81)
        res = MXLResult.from_spec(spec)
        sw = SweepSpec("crowding", np.linspace(0, 6, 7), n_draws=200)
        t = sweep_mxl(base81, sw, res)
        ref = sweep_mnl(base81, sw, mnl_equivalent(spec, spec.vector()))
        for q in (t.mean, t.p5, t.p50, t.p95):
            np.testing.assert_allclose(q, ref.mean, atol=1e-14)

    def test_band_order(self, mxl1, base81):
        t = sweep_mxl(base81, SweepSpec("vaccine", np.linspace(0, 100, 5), n_draws=2000), mxl1)
        assert np.all(t.p5 <= t.p50) and np.all(t.p50 <= t.p95)

    def test_seed_stability(self, mxl1, base81):
        grid = np.linspace(0, 6, 9)
        a = sweep_mxl(base81, SweepSpec("crowding", grid, seed=1), mxl1)
        b = sweep_mxl(base81, SweepSpec("crowding", grid, seed=2), mxl1)
        assert np.max(np.abs(a.mean - b.mean)) < 0.005

    @pytest.mark.parametrize("attr, sign", [("crowding", -1), ("travel_time", -1), ("cases", -1),
                                            ("vaccine", 1)])
    def test_direction(self, mxl1, base81, attr, sign):
        t = sweep_mxl(base81, SweepSpec(attr, np.linspace(*FIGURE2[attr], 7), n_draws=4000), mxl1)
        assert np.all(sign * np.diff(t.mean) > 0)

    def test_figure_helpers(self, mxl1, base81):
        f2 = figure2_sweeps(base81, mxl1, n=5, n_draws=500)
        assert set(f2) == set(FIGURE2)
        f3 = figure3_sweeps(base81, mxl1, n=5, n_draws=500)
        assert set(f3) == {"fig3a_30min", "fig3a_90min", "fig3b_crowding0", "fig3b_crowding6"}
        # the travel-time x mask interaction is negative, so masks help less on long trips
        assert f3["fig3a_90min"].increment() < f3["fig3a_30min"].increment()


@pytest.fixture(scope="module")
def mxl2(spec82):
    return MXLResult.from_spec(spec82)


class TestGroups:
    def test_swap(self, mxl2, spec82):
        base = design_baseline(spec82)
        sw = SweepSpec("mask", [0, 1], n_draws=500)
        g, c = group_sweep(base, sw, mxl2, {"mask_helps": 1, "always_wear_mask": 0})
        g2, c2 = group_sweep(base, sw, mxl2, {"mask_helps": 0, "always_wear_mask": 1})
        np.testing.assert_array_equal(g.mean, c2.mean)
        np.testing.assert_array_equal(c.mean, g2.mean)

    def test_zero_interaction_covariate(self, spec82):
        vals = dict(spec82.values)
        for t in spec82.terms:
            if t.covariate == "male":
                vals[t.name] = 0.0
        spec = spec82.with_values(vals)
        base = design_baseline(spec)
        g, c = group_sweep(base, SweepSpec("mask", [0, 1], n_draws=500),
                           MXLResult.from_spec(spec), {"male": 1})
        np.testing.assert_array_equal(g.mean, c.mean)

    def test_unknown_group_covariate(self, mxl2, spec82):
        with pytest.raises(ConfigError, match="group.star_sign"):
            group_sweep(design_baseline(spec82), SweepSpec("mask", [0, 1]), mxl2,
                        {"star_sign": 1})

    def test_all_figures(self, mxl2, spec82):
        out = group_sweeps(design_baseline(spec82), mxl2, n=3, n_draws=200)
        assert len(out) == 9
        assert all(len(pair) == 2 for pair in out.values())


class TestOutput:
    def test_csv_and_manifest(self, base72, spec72, tmp_path):
        t = sweep_mnl(base72, SweepSpec("mask", [0, 1], label="demo"), spec72.vector())
        paths = write_tables({"fig2:mask": t}, tmp_path)
        assert [p.name for p in paths] == ["fig2_mask.csv", "sweeps.json"]
        with open(paths[0], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["scenario", "attribute", "grid_value", "mean", "p5", "p50", "p95"]
        assert rows[1][:3] == ["demo", "mask", "0.0"]
        assert float(rows[2][3]) == t.mean[1]

    def test_audit(self):
        t = SensitivityTable("s", "mask", np.array([0.0, 1.0]), np.array([0.40, 0.70]),
                             *(np.zeros(2),) * 3, np.zeros(2, bool))
        ok, bad = baseline_audit({"m": t}, {"m": (0.39, 0.65)}), baseline_audit({"m": t}, {"m": (0.30, 0.65)})
        assert ok[0].ok and not bad[0].ok
        assert ok[0].start_gap == pytest.approx(math.log(0.39 / 0.61) - math.log(0.4 / 0.6))
        with pytest.raises(KeyError):
            baseline_audit({}, {"m": (0.1, 0.2)})
