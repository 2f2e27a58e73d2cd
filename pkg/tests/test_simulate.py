import numpy as np
import pytest
from scipy import stats

from choicekit import (ModelSpec, SimConfig, TermSpec, load_responses, simulate_choice_probabilities,
                       simulate_dataset, write_responses)
from choicekit.mnl import choice_probabilities
from choicekit.mxl import mnl_equivalent
from choicekit.utility import expand_levels


def set_counts(ds, design):
    """Times alternative 1 was chosen, and times shown, per (block, situation)."""
    ones = np.zeros((design.blocks, design.situations_per_block))
    shown = np.zeros_like(ones)
    for r, row in zip(ds.respondents, ds.chosen):
        ones[r.block - 1] += row == 1
        shown[r.block - 1] += 1
    return ones, shown


def gof_pvalue(ones, shown, p1):
    mask = shown > 0
    exp1, exp2 = shown * p1, shown * (1 - p1)
    chi = ((ones - exp1) ** 2 / exp1 + ((shown - ones) - exp2) ** 2 / exp2)[mask].sum()
    return stats.chi2.sf(chi, mask.sum())


class TestSimulateDataset:
    def test_zero_coefficients_balanced(self, design):
        spec = ModelSpec(tuple(TermSpec.main(a) for a in design.schema.names),
                         values={a: 0.0 for a in design.schema.names})
        ds = simulate_dataset(SimConfig(2000, design, spec, seed=1))
        n = ds.n_observations
        share = float(np.mean(ds.chosen == 1))
        assert abs(share - 0.5) < 3 * np.sqrt(0.25 / n)

    def test_dominant_mask(self, design):
        spec = ModelSpec((TermSpec.main("mask"),), values={"mask": 10.0})
        ds = simulate_dataset(SimConfig(500, design, spec, seed=2))
        m = ds.levels[..., 4]
        differ = m[..., 0] != m[..., 1]
        masked = np.where(m[..., 0] == 1, 1, 2)
        assert np.mean(ds.chosen[differ] == masked[differ]) > 0.99

    def test_frequencies_match_probabilities(self, design, spec71):
        cfg = SimConfig(50_000, design, spec71, pivot_times=(30.0,), seed=3)
        p1 = simulate_choice_probabilities(cfg)[..., 0]
        ones, shown = set_counts(simulate_dataset(cfg), design)
        assert gof_pvalue(ones, shown, p1) > 0.01

    def test_mixed_frequencies_match_probabilities(self, design, spec81):
        cfg = SimConfig(20_000, design, spec81, seed=4)
        p1 = simulate_choice_probabilities(cfg, R=50_000, seed=9)[..., 0]
        ones, shown = set_counts(simulate_dataset(cfg), design)
        assert gof_pvalue(ones, shown, p1) > 0.01

    def test_gumbel_and_inversion_agree(self, design, spec81):
        a = simulate_dataset(SimConfig(20_000, design, spec81, seed=5))
        b = simulate_dataset(SimConfig(20_000, design, spec81, seed=6, method="inversion"))
        oa, sa = set_counts(a, design)
        ob, sb = set_counts(b, design)
        chi = 0.0
        for k in np.ndindex(oa.shape):
            table = [[oa[k], sa[k] - oa[k]], [ob[k], sb[k] - ob[k]]]
            chi += stats.chi2_contingency(table, correction=False)[0]
        assert stats.chi2.sf(chi, oa.size) > 0.01

    def test_deterministic(self, design, spec81):
        a = simulate_dataset(SimConfig(50, design, spec81, seed=7))
        b = simulate_dataset(SimConfig(50, design, spec81, seed=7))
        assert np.array_equal(a.chosen, b.chosen) and a.respondents == b.respondents

    def test_respondents_independent_of_sample_size(self, design, spec82):
        small = simulate_dataset(SimConfig(10, design, spec82, seed=8))
        large = simulate_dataset(SimConfig(40, design, spec82, seed=8))
        assert small.respondents == large.respondents[:10]
        assert np.array_equal(small.chosen, large.chosen[:10])

    def test_covariates_follow_rates(self, design, spec82):
        ds = simulate_dataset(SimConfig(4000, design, spec82, seed=9,
                                        covariate_rates={"male": 0.2}))
        male = np.mean([r.covariates["male"] for r in ds.respondents])
        assert abs(male - 0.2) < 3 * np.sqrt(0.16 / 4000)
        assert set(spec82.covariates) <= set(ds.covariate_names)

    def test_csv_round_trip(self, design, spec81, tmp_path):
        ds = simulate_dataset(SimConfig(30, design, spec81, seed=10))
        write_responses(ds, tmp_path / "c.csv", tmp_path / "r.csv")
        back = load_responses(tmp_path / "c.csv", tmp_path / "r.csv", design=design)
        assert back.ids == ds.ids
        np.testing.assert_array_equal(back.chosen, ds.chosen)
        np.testing.assert_array_equal(back.levels, ds.levels)

    @pytest.mark.parametrize("kw", [{"n_respondents": 0}, {"pivot_weights": (0.5, 0.6, 0, 0)},
                                    {"method": "probit"}])
    def test_invalid_config(self, design, spec71, kw):
        args = {"n_respondents": 5, "design": design, "spec": spec71, **kw}
        with pytest.raises(ValueError):
            SimConfig(**args)


class TestChoiceProbabilities:
    def test_sigma_zero_is_mnl(self, design, spec81):
        vals = dict(spec81.values)
        for n in spec81.random_names:
            vals[n] = {"mu": vals[n]["mu"], "sigma": 0.0}
        spec = spec81.with_values(vals)
        cfg = SimConfig(1, design, spec, pivot_times=(45.0,))
        beta = mnl_equivalent(spec, spec.vector())
        x = expand_levels(design.schema.transform(design.levels, 45.0), spec)
        np.testing.assert_allclose(simulate_choice_probabilities(cfg, R=7),
                                   choice_probabilities(x @ beta), rtol=0, atol=1e-15)

    def test_sums_to_one(self, design, spec82):
        p = simulate_choice_probabilities(SimConfig(1, design, spec82), R=500)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    def test_pivot_mixture_is_weighted_average(self, design, spec71):
        both = SimConfig(1, design, spec71, pivot_times=(15.0, 60.0), pivot_weights=(0.25, 0.75))
        a = simulate_choice_probabilities(SimConfig(1, design, spec71, pivot_times=(15.0,)))
        b = simulate_choice_probabilities(SimConfig(1, design, spec71, pivot_times=(60.0,)))
        np.testing.assert_allclose(simulate_choice_probabilities(both), 0.25 * a + 0.75 * b,
                                   atol=1e-14)
