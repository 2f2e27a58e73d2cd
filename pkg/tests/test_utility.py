import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from choicekit import ConfigError, ModelSpec, TermSpec, expand, load_model_spec, model_spec_from_dict
from choicekit.utility import MixingRule, expand_levels

from conftest import make_dataset, random_levels


def profile_data(rows, pivot=30.0, covariates=None):
    """One respondent whose 8 situations all show the given (2, 6) raw profile pair."""
    lv = np.broadcast_to(np.asarray(rows, float), (1, 8, 2, 6))
    return make_dataset(lv, [[1, 2] * 4], pivots=pivot, covariates=covariates)


class TestExpand:
    def test_main_effect_column(self):
        ds = profile_data([[6, 0, 1, 10, 0, 5], [0, 0, 1, 10, 0, 5]])
        x = expand(ds, ModelSpec((TermSpec.main("crowding"),))).x
        assert x[0, 0, 0, 0] == 6 and x[0, 0, 1, 0] == 0

    def test_attr_interaction(self):
        ds = profile_data([[0, 0, 1, 10, 1, 5], [0, 0, 1, 10, 0, 5]])
        x = expand(ds, ModelSpec((TermSpec.interaction("travel_time", "mask"),))).x
        assert x[0, 0, 0, 0] == pytest.approx(0.30)
        assert x[0, 0, 1, 0] == 0

    def test_covariate_annihilation(self):
        ds = profile_data([[4, 0, 1, 10, 0, 5], [0, 0, 1, 10, 0, 5]],
                          covariates=[{"age_below_40": 0}])
        spec = ModelSpec((TermSpec.with_covariate("crowding", "age_below_40"),))
        assert np.all(expand(ds, spec).x == 0)

    def test_asc_on_alternative_two(self):
        ds = profile_data([[0, 0, 1, 10, 0, 5]] * 2)
        x = expand(ds, ModelSpec((TermSpec.asc(),))).x
        assert np.all(x[..., 0, 0] == 0) and np.all(x[..., 1, 0] == 1)

    def test_interaction_symmetry(self):
        rng = np.random.default_rng(0)
        ds = make_dataset(random_levels(rng, 3), np.ones((3, 8), int))
        a = expand(ds, ModelSpec((TermSpec.interaction("crowding", "vaccine"),))).x
        b = expand(ds, ModelSpec((TermSpec.interaction("vaccine", "crowding"),))).x
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-5, 5))
    def test_difference_invariant_to_shift(self, seed, c):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(4, 8, 2, 6))
        spec = load_model_spec("table7-spec2")
        theta = rng.normal(size=len(spec.terms))
        x = expand_levels(z, spec)
        x_shift = x + c  # same constant added to every alternative's term columns
        dv = (x[..., 0, :] - x[..., 1, :]) @ theta
        dv_shift = (x_shift[..., 0, :] - x_shift[..., 1, :]) @ theta
        np.testing.assert_allclose(dv, dv_shift, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 10))
    def test_linear_in_scaled_attribute(self, seed, c):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(3, 8, 2, 6))
        spec = load_model_spec("table7-spec2")
        z2 = z.copy()
        z2[..., 0] *= c  # crowding
        x, x2 = expand_levels(z, spec), expand_levels(z2, spec)
        for k, t in enumerate(spec.terms):
            factor = c if "crowding" in t.attributes else 1.0
            np.testing.assert_allclose(x2[..., k], factor * x[..., k], rtol=1e-12, atol=1e-12)


class TestModelSpec:
    def test_shipped_configs(self, spec71, spec72, spec81, spec82):
        assert len(spec71.terms) == 7
        assert len(spec72.terms) == 9
        assert spec81.random_names == ("crowding", "travel_time", "cases", "mask", "vaccine")
        assert len(spec82.terms) == 28
        assert spec81.rule("crowding") == MixingRule("lognormal", -1)

    def test_param_layout(self, spec81):
        names = spec81.param_names()
        assert names[:3] == ("asc", "crowding.mu", "crowding.sigma")
        assert len(names) == 13
        np.testing.assert_array_equal(spec81.vector(spec81.unflatten(spec81.vector())),
                                      spec81.vector())

    def test_two_asc_rejected(self):
        with pytest.raises(ConfigError, match="ASC"):
            ModelSpec((TermSpec.asc(), TermSpec.asc(name="asc2")))

    def test_duplicate_interaction_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            ModelSpec((TermSpec.interaction("crowding", "mask"),
                       TermSpec.interaction("mask", "crowding", name="other")))

    def test_random_interaction_rejected(self):
        t = TermSpec.interaction("crowding", "mask")
        with pytest.raises(ConfigError, match="main effects"):
            ModelSpec((t,), {t.name: MixingRule("normal")})

    def test_unknown_attribute(self):
        with pytest.raises(ConfigError, match="unknown attribute"):
            ModelSpec((TermSpec.main("comfort"),))

    def test_config_round_trip(self, spec82):
        again = model_spec_from_dict(json.loads(json.dumps(spec82.to_dict())))
        assert again.term_names == spec82.term_names
        np.testing.assert_array_equal(again.vector(), spec82.vector())

    def test_unknown_key_names_field(self, spec71):
        d = spec71.to_dict()
        d["terms"][2]["atribute"] = "crowding"
        with pytest.raises(ConfigError, match=r"terms\[2\]\.atribute"):
            model_spec_from_dict(d)

    def test_unknown_value_name(self, spec71):
        d = spec71.to_dict()
        d["values"]["crowdng"] = 1.0
        with pytest.raises(ConfigError, match="values.crowdng"):
            model_spec_from_dict(d)

    def test_schema_version_required(self, spec71):
        d = spec71.to_dict()
        d["schema_version"] = 2
        with pytest.raises(ConfigError, match="schema_version"):
            model_spec_from_dict(d)

    def test_missing_covariate_in_data(self, spec82):
        rng = np.random.default_rng(0)
        ds = make_dataset(random_levels(rng, 1), np.ones((1, 8), int))
        with pytest.raises(ConfigError, match="unknown covariate"):
            expand(ds, spec82)
