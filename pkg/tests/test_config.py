"""TOML configuration parsing and validation."""

import math

import pytest

from hemodesign.config import (
    ConfigError,
    default_config,
    load_config,
    parse_config,
)
from hemodesign.fitting import FitSettings
from hemodesign.priors import GLOBAL_NAMES, prior_profile


class TestDefaults:
    def test_empty_document_gives_library_defaults(self):
        cfg = parse_config({})
        assert cfg.settings == FitSettings()
        assert cfg.design is None
        assert cfg.truth is None
        assert cfg.grid == "reference"
        assert cfg.budget is None
        assert cfg.objective == "joint"
        assert cfg.n_datasets == 5
        assert cfg.workers == 1
        assert cfg.seed == 0

    def test_default_priors_are_synthetic_profile(self):
        cfg = default_config()
        ref = prior_profile("synthetic")
        for name in GLOBAL_NAMES:
            assert cfg.priors[name].m == ref[name].m
            assert cfg.priors[name].s == ref[name].s

    def test_top_level_must_be_table(self):
        with pytest.raises(ConfigError):
            parse_config([1, 2])


class TestModelAndSampler:
    def test_model_section_reaches_settings(self):
        cfg = parse_config({"model": {"feedback": False, "gain_scale": 1e-5}})
        assert cfg.settings.feedback is False
        assert cfg.settings.gain_scale == 1e-5

    def test_sampler_section_maps_every_field(self):
        cfg = parse_config(
            {
                "sampler": {
                    "chains": 4,
                    "warmup": 500,
                    "draws": 1000,
                    "target_accept": 0.9,
                    "max_tree_depth": 12,
                    "metric": "diag",
                    "algorithm": "rwm",
                    "noncentered": False,
                    "ode_rtol": 1e-7,
                    "ode_atol": 1e-9,
                    "warm_start": False,
                }
            }
        )
        s = cfg.settings
        assert s.chains == 4
        assert s.warmup == 500
        assert s.draws == 1000
        assert s.target_accept == 0.9
        assert s.max_tree_depth == 12
        assert s.metric == "diag"
        assert s.algorithm == "rwm"
        assert s.noncentered is False
        assert s.ode_rtol == 1e-7
        assert s.ode_atol == 1e-9
        assert s.warm_start is False

    @pytest.mark.parametrize(
        "section",
        [
            {"chains": 1},
            {"chains": "two"},
            {"warmup": 0},
            {"draws": 2},
            {"target_accept": 1.2},
            {"target_accept": 0.0},
            {"metric": "full"},
            {"algorithm": "gibbs"},
            {"noncentered": "yes"},
            {"ode_rtol": -1e-6},
            {"warm_start": 1},
        ],
    )
    def test_bad_sampler_values_are_rejected(self, section):
        with pytest.raises(ConfigError):
            parse_config({"sampler": section})

    def test_gain_scale_must_be_positive(self):
        with pytest.raises(ConfigError):
            parse_config({"model": {"gain_scale": 0.0}})

    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigError, match="chanis"):
            parse_config({"sampler": {"chanis": 4}})

    def test_unknown_section_is_named(self):
        with pytest.raises(ConfigError, match="smapler"):
            parse_config({"smapler": {"chains": 4}})


class TestPriors:
    def test_named_profile(self):
        cfg = parse_config({"priors": {"profile": "realdata"}})
        ref = prior_profile("realdata")
        assert cfg.priors["mu_mpp"].m == ref["mu_mpp"].m

    def test_unknown_profile(self):
        with pytest.raises(ConfigError, match="profile"):
            parse_config({"priors": {"profile": "bogus"}})

    def test_explicit_quantiles(self):
        table = {
            "p0": [0.50, 0.52, 0.60],
            "eta1": [1.0, 4.0, 16.0],
            "eta2": [1.0, 4.0, 16.0],
            "gamma1": [1.0, 3.0, 9.0],
            "gamma2": [1.0, 3.0, 9.0],
            "sigma_t": [0.01, 0.05, 0.25],
            "sigma_b": [0.01, 0.05, 0.25],
            "mu_hsc": [500, 700, 980],
            "mu_mpp": [1400, 2000, 2860],
        }
        cfg = parse_config({"priors": {"quantiles": table}})
        assert cfg.priors["eta1"].m == pytest.approx(math.log(4.0))

    def test_profile_and_quantiles_are_exclusive(self):
        with pytest.raises(ConfigError, match="not both"):
            parse_config(
                {"priors": {"profile": "synthetic", "quantiles": {"p0": [0.5, 0.52, 0.6]}}}
            )

    def test_missing_parameter_is_named(self):
        with pytest.raises(ConfigError, match="mu_mpp"):
            parse_config({"priors": {"quantiles": {"p0": [0.5, 0.52, 0.6]}}})

    def test_unknown_parameter_is_named(self):
        full = {n: [1.0, 2.0, 3.0] for n in GLOBAL_NAMES}
        full["p0"] = [0.5, 0.52, 0.6]
        full["zeta"] = [1, 2, 3]
        with pytest.raises(ConfigError, match="zeta"):
            parse_config({"priors": {"quantiles": full}})

    def test_non_increasing_triple_is_rejected(self):
        full = {n: [1.0, 2.0, 3.0] for n in GLOBAL_NAMES}
        full["p0"] = [0.5, 0.52, 0.6]
        full["eta1"] = [5.0, 2.0, 3.0]
        with pytest.raises(ConfigError, match="eta1"):
            parse_config({"priors": {"quantiles": full}})

    def test_triple_must_have_three_numbers(self):
        full = {n: [1.0, 2.0, 3.0] for n in GLOBAL_NAMES}
        full["p0"] = [0.5, 0.52, 0.6]
        full["eta2"] = [1.0, 2.0]
        with pytest.raises(ConfigError, match="eta2"):
            parse_config({"priors": {"quantiles": full}})


class TestDesign:
    def test_days_with_scalar_replicates_broadcast(self):
        cfg = parse_config({"design": {"days": [0, 2, 6], "replicates": 3}})
        assert cfg.design.days == (0.0, 2.0, 6.0)
        assert cfg.design.replicates == (3, 3, 3)

    def test_days_with_replicate_list(self):
        cfg = parse_config({"design": {"days": [0, 6], "replicates": [7, 2]}})
        assert cfg.design.replicates == (7, 2)

    def test_day_beyond_horizon_names_the_day(self):
        with pytest.raises(ConfigError, match="day 7"):
            parse_config({"design": {"days": [0, 3, 7], "replicates": 3}})

    def test_days_must_start_at_zero(self):
        with pytest.raises(ConfigError, match="must be 0"):
            parse_config({"design": {"days": [1, 3], "replicates": 2}})

    def test_replicates_without_days(self):
        with pytest.raises(ConfigError, match="without days"):
            parse_config({"design": {"replicates": 3}})

    def test_days_without_replicates(self):
        with pytest.raises(ConfigError, match="replicates"):
            parse_config({"design": {"days": [0, 2]}})

    def test_search_settings(self):
        cfg = parse_config(
            {"design": {"budget": 20, "objective": "gamma1", "n_datasets": 8}}
        )
        assert cfg.budget == 20
        assert cfg.objective == "gamma1"
        assert cfg.n_datasets == 8

    @pytest.mark.parametrize(
        "section",
        [
            {"budget": 0},
            {"budget": True},
            {"objective": "posterior"},
            {"n_datasets": 1},
            {"grid": "dense"},
        ],
    )
    def test_bad_search_settings(self, section):
        with pytest.raises(ConfigError):
            parse_config({"design": section})


class TestComputeAndTruth:
    def test_compute_section(self):
        cfg = parse_config({"compute": {"workers": 4, "seed": 99}})
        assert cfg.workers == 4
        assert cfg.seed == 99

    @pytest.mark.parametrize("section", [{"workers": 0}, {"seed": -1}, {"seed": 1.5}])
    def test_bad_compute_values(self, section):
        with pytest.raises(ConfigError):
            parse_config({"compute": section})

    def _truth_table(self, **overrides):
        table = {
            "p0": 0.53,
            "eta1": 9.0,
            "eta2": 8.4,
            "gamma1": 2.0,
            "gamma2": 4.0,
            "sigma_t": 0.1,
            "sigma_b": 0.1,
            "mu_hsc": 650.0,
            "mu_mpp": 2000.0,
        }
        table.update(overrides)
        return table

    def test_truth_section_builds_parameter_bundle(self):
        cfg = parse_config({"truth": self._truth_table()})
        assert cfg.truth.theta.p0 == 0.53
        assert cfg.truth.theta.gamma2 == 4.0
        assert cfg.truth.mu[0, 1] == 2000.0
        assert cfg.truth.sigma_t == 0.1

    def test_truth_missing_key_is_named(self):
        table = self._truth_table()
        del table["eta2"]
        with pytest.raises(ConfigError, match="eta2"):
            parse_config({"truth": table})

    def test_truth_invalid_value_is_rejected(self):
        with pytest.raises(ConfigError, match="p0"):
            parse_config({"truth": self._truth_table(p0=0.4)})

    def test_truth_non_number_is_rejected(self):
        with pytest.raises(ConfigError, match="mu_hsc"):
            parse_config({"truth": self._truth_table(mu_hsc="big")})


class TestLoadConfig:
    def test_round_trip_through_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(
            "[design]\ndays = [0, 2, 6]\nreplicates = 4\n\n"
            "[compute]\nseed = 7\n\n[sampler]\nchains = 3\n"
        )
        cfg = load_config(path)
        assert cfg.design.n_mice == 12
        assert cfg.seed == 7
        assert cfg.settings.chains == 3

    def test_toml_syntax_error_carries_path(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[sampler\nchains = 3\n")
        with pytest.raises(ConfigError, match="run.toml"):
            load_config(path)

    def test_validation_error_carries_path(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[sampler]\nchains = 1\n")
        with pytest.raises(ConfigError, match="run.toml"):
            load_config(path)

    def test_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_config(tmp_path / "absent.toml")
