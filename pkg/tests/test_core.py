import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdpabs.core import (
    AbstractionConfig, ConfigError, MetricWeights, NormalizationBounds,
    SemanticDim, SemanticMapping, denormalize, load_experiment_config,
    normalize, parse_experiment_config, validate_config, validate_weights,
)


def table_defaults():
    # the published hyperparameter set these tools ship as documentation
    return AbstractionConfig(d_min=(0.010,), d_max=(0.050,), n_min=0.005,
                             e_mean=0.005, e_max=0.01, gamma=0.95)


class TestValidateConfig:
    def test_documented_defaults_are_valid(self):
        assert validate_config(table_defaults()) == []

    def test_gamma_boundary(self):
        cfg = AbstractionConfig(gamma=1.0)
        violations = validate_config(cfg)
        assert any("gamma" in v for v in violations)

    def test_d_ordering(self):
        cfg = AbstractionConfig(d_min=(0.005,), d_max=(0.001,))
        violations = validate_config(cfg)
        assert any("d_min <= d_max" in v for v in violations)

    def test_total_on_garbage(self):
        cfg = AbstractionConfig(d_min=(-1.0,), d_max=(2.0,), n_min=3.0,
                                e_mean=0.5, e_max=0.1,
                                reduction_band=(0.9, 0.1), gamma=-2.0,
                                delta=7.0, k_method="nope", max_iters=0)
        violations = validate_config(cfg)
        assert len(violations) >= 7

    def test_weights_temporal_window_conflict(self):
        bad = MetricWeights(c_t=1.0, tau_t=3)
        assert any("triangle" in v for v in validate_weights(bad))
        assert validate_weights(MetricWeights(c_t=1.0, tau_t=0)) == []
        assert validate_weights(MetricWeights(c_t=0.0, tau_t=3)) == []


class TestNormalize:
    BOUNDS = NormalizationBounds(("v",), (0.0,), (10.0,))

    def test_lower_bound(self):
        assert normalize([0.0], self.BOUNDS)[0] == 0.0

    def test_upper_bound(self):
        assert normalize([10.0], self.BOUNDS)[0] == 1.0

    def test_affine_map(self):
        # hand computation: (2.5 - 0) / (10 - 0)
        assert normalize([2.5], self.BOUNDS)[0] == 0.25

    def test_clamping(self):
        assert normalize([-5.0], self.BOUNDS)[0] == 0.0
        assert normalize([15.0], self.BOUNDS)[0] == 1.0

    def test_degenerate_dimension_named(self):
        bad = NormalizationBounds(("speed", "gap"), (0.0, 5.0), (1.0, 5.0))
        with pytest.raises(ValueError, match="gap"):
            normalize([0.5, 5.0], bad)

    @given(st.lists(st.floats(min_value=-50.0, max_value=90.0), min_size=1, max_size=8))
    def test_round_trip_identity(self, xs):
        bounds = NormalizationBounds(
            tuple(f"f{i}" for i in range(len(xs))),
            tuple(-50.0 for _ in xs), tuple(90.0 for _ in xs))
        back = denormalize(normalize(xs, bounds), bounds)
        assert np.all(np.abs(back - np.asarray(xs)) <= 1e-12 * 140.0)


class TestSemanticMapping:
    def test_expression_evaluation(self):
        mapping = SemanticMapping((SemanticDim("rel", "v_lead - v_ego", "m/s"),
                                   SemanticDim("gap", "gap", "m")))
        feats = np.array([[10.0, 12.0, 30.0], [20.0, 15.0, 40.0]])
        out = mapping.evaluate(("v_ego", "v_lead", "gap"), feats)
        assert out.tolist() == [[2.0, 30.0], [-5.0, 40.0]]

    def test_unknown_feature_rejected(self):
        mapping = SemanticMapping((SemanticDim("x", "speed + 1", ""),))
        with pytest.raises(ConfigError, match="speed"):
            mapping.evaluate(("v_ego",), np.zeros((1, 1)))

    def test_disallowed_syntax_rejected(self):
        mapping = SemanticMapping((SemanticDim("x", "__import__('os')", ""),))
        with pytest.raises(ConfigError):
            mapping.evaluate(("v_ego",), np.zeros((1, 1)))

    def test_whitelisted_function(self):
        mapping = SemanticMapping((SemanticDim("mag", "sqrt(a * a + b * b)", ""),))
        out = mapping.evaluate(("a", "b"), np.array([[3.0, 4.0]]))
        assert out[0, 0] == 5.0


CONFIG_DOC = {
    "name": "unit",
    "semantics": [{"name": "speed", "expr": "v_ego", "unit": "m/s"}],
    "actions": [{"name": "accel", "low": -8.0, "high": 3.0, "granularity": 0.5}],
    "abstraction": {"d_min": [0.01], "d_max": [0.05], "n_min": 0.005},
    "weights": {"c_d": 1e6},
}


class TestConfigDocument:
    def test_parse_roundtrip(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(CONFIG_DOC), encoding="utf-8")
        cfg = load_experiment_config(p)
        assert cfg.actions.counts == (22,)
        assert cfg.abstraction.d_max == (0.05,)
        assert cfg.split_ratio == (8, 2)

    def test_unknown_top_level_key_rejected(self):
        doc = dict(CONFIG_DOC, extra_knob=1)
        with pytest.raises(ConfigError, match="extra_knob"):
            parse_experiment_config(doc)

    def test_unknown_nested_key_rejected(self):
        doc = dict(CONFIG_DOC, abstraction={"d_min": [0.01], "typo_field": 2})
        with pytest.raises(ConfigError, match="typo_field"):
            parse_experiment_config(doc)

    def test_invalid_values_rejected(self):
        doc = dict(CONFIG_DOC, abstraction={"gamma": 1.5})
        with pytest.raises(ConfigError, match="gamma"):
            parse_experiment_config(doc)

    def test_missing_sections(self):
        with pytest.raises(ConfigError, match="semantics"):
            parse_experiment_config({"actions": CONFIG_DOC["actions"]})
