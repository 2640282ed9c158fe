import math

import pytest

from dlczsim.config import (
    SCHEMA,
    build_experiment,
    canonical_text,
    config_hash,
    default_config,
    parse_config_text,
    schema_help,
)
from dlczsim.errors import ConfigError


def test_defaults_parse_and_build():
    cfg = default_config()
    exp = build_experiment(cfg)
    assert exp.gradient_on
    assert cfg.run_scenario == "rephase"


def test_value_with_unit_conversion():
    cfg = parse_config_text("[sequence]\nreversal_latency = 3 us\n",
                            apply_env=False)
    assert cfg.sequence_reversal_latency == pytest.approx(3e-6)


def test_gradient_in_gauss_per_cm():
    cfg = parse_config_text("[gradient]\namplitude = 20 G_per_cm\n",
                            apply_env=False)
    assert cfg.gradient_amplitude == pytest.approx(0.2)


def test_list_with_trailing_unit():
    cfg = parse_config_text("[multiplex]\nwrite_offsets = 0, 600 ns\n",
                            apply_env=False)
    assert cfg.multiplex_write_offsets == pytest.approx((0.0, 600e-9))


def test_dimensionless_list():
    cfg = parse_config_text("[classes]\nweights = 0.8, 0.2\n", apply_env=False)
    assert cfg.classes_weights == (0.8, 0.2)


def test_missing_unit_is_an_error():
    with pytest.raises(ConfigError) as err:
        parse_config_text("[sequence]\nreversal_latency = 3\n", apply_env=False)
    assert "sequence.reversal_latency" in str(err.value)
    assert err.value.line == 2


def test_unknown_key_rejected_with_line():
    with pytest.raises(ConfigError) as err:
        parse_config_text("[sequence]\nbogus = 1\n", apply_env=False)
    assert err.value.line == 2


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("[nonsense]\nx = 1\n", apply_env=False)


def test_negative_temperature_names_the_field():
    with pytest.raises(ConfigError) as err:
        parse_config_text("[ensemble]\ntemperature = -10 uK\n", apply_env=False)
    assert "ensemble" in str(err.value)
    assert "temperature" in str(err.value)


def test_infinite_lifetime_allowed():
    cfg = parse_config_text("[retrieval]\nextrinsic_lifetime = inf s\n",
                            apply_env=False)
    assert math.isinf(cfg.retrieval_extrinsic_lifetime)


def test_env_override(monkeypatch):
    monkeypatch.setenv("DLCZSIM_RUN_GLOBAL_SEED", "777")
    cfg = parse_config_text("", apply_env=True)
    assert cfg.run_global_seed == 777


def test_canonical_roundtrip_preserves_hash():
    cfg = default_config()
    text = canonical_text(cfg)
    again = parse_config_text(text, apply_env=False)
    assert config_hash(again) == config_hash(cfg)


def test_replace_rejects_unknown_attribute():
    cfg = default_config()
    with pytest.raises(ConfigError):
        cfg.replace(not_a_field=1)


def test_schema_help_lists_every_field_with_units():
    text = schema_help()
    for spec in SCHEMA:
        assert spec.key in text
    assert "ns" in text and "uK" in text and "G_per_cm" in text


def test_target_pw_of_defaults_is_one_percent():
    cfg = default_config()
    assert cfg.target_pw == pytest.approx(0.01, abs=1e-6)


def test_comments_and_blank_lines_ignored():
    cfg = parse_config_text(
        "# a comment\n\n[run]\nscenario = standard  # inline\n",
        apply_env=False)
    assert cfg.run_scenario == "standard"
