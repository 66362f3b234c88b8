import pytest

from gatedtrader.config import SessionConfig, load_config
from gatedtrader.errors import ConfigError


def test_defaults_are_the_fixed_parameters():
    c = load_config(environ={})
    assert (c.polling_interval_s, c.z_threshold, c.window) == (60, 2.0, 30)
    assert (c.confidence_gate, c.max_risk_pct, c.max_size_usd) == (0.60, 2.0, 500.0)
    assert (c.asset_cooldown_s, c.igp_cooldown_s) == (300, 1800)
    assert c.mode == "DRY_RUN" and c.risk().max_risk_fraction == 0.02


def test_file_env_and_override_precedence(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("seed = 1\nassets = BTC, ETH\nalpha = 0.25\n")
    c = load_config(p, environ={})
    assert (c.seed, c.assets, c.alpha) == (1, ["BTC", "ETH"], 0.25)
    c = load_config(p, environ={"GATEDTRADER_SEED": "2"})
    assert c.seed == 2
    c = load_config(p, {"seed": "3"}, environ={"GATEDTRADER_SEED": "2"})
    assert c.seed == 3


def test_header_optional_and_errors(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("[session]\nwindow = 20\n")
    assert load_config(p, environ={}).window == 20
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        load_config(overrides={"nope": "1"}, environ={})
    with pytest.raises(ConfigError):
        load_config(overrides={"window": "abc"}, environ={})
    with pytest.raises(ConfigError):
        load_config(overrides={"mode": "LIVE"}, environ={})
    with pytest.raises(ConfigError):
        SessionConfig(alpha=1.5).validate()
