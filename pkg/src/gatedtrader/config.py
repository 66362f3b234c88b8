"""Session configuration.

Defaults reproduce the fixed experiment parameters (60 s polling, 2.0 sigma
threshold, 30-bar window, 0.60 confidence gate, 2% max risk, $500 max size,
300 s per-asset cooldown, 1800 s inference cooldown). A config file is plain
``key = value`` lines under a ``[session]`` header; unknown keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class TriggerConfig:
    z_threshold: float = 2.0
    return_floor: float = 0.003
    window: int = 30
    min_warmup: int = 10
    eps: float = 1e-12


@dataclass(frozen=True)
class DivergenceConfig:
    kappa: float = 0.5
    alpha: float = 0.5
    reference_asset: str = "BTC"
    correlation_on: str = "prices"


@dataclass(frozen=True)
class RiskConfig:
    confidence_gate: float = 0.60
    max_risk_pct: float = 2.0
    max_size_usd: float = 500.0

    @property
    def max_risk_fraction(self) -> float:
        return self.max_risk_pct / 100.0


@dataclass
class SessionConfig:
    # fixed experiment parameters
    polling_interval_s: int = 60
    z_threshold: float = 2.0
    window: int = 30
    confidence_gate: float = 0.60
    max_risk_pct: float = 2.0
    max_size_usd: float = 500.0
    asset_cooldown_s: int = 300
    igp_cooldown_s: int = 1800

    # trigger / divergence extras
    return_floor: float = 0.003
    min_warmup: int = 10
    kappa: float = 0.5
    alpha: float = 0.5
    reference_asset: str = "BTC"
    correlation_on: str = "prices"

    # engine
    mode: str = "DRY_RUN"
    seed: int = 42
    assets: list[str] = field(default_factory=list)
    replay_path: str = ""
    journal_path: str = "session.db"
    memory_k: int = 5
    candles: int = 20
    watchdog_s: int = 300
    backend_timeout_s: float = 120.0

    # deliberation backend
    backend: str = "mock"
    backend_mode: str = "normal"
    backend_url: str = "http://localhost:11434"
    backend_api: str = "ollama"
    backend_model: str = "qwen3.5:9b"
    agent_name: str = "Desk"

    # network channels
    public_endpoint: str = ""
    private_endpoint: str = ""
    private_proxy: str = ""
    exchange_health_url: str = ""
    safety_ttl_s: int = 10
    probe_timeout_s: float = 5.0

    def trigger(self) -> TriggerConfig:
        return TriggerConfig(
            z_threshold=self.z_threshold,
            return_floor=self.return_floor,
            window=self.window,
            min_warmup=self.min_warmup,
        )

    def divergence(self) -> DivergenceConfig:
        return DivergenceConfig(
            kappa=self.kappa,
            alpha=self.alpha,
            reference_asset=self.reference_asset,
            correlation_on=self.correlation_on,
        )

    def risk(self) -> RiskConfig:
        return RiskConfig(
            confidence_gate=self.confidence_gate,
            max_risk_pct=self.max_risk_pct,
            max_size_usd=self.max_size_usd,
        )

    def validate(self) -> "SessionConfig":
        if self.mode not in ("DRY_RUN", "LIVE"):
            raise ConfigError(f"mode must be DRY_RUN or LIVE, got {self.mode!r}")
        positive = (
            "polling_interval_s", "z_threshold", "window", "confidence_gate",
            "max_risk_pct", "max_size_usd", "asset_cooldown_s", "igp_cooldown_s",
            "return_floor", "kappa", "memory_k", "candles", "watchdog_s",
            "backend_timeout_s", "safety_ttl_s", "probe_timeout_s",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.window < 2:
            raise ConfigError("window must be at least 2")
        if self.correlation_on not in ("prices", "returns"):
            raise ConfigError("correlation_on must be 'prices' or 'returns'")
        if self.backend not in ("mock", "remote"):
            raise ConfigError("backend must be 'mock' or 'remote'")
        if self.backend_api not in ("ollama", "openai"):
            raise ConfigError("backend_api must be 'ollama' or 'openai'")
        if self.mode == "LIVE" and not self.private_endpoint:
            raise ConfigError("LIVE mode needs private_endpoint")
        return self

    # -- loading ----------------------------------------------------------

    def with_overrides(self, overrides: dict[str, str]) -> "SessionConfig":
        fields = {f.name: f for f in dataclasses.fields(self)}
        values = {}
        for key, raw in overrides.items():
            key = key.strip()
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(fields[key], raw)
        return dataclasses.replace(self, **values)


ENV_OVERRIDES = {
    "GATEDTRADER_SEED": "seed",
    "GATEDTRADER_PUBLIC_ENDPOINT": "public_endpoint",
    "GATEDTRADER_PRIVATE_ENDPOINT": "private_endpoint",
    "GATEDTRADER_PRIVATE_PROXY": "private_proxy",
    "GATEDTRADER_BACKEND_URL": "backend_url",
}


def _coerce(f: dataclasses.Field, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [a.strip() for a in raw.split(",") if a.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad value for {f.name}: {raw!r}") from exc
    return raw


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, str] | None = None,
                environ: dict[str, str] | None = None) -> SessionConfig:
    """Build a config from defaults, an optional file, env vars, then CLI overrides."""
    cfg = SessionConfig()
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
        if "[session]" not in text:
            text = "[session]\n" + text
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cfg.with_overrides(dict(parser["session"]))
    env = os.environ if environ is None else environ
    env_values = {key: env[var] for var, key in ENV_OVERRIDES.items() if env.get(var)}
    if env_values:
        cfg = cfg.with_overrides(env_values)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg.validate()
