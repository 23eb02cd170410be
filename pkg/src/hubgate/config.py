"""Deployment configuration: spawner kind, auth, charging, quotas, queues.

Files are YAML (JSON works too, being a YAML subset) with nested sections:

    spawner:
      kind: swarm            # batch | swarm | k8s
    auth:
      mode: static           # static | oauth | open
      static_users: {alice: pw-alice}
    charge:
      mode: COMMUNITY        # COMMUNITY | DELEGATED
      community_account: gw-proj1
    readiness_timeout_s: 300
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

SPAWNER_KINDS = ("batch", "swarm", "k8s")
AUTH_MODES = ("static", "oauth", "open")
CHARGE_MODES = ("COMMUNITY", "DELEGATED")

DEFAULT_QUEUES = (
    {"name": "interactive", "priority": 10, "max_walltime": 480},
    {"name": "general", "priority": 0, "max_walltime": 2880},
)


class ConfigError(ValueError):
    pass


@dataclass
class HubConfig:
    spawner_kind: str = "swarm"
    auth_mode: str = "static"
    static_users: dict[str, str] = field(default_factory=dict)
    oauth_codes: dict[str, str] = field(default_factory=dict)
    charge_mode: str = "COMMUNITY"
    community_account: str | None = "gw-commons"
    charge_identities: dict[str, str] = field(default_factory=dict)
    readiness_timeout_s: int = 300
    admin_users: list[str] = field(default_factory=lambda: ["admin"])
    per_user_quota: int = 10240          # MiB
    export_total: int = 512000           # MiB
    export_root: str | None = None       # default: a per-world temp directory
    replication_k: int = 2
    startup_delay_s: int = 2
    queues: list[dict] = field(default_factory=lambda: [dict(q) for q in DEFAULT_QUEUES])
    token_ttl_s: int = 8 * 3600

    def validate(self) -> None:
        if self.spawner_kind not in SPAWNER_KINDS:
            raise ConfigError(f"spawner.kind must be one of {SPAWNER_KINDS}, "
                              f"got {self.spawner_kind!r}")
        if self.auth_mode not in AUTH_MODES:
            raise ConfigError(f"auth.mode must be one of {AUTH_MODES}, "
                              f"got {self.auth_mode!r}")
        if self.charge_mode not in CHARGE_MODES:
            raise ConfigError(f"charge.mode must be one of {CHARGE_MODES}, "
                              f"got {self.charge_mode!r}")
        if self.charge_mode == "COMMUNITY" and not self.community_account:
            raise ConfigError("charge.mode COMMUNITY requires charge.community_account")
        if self.readiness_timeout_s <= 0:
            raise ConfigError("readiness_timeout_s must be positive")
        if self.per_user_quota <= 0 or self.export_total < self.per_user_quota:
            raise ConfigError("quota policy requires 0 < per_user_quota <= export_total")
        if self.replication_k < 1:
            raise ConfigError("replication_k must be >= 1")
        for queue in self.queues:
            missing = {"name", "priority", "max_walltime"} - set(queue)
            if missing:
                raise ConfigError(f"queue entry missing keys: {sorted(missing)}")

    def with_overrides(self, overrides: dict) -> "HubConfig":
        merged = from_dict(overrides, base=self)
        merged.validate()
        return merged


def from_dict(data: dict, base: HubConfig | None = None) -> HubConfig:
    """Nested config mapping -> HubConfig; unknown keys are rejected."""
    config = replace(base) if base is not None else HubConfig()
    if base is not None:
        config.static_users = dict(base.static_users)
        config.oauth_codes = dict(base.oauth_codes)
        config.charge_identities = dict(base.charge_identities)
        config.admin_users = list(base.admin_users)
        config.queues = [dict(q) for q in base.queues]

    data = dict(data or {})
    spawner = data.pop("spawner", None)
    if spawner is not None:
        _take(config, "spawner_kind", spawner, "kind", str)
        _reject_extra("spawner", spawner)
    auth = data.pop("auth", None)
    if auth is not None:
        _take(config, "auth_mode", auth, "mode", str)
        _take(config, "static_users", auth, "static_users", dict)
        _take(config, "oauth_codes", auth, "oauth_codes", dict)
        _take(config, "admin_users", auth, "admin_users", list)
        _reject_extra("auth", auth)
    charge = data.pop("charge", None)
    if charge is not None:
        _take(config, "charge_mode", charge, "mode", str)
        _take(config, "community_account", charge, "community_account", str)
        _take(config, "charge_identities", charge, "identities", dict)
        _reject_extra("charge", charge)
    storage = data.pop("storage", None)
    if storage is not None:
        _take(config, "per_user_quota", storage, "per_user_quota", int)
        _take(config, "export_total", storage, "export_total", int)
        _take(config, "export_root", storage, "export_root", str)
        _take(config, "replication_k", storage, "replication_k", int)
        _reject_extra("storage", storage)
    batch = data.pop("batch", None)
    if batch is not None:
        _take(config, "queues", batch, "queues", list)
        _reject_extra("batch", batch)
    _take(config, "readiness_timeout_s", data, "readiness_timeout_s", int)
    _take(config, "startup_delay_s", data, "startup_delay_s", int)
    _take(config, "token_ttl_s", data, "token_ttl_s", int)
    _reject_extra("config", data)
    return config


def _take(config: HubConfig, attr: str, section: dict, key: str, kind: type) -> None:
    if key not in section:
        return
    value = section.pop(key)
    if not isinstance(value, kind):
        raise ConfigError(f"{key} must be {kind.__name__}, got {type(value).__name__}")
    setattr(config, attr, value)


def _reject_extra(section_name: str, section: dict) -> None:
    if section:
        raise ConfigError(f"unknown {section_name} keys: {sorted(section)}")


def load_config(path: str | Path) -> HubConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    config = from_dict(data)
    config.validate()
    return config
