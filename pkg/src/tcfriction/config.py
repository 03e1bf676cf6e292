"""Layered pipeline configuration: flags > config file > environment > defaults.

The config file is INI with a single ``[tcfriction]`` section of ``key = value``
lines (see ``fixtures/example.ini``). Environment variables use the upper-cased
key with a ``TCFRICTION_`` prefix. The backend credential is read only from
``TCFRICTION_API_KEY``.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .ingest import HealthFilterConfig, RoleGroup
from .scorer import ScorerPolicy

ENV_PREFIX = "TCFRICTION_"
SECRET_ENV = "TCFRICTION_API_KEY"
CONFIG_ENV = "TCFRICTION_CONFIG"
SECTION = "tcfriction"

STAGES = ("ingest", "score", "aggregate", "analyze", "report", "run")
BACKEND_STAGES = ("score", "run")

# Settings that do not change results; left out of provenance so packs stay
# byte-identical when only these differ.
_EXECUTION_ONLY = ("work_dir", "output_dir", "cache_path", "max_in_flight", "request_timeout",
                   "statements_path", "ratings_path")


def _split_list(v):
    return [s.strip() for s in v.split(",") if s.strip()] if isinstance(v, str) else list(v)


@dataclass
class PipelineConfig:
    statements_path: Path | None = None
    ratings_path: Path | None = None
    work_dir: Path = Path("work")
    output_dir: Path = Path("pack")
    cache_path: Path | None = None
    included_soc_prefixes: list = field(default_factory=lambda: ["29-", "31-"])
    role_map: list = field(default_factory=lambda: ["29-=Clinician", "31-=NonClinician"])
    role_overrides: dict = field(default_factory=dict)
    max_attempts: int = 3
    request_timeout: float = 60.0
    max_in_flight: int = 4
    backoff_base: float = 1.0
    backoff_multiplier: float = 2.0
    transport_retries: int = 3
    max_output_tokens: int = 400
    backend: str = "remote"
    endpoint: str = ""
    deployment: str = ""
    api_version: str = ""
    mw_method: str = "auto"
    tci_cut: float | None = None
    sd_cut: float | None = None
    headline_pooling: str = "rows"
    figure: bool = True
    api_key: str | None = field(default=None, repr=False)

    @property
    def resolved_cache_path(self) -> Path:
        return self.cache_path or self.work_dir / "cache.jsonl"

    def health_filter(self) -> HealthFilterConfig:
        rules = []
        for item in self.role_map:
            prefix, _, group = item.partition("=")
            rules.append((prefix, RoleGroup(group)))
        return HealthFilterConfig(
            included_soc_prefixes=list(self.included_soc_prefixes),
            role_map=rules,
            per_occupation_overrides={k: RoleGroup(v) for k, v in self.role_overrides.items()},
        )

    def policy(self) -> ScorerPolicy:
        return ScorerPolicy(
            max_attempts=self.max_attempts,
            request_timeout=self.request_timeout,
            max_in_flight=self.max_in_flight,
            backoff_base=self.backoff_base,
            backoff_multiplier=self.backoff_multiplier,
            transport_retries=self.transport_retries,
            max_output_tokens=self.max_output_tokens,
        )

    def snapshot(self) -> dict:
        """Result-affecting settings, with the secret removed."""
        out = {}
        for f in fields(self):
            if f.name in _EXECUTION_ONLY or f.name == "api_key":
                continue
            v = getattr(self, f.name)
            out[f.name] = str(v) if isinstance(v, Path) else v
        out["api_key"] = "<redacted>" if self.api_key else None
        return out


KEYS = tuple(f.name for f in fields(PipelineConfig) if f.name != "api_key")
_PATH_KEYS = ("statements_path", "ratings_path", "work_dir", "output_dir", "cache_path")
_CHOICES = {
    "backend": ("mock", "remote"),
    "mw_method": ("auto", "exact", "approx"),
    "headline_pooling": ("rows", "occupations"),
}


def _coerce(key: str, value, base_dir: Path | None = None):
    """Turn a string (or native) value into the typed field value."""
    try:
        if key in _PATH_KEYS:
            if value in (None, ""):
                return None
            p = Path(value).expanduser()
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            return p
        if key in ("included_soc_prefixes", "role_map"):
            return _split_list(value)
        if key == "role_overrides":
            if isinstance(value, dict):
                return dict(value)
            pairs = (item.split("=", 1) for item in _split_list(value))
            return {k.strip(): v.strip() for k, v in pairs}
        if key in ("max_attempts", "max_in_flight", "transport_retries", "max_output_tokens"):
            return int(value)
        if key in ("request_timeout", "backoff_base", "backoff_multiplier"):
            return float(value)
        if key in ("tci_cut", "sd_cut"):
            return None if value in (None, "", "median") else float(value)
        if key == "figure":
            if isinstance(value, bool):
                return value
            lowered = str(value).strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        value = str(value).strip()
        if key in _CHOICES and value not in _CHOICES[key]:
            raise ValueError(f"must be one of {', '.join(_CHOICES[key])}")
        return value
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    extra = [s for s in parser.sections() if s != SECTION]
    if extra:
        raise ConfigError(f"{path}: unknown section(s) {extra}; use [{SECTION}]")
    if not parser.has_section(SECTION):
        return {}
    values = dict(parser.items(SECTION))
    for key in values:
        if key == "api_key":
            raise ConfigError(f"{path}: the API credential is accepted only from ${SECRET_ENV}")
        if key not in KEYS:
            raise ConfigError(f"{path}: unknown key {key!r}")
    return {k: _coerce(k, v, path.parent) for k, v in values.items()}


def read_environment(environ) -> dict:
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or name in (SECRET_ENV, CONFIG_ENV):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in KEYS:
            raise ConfigError(f"unknown environment setting {name}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(cli_flags: dict | None = None, config_file=None, environment=None,
                   stage: str | None = None) -> PipelineConfig:
    """Merge configuration layers and validate the result.

    ``cli_flags`` maps field names to values (``None`` means unset). The
    credential check only applies when ``stage`` needs a backend.
    """
    environment = os.environ if environment is None else environment
    cli_flags = {k: v for k, v in (cli_flags or {}).items() if v is not None}
    unknown = [k for k in cli_flags if k not in KEYS]
    if unknown:
        raise ConfigError(f"unknown setting(s): {', '.join(sorted(unknown))}")
    if config_file is None:
        config_file = environment.get(CONFIG_ENV) or None

    merged = {}
    merged.update(read_environment(environment))
    if config_file is not None:
        merged.update(read_config_file(config_file))
    merged.update({k: _coerce(k, v) for k, v in cli_flags.items()})
    cfg = PipelineConfig(**merged)
    cfg.api_key = environment.get(SECRET_ENV) or None
    _validate(cfg, stage)
    return cfg


def _validate(cfg: PipelineConfig, stage):
    for item in cfg.role_map:
        prefix, sep, group = item.partition("=")
        if not sep or not prefix or group not in ("Clinician", "NonClinician"):
            raise ConfigError(f"bad role_map rule {item!r}; expected PREFIX=Clinician|NonClinician")
    for soc, group in cfg.role_overrides.items():
        if group not in ("Clinician", "NonClinician"):
            raise ConfigError(f"bad role override {soc}={group}")
    if not cfg.included_soc_prefixes:
        raise ConfigError("included_soc_prefixes is empty")
    try:
        cfg.policy()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for key in ("statements_path", "ratings_path"):
        p = getattr(cfg, key)
        if p is not None and not p.is_file():
            raise ConfigError(f"{key} does not exist: {p}")
    if stage in ("ingest", "run"):
        for key in ("statements_path", "ratings_path"):
            if getattr(cfg, key) is None:
                raise ConfigError(f"{key} is required for the {stage} stage")
    if stage in BACKEND_STAGES and cfg.backend == "remote":
        if not cfg.api_key:
            raise ConfigError(f"backend=remote needs the credential in ${SECRET_ENV}")
        for key in ("endpoint", "deployment", "api_version"):
            if not getattr(cfg, key):
                raise ConfigError(f"backend=remote needs {key}")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
