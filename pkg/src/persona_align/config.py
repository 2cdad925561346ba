"""Layered run configuration and run manifests.

Precedence, highest first: command-line flags, environment variables, the
YAML config file, built-in defaults.  Environment overrides use the form
``PERSONA_ALIGN_<SECTION>__<KEY>`` (for example
``PERSONA_ALIGN_TRAIN__ALPHA_M=0.3``) or ``PERSONA_ALIGN_<KEY>`` for
top-level keys.  API credentials never pass through this module: the HTTP
oracle reads them from the environment variable named by
``oracle.api_key_env``.
"""

from __future__ import annotations

import copy
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .prompts import PROMPT_VERSIONS
from .records import file_sha256

ENV_PREFIX = "PERSONA_ALIGN_"
SECRET_KEYS = ("api_key", "apikey", "token", "secret", "password")

DEFAULTS: dict[str, Any] = {
    "seed": 42,
    "output_dir": "runs",
    "log_level": "INFO",
    "oracle": {
        "kind": "synthetic",
        "endpoint_url": "https://api.openai.com/v1/chat/completions",
        "model_name": "gpt-4o",
        "temperature": 0.0,
        "max_retries": 3,
        "request_timeout": 60.0,
        "max_parallel_requests": 4,
        "api_key_env": "PERSONA_ALIGN_API_KEY",
        "cache": None,
        "synthetic_noise": 0.0,
    },
    "split": {"n_detailed_respondents": 250, "n_general_records": 200, "n_test_records": 400},
    "train": {
        "L0": 5,
        "max_iterations": 30,
        "convergence_tol": 1e-3,
        "alpha_e": 0.5,
        "alpha_m": 0.4,
        "lambda": 40.0 / 3.0,
        "learning_rate": 0.05,
        "m_step_iterations": 200,
        "track_exact": False,
    },
    "predict": {"repeats": 1, "aggregation": "single_draw"},
    "baselines": {"few_shot_examples": 5, "mnl_pass_interaction": False},
    "interpret": {"k": 6, "restarts": 10},
}

def _is_secret(key: str) -> bool:
    """Keys that look like they hold a credential (names of env vars, ``*_env``, are fine)."""
    k = str(key).lower()
    return any(s in k for s in SECRET_KEYS) and not k.endswith("_env")


# keys whose default is None but whose values are strings
_OPTIONAL_STR = {("oracle", "cache")}


def _coerce(path: tuple[str, ...], value, default):
    name = ".".join(path)
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"config key '{name}' must not be null")
    if default is None:
        if path in _OPTIONAL_STR and isinstance(value, (str, os.PathLike)):
            return str(value)
        raise ConfigError(f"config key '{name}' expects a string path, got {type(value).__name__}")
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("1", "true", "yes", "0", "false", "no"):
            return value.lower() in ("1", "true", "yes")
        raise ConfigError(f"config key '{name}' expects a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool):
            raise ConfigError(f"config key '{name}' expects an integer, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
        raise ConfigError(f"config key '{name}' expects an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(f"config key '{name}' expects a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"config key '{name}' expects a number, got {value!r}")
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(f"config key '{name}' expects a string, got {value!r}")
    raise ConfigError(f"config key '{name}' has unsupported type")


def _merge(base: dict, overrides: Mapping, path: tuple[str, ...] = (), strict: bool = True) -> None:
    for key, value in overrides.items():
        if _is_secret(key):
            raise ConfigError(f"config key '{'.'.join(path + (key,))}' looks like a credential; "
                              "credentials are read only from the environment variable named by oracle.api_key_env")  # fmt: skip
        if key not in base:
            if strict:
                raise ConfigError(f"unknown config key '{'.'.join(path + (key,))}'")
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key '{'.'.join(path + (key,))}' must be a mapping")
            _merge(base[key], value, path + (key,), strict)
        else:
            base[key] = _coerce(path + (key,), value, _default_at(path + (key,)))


def _default_at(path: tuple[str, ...]):
    node: Any = DEFAULTS
    for p in path:
        node = node[p]
    return node


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {p} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must contain a mapping at the top level")
    return data


def env_overrides(environ: Mapping[str, str]) -> dict:
    """Nested overrides from ``PERSONA_ALIGN_*`` variables naming known keys; others are ignored."""
    out: dict = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        parts = [p.lower() for p in rest.split("__")]
        if any(_is_secret(p) for p in parts):
            continue
        node = DEFAULTS
        ok = True
        keys = []
        for p in parts:
            match = next((k for k in node if k.lower() == p), None) if isinstance(node, dict) else None
            if match is None:
                ok = False
                break
            keys.append(match)
            node = node[match]
        if not ok or isinstance(node, dict):
            continue
        target = out
        for k in keys[:-1]:
            target = target.setdefault(k, {})
        target[keys[-1]] = value
    return out


def resolve_config(config_file=None, flags: Mapping | None = None, environ: Mapping[str, str] | None = None) -> dict:
    """Effective configuration: flags > environment > file > defaults."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_file is not None:
        _merge(cfg, load_config_file(config_file))
    _merge(cfg, env_overrides(os.environ if environ is None else environ))
    _merge(cfg, _drop_none(flags or {}))
    return cfg


def _drop_none(d: Mapping) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, Mapping):
            sub = _drop_none(v)
            if sub:
                out[k] = sub
        elif v is not None:
            out[k] = v
    return out


# --- run manifest ----------------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def tool_version() -> str:
    from . import __version__

    return __version__


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    seeds: dict[str, int] = field(default_factory=dict)
    oracle: dict | None = None
    started: str = field(default_factory=_now)
    finished: str | None = None
    oracle_calls: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    outputs: dict[str, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    output_checksums: dict[str, str] = field(default_factory=dict)

    def add_input(self, path) -> None:
        p = Path(path)
        if p.is_dir():
            for child in sorted(p.glob("*.jsonl")):
                self.inputs[str(child)] = file_sha256(child)
        elif p.exists():
            self.inputs[str(p)] = file_sha256(p)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "seeds": self.seeds,
            "tool_version": tool_version(),
            "python": sys.version.split()[0],
            "platform": platform.platform(),
            "prompt_versions": dict(PROMPT_VERSIONS),
            "oracle": self.oracle,
            "started": self.started,
            "finished": self.finished,
            "oracle_calls": self.oracle_calls,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "outputs": {k: str(v) for k, v in self.outputs.items()},
            "output_checksums": self.output_checksums,
            **({"extra": self.extra} if self.extra else {}),
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.finished = _now()
        self.output_checksums = {str(p): file_sha256(p) for p in self.outputs.values() if Path(p).is_file()}
        path = out / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2, default=str) + "\n")
        return path


def verify_manifest(path) -> list[str]:
    """Paths whose current checksum differs from the one recorded in the manifest."""
    data = json.loads(Path(path).read_text())
    bad = []
    for section in ("inputs", "output_checksums"):
        for p, digest in data.get(section, {}).items():
            if not Path(p).exists() or file_sha256(p) != digest:
                bad.append(p)
    return bad
