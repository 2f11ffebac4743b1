"""Run configuration: defaults, YAML file, command-line overrides.

Precedence is flags > file > defaults. Resolution is a pure function of
those three inputs; the resulting ResolvedConfig is validated before use.

File layout (every key optional)::

    run:
      max_iterations: 40
      warmup_budget: 2
      malformed_progress_policy: RetryOnceThenFalse   # or TreatAsFalse
      answer_marker: "FINAL_ANSWER:"
      lenient_progress: false
      system_prompt: ""
    schedule: {kind: linear, b0: 2, k: 2, bmax: 8}    # alpha/beta for sigmoid
    backends:
      mode: separate          # or "single": the large tier reuses small's endpoint
      small: {base_url: ..., model: ..., api_key_env: OPENAI_API_KEY, api_key: null,
             timeout: 120, max_retries: 3, script: null}
      large: {...}
    tools: {lookup_fixture: null}
    seed: null
    workers: 1
    simulate:
      world: null             # path to a world YAML; the bundled default otherwise
      n_trials: 1000
      max_steps: 40
      policies: null          # list of {kind: small|large|random|collab, ...}
    sweep:
      k: [0, 1, 2, 3]
      alpha: []
      beta: []
      bmax: []
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .backends import EndpointConfig, GenerationParams
from .controller import ConfigError, MalformedPolicy, RunConfig
from .escalation import ScheduleError, schedule_from_dict, schedule_to_dict

SECRET_KEYS = {"api_key", "authorization", "token"}


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("tierflow") / "fixtures" / name))


DEFAULTS: dict[str, Any] = {
    "run": {
        "max_iterations": 40,
        "warmup_budget": 2,
        "malformed_progress_policy": "RetryOnceThenFalse",
        "answer_marker": "FINAL_ANSWER:",
        "lenient_progress": False,
        "system_prompt": "",
    },
    "schedule": {"kind": "linear", "b0": 2, "k": 2, "bmax": 8, "alpha": 1.0, "beta": 2.0},
    "backends": {
        "mode": "separate",
        "small": {"base_url": "http://localhost:8000/v1", "model": "", "api_key_env": "OPENAI_API_KEY", "api_key": None,
                  "timeout": 120.0, "max_retries": 3, "script": None},
        "large": {"base_url": "http://localhost:8001/v1", "model": "", "api_key_env": "OPENAI_API_KEY", "api_key": None,
                  "timeout": 120.0, "max_retries": 3, "script": None},
    },
    "tools": {"lookup_fixture": None},
    "seed": None,
    "workers": 1,
    "simulate": {"world": None, "n_trials": 1000, "max_steps": 40, "policies": None},
    "sweep": {"k": [0, 1, 2, 3], "alpha": [], "beta": [], "bmax": []},
}

# flag dest -> dotted config key
FLAG_KEYS = {
    "max_iterations": "run.max_iterations",
    "warmup_budget": "run.warmup_budget",
    "malformed_policy": "run.malformed_progress_policy",
    "answer_marker": "run.answer_marker",
    "lenient_progress": "run.lenient_progress",
    "schedule": "schedule.kind",
    "b0": "schedule.b0",
    "k": "schedule.k",
    "bmax": "schedule.bmax",
    "alpha": "schedule.alpha",
    "beta": "schedule.beta",
    "backend_mode": "backends.mode",
    "small_url": "backends.small.base_url",
    "small_model": "backends.small.model",
    "small_script": "backends.small.script",
    "large_url": "backends.large.base_url",
    "large_model": "backends.large.model",
    "large_script": "backends.large.script",
    "lookup_fixture": "tools.lookup_fixture",
    "seed": "seed",
    "workers": "workers",
    "world": "simulate.world",
    "trials": "simulate.n_trials",
    "max_steps": "simulate.max_steps",
    "k_values": "sweep.k",
    "alpha_values": "sweep.alpha",
    "beta_values": "sweep.beta",
    "bmax_values": "sweep.bmax",
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(dotted, "unknown configuration key")
        if isinstance(base[key], dict) and key != "policies":
            if not isinstance(value, dict):
                raise ConfigError(dotted, "expected a mapping")
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_dotted(data: dict, dotted: str, value) -> None:
    node = data
    *parents, leaf = dotted.split(".")
    for p in parents:
        node = node[p]
    node[leaf] = value


def load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"{path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} must contain a mapping at top level")
    return data


@dataclass(frozen=True)
class ResolvedConfig:
    raw: dict
    run: RunConfig
    small: EndpointConfig
    large: EndpointConfig
    lookup_fixture: Optional[str]
    seed: Optional[int]
    workers: int

    def as_dict(self, redact: bool = True) -> dict:
        data = copy.deepcopy(self.raw)
        if redact:
            _redact(data)
        return data

    @property
    def config_hash(self) -> str:
        # Worker count never changes results, so it stays out of the hash.
        data = self.as_dict(redact=True)
        data.pop("workers", None)
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("seed", "a seed is required for simulate and sweep (use --seed or 'seed:' in the file)")
        return self.seed


def _redact(data):
    if isinstance(data, dict):
        for key in data:
            if key.lower() in SECRET_KEYS and data[key]:
                data[key] = "***"
            else:
                _redact(data[key])
    elif isinstance(data, list):
        for item in data:
            _redact(item)


def _positive_int(raw: dict, dotted: str) -> int:
    node = raw
    for part in dotted.split("."):
        node = node[part]
    if isinstance(node, bool) or not isinstance(node, int) or node < 1:
        raise ConfigError(dotted.split(".")[-1], f"must be a positive integer, got {node!r}")
    return node


def resolve(file_data: dict | None = None, overrides: dict | None = None) -> ResolvedConfig:
    """Merge defaults, file contents and flag overrides, then validate.

    ``overrides`` maps flag names (see FLAG_KEYS) to values; ``None`` values
    mean "not given".
    """
    raw = _merge(DEFAULTS, file_data or {})
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag not in FLAG_KEYS:
            raise ConfigError(flag, "unknown option")
        _set_dotted(raw, FLAG_KEYS[flag], value)

    _positive_int(raw, "run.max_iterations")
    _positive_int(raw, "run.warmup_budget")
    _positive_int(raw, "workers")
    _positive_int(raw, "simulate.n_trials")
    _positive_int(raw, "simulate.max_steps")

    sched_raw = {k: v for k, v in raw["schedule"].items()}
    try:
        schedule = schedule_from_dict(sched_raw)
    except ScheduleError as exc:
        raise ConfigError(exc.key, str(exc).split(": ", 1)[-1]) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError("schedule", str(exc)) from exc

    try:
        policy = MalformedPolicy(raw["run"]["malformed_progress_policy"])
    except ValueError:
        raise ConfigError(
            "malformed_progress_policy",
            f"must be TreatAsFalse or RetryOnceThenFalse, got {raw['run']['malformed_progress_policy']!r}",
        ) from None

    run = RunConfig(
        max_iterations=raw["run"]["max_iterations"],
        warmup_budget=raw["run"]["warmup_budget"],
        schedule=schedule,
        malformed_progress_policy=policy,
        answer_marker=str(raw["run"]["answer_marker"]),
        lenient_progress=bool(raw["run"]["lenient_progress"]),
        generation=GenerationParams(),
        system_prompt=str(raw["run"]["system_prompt"]),
    ).validate()

    mode = raw["backends"]["mode"]
    if mode not in ("separate", "single"):
        raise ConfigError("backends.mode", f"must be 'separate' or 'single', got {mode!r}")
    small = EndpointConfig(**raw["backends"]["small"])
    large_raw = dict(raw["backends"]["large"])
    if mode == "single":
        large_raw.update({k: raw["backends"]["small"][k] for k in ("base_url", "api_key_env", "timeout", "max_retries")})
    large = EndpointConfig(**large_raw)

    seed = raw["seed"]
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed", f"must be a non-negative integer, got {seed!r}")

    # Normalise schedule so the snapshot shows the effective parameters.
    raw["schedule"] = {**raw["schedule"], **schedule_to_dict(schedule)}
    return ResolvedConfig(
        raw=raw,
        run=run,
        small=small,
        large=large,
        lookup_fixture=raw["tools"]["lookup_fixture"],
        seed=seed,
        workers=raw["workers"],
    )
