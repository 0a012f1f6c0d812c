"""Run configuration: a single TOML file, validated against a fixed schema.

Unknown sections or keys are rejected. Command-line flags override keys one
to one, and ``--set section.key=value`` reaches any key. The resolved config
is written next to every command's outputs.
"""

from __future__ import annotations

import copy
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from natrobust import __version__
from natrobust.dataset import OFFSETS, SynthVideoConfig
from natrobust.distortions import FAMILIES, SEVERITIES
from natrobust.errors import ConfigError

_SYNTH = SynthVideoConfig()

# section -> key -> default. The default's type is the accepted type; a dict
# default marks a free-form table validated by the consumer.
SCHEMA = {
    "run": {
        "output_dir": "out",
        "seed": 0,
    },
    "dataset": {
        "manifest": "",
        "split": "test",
        "num_classes": 0,  # 0: take it from the manifest
    },
    "synthetic": {
        "num_classes": _SYNTH.num_classes,
        "num_shots": _SYNTH.num_shots,
        "shots_per_video": _SYNTH.shots_per_video,
        "frames_per_shot": _SYNTH.frames_per_shot,
        "frame_size": list(_SYNTH.frame_size),
        "shape_radius": list(_SYNTH.shape_radius),
        "placement": _SYNTH.placement,
        "velocity": list(_SYNTH.velocity),
        "jitter": _SYNTH.jitter,
        "drift": _SYNTH.drift,
        "texture": _SYNTH.texture,
        "split_fractions": list(_SYNTH.split_fractions),
    },
    "distortions": {
        "direction": "+x",
        "table": {},  # family -> five parameters
    },
    "distort": {
        "family": "",
        "severity": 0,
    },
    "trainer": {
        "techniques": ["baseline"],
        "n_seeds": 1,
        "grid": False,
        "hidden": 64,
        "n_views": 8,
        "lr": 0.02,
        "momentum": 0.9,
        "epochs": 100,
        "batch_size": 32,
        "lr_schedule": "cosine",
        "weights": {},  # technique -> regularization weight (or smoothing mass)
        "pgd_epsilon": 8 / 255,
        "pgd_steps": 5,
        "pgd_step_size": 2 / 255,
        "workers": 1,
    },
    "predictor": {
        "backend": "builtin",
        "checkpoints": [],
        "models_index": "",
        "endpoint": "",
        "model_id": "service",
        "num_classes": 0,
        "timeout": 10.0,
        "retries": 2,
        "max_in_flight": 8,
        "families": list(FAMILIES),
        "severities": list(SEVERITIES),
        "offsets": list(OFFSETS),
        "n_seeds": 1,  # keyed draws per stochastic distortion
    },
    "metrics": {
        "pooling": "pooled",
    },
    "analysis": {
        "epsilon": 16.0,
        "offsets": [-1, 1],
        "preprocess": True,
        "sample_size": 0,  # 0: every pair
        "predictions": "",
        "model_id": "",
    },
    "report": {
        "predictions": [],
        "models_index": "",
        "distances": True,
    },
}

CHOICES = {
    ("distortions", "direction"): ("+x", "-x", "+y", "-y"),
    ("trainer", "lr_schedule"): ("cosine", "constant"),
    ("predictor", "backend"): ("builtin", "service"),
    ("metrics", "pooling"): ("pooled", "signed"),
    ("dataset", "split"): ("train", "val", "test", "all"),
}


def defaults() -> dict:
    return copy.deepcopy(SCHEMA)


def _coerce(section: str, key: str, value):
    default = SCHEMA[section][key]
    where = f"{section}.{key}"
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table")
        return dict(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        choices = CHOICES.get((section, key))
        if choices and value not in choices:
            raise ConfigError(f"{where}: must be one of {list(choices)}, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected an array, got {value!r}")
        return list(value)
    raise AssertionError(where)


def merge(base: dict, overrides: dict) -> dict:
    """Validate ``overrides`` (section -> key -> value) and apply them to a copy of ``base``."""
    out = copy.deepcopy(base)
    for section, values in overrides.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in values.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            out[section][key] = _coerce(section, key, value)
    return out


def load(path=None) -> dict:
    """Defaults overlaid with the TOML file at ``path`` (if given)."""
    if path is None:
        return defaults()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return merge(defaults(), doc)


def parse_assignment(text: str) -> tuple[str, str, object]:
    """``section.key=value``; the value is read as a TOML value, else as a bare string."""
    lhs, sep, rhs = text.partition("=")
    section, dot, key = lhs.strip().partition(".")
    if not sep or not dot:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    try:
        value = tomllib.loads(f"v = {rhs}")["v"]
    except tomllib.TOMLDecodeError:
        value = rhs
    return section, key.strip(), value


def apply_assignments(cfg: dict, assignments) -> dict:
    overrides: dict = {}
    for text in assignments or ():
        section, key, value = parse_assignment(text)
        overrides.setdefault(section, {})[key] = value
    return merge(cfg, overrides)


def dumps(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


def write_provenance(cfg: dict, out_dir) -> None:
    """Resolved config plus a tool-version stamp in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.toml").write_text(dumps(cfg))
    (out_dir / "VERSION").write_text(f"natrobust {__version__}\n")


def synth_config(cfg: dict) -> SynthVideoConfig:
    s = cfg["synthetic"]
    try:
        return SynthVideoConfig(
            num_classes=s["num_classes"], num_shots=s["num_shots"],
            shots_per_video=s["shots_per_video"], frames_per_shot=s["frames_per_shot"],
            frame_size=tuple(s["frame_size"]), shape_radius=tuple(s["shape_radius"]),
            placement=s["placement"], velocity=tuple(s["velocity"]), jitter=s["jitter"],
            drift=s["drift"], texture=s["texture"],
            split_fractions=tuple(s["split_fractions"]), seed=cfg["run"]["seed"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[synthetic]: {exc}") from None
