"""Run configuration: JSON config files plus flat CLI overrides.

A run config nests the architecture, training and data-generation
configs under "network", "train" and "synth", with top-level seed,
threads and paths. Every key is validated before any work starts;
unknown keys are rejected by name. One master seed drives everything:
sub-config seeds follow it unless set explicitly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .networks import DESK, PRESETS, NetworkConfig
from .synth import SynthConfig
from .training import TrainConfig

TOP_LEVEL_KEYS = ("seed", "threads", "data_dir", "out_dir", "network_preset", "network", "train", "synth")


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 0  # 0 leaves the BLAS pool size alone
    data_dir: str = "data"
    out_dir: str = "runs/default"
    network: NetworkConfig = field(default_factory=lambda: DESK)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.threads < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}")
        self.network.validate()
        self.train.validate()
        self.synth.validate()

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "threads": self.threads,
            "data_dir": self.data_dir,
            "out_dir": self.out_dir,
            "network": dataclasses.asdict(self.network),
            "train": dataclasses.asdict(self.train),
            "synth": dataclasses.asdict(self.synth),
        }


def _coerce(name: str, raw, default):
    """Parse ``raw`` (possibly a CLI string) to the type of ``default``."""
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes"):
            return True
        if str(raw).lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected an integer, got {raw!r}")
    if isinstance(default, float):
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected a number, got {raw!r}")
    if isinstance(default, tuple):
        if isinstance(raw, (list, tuple)):
            items = list(raw)
        else:
            items = [part for part in str(raw).split(",") if part != ""]
        elem = default[0] if default else 0
        return tuple(_coerce(name, item, elem) for item in items)
    return str(raw)


def _apply_section(cfg, section_name: str, values: dict):
    known = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    updates = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {section_name}.{key}")
        updates[key] = _coerce(f"{section_name}.{key}", raw, known[key])
    return replace(cfg, **updates)


def build_run_config(config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve defaults < JSON file < CLI overrides into a validated
    RunConfig. Override keys are flat, dotted for sections
    (e.g. "train.epochs", "synth.n_train", "seed")."""
    file_cfg: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key in file_cfg:
            if key not in TOP_LEVEL_KEYS:
                raise ConfigError(f"unknown config key {key}")

    sections: dict[str, dict] = {"network": {}, "train": {}, "synth": {}}
    top: dict = {}
    preset_name = file_cfg.get("network_preset", "desk")
    for name in ("network", "train", "synth"):
        section = file_cfg.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        sections[name].update(section)
    for key in ("seed", "threads", "data_dir", "out_dir"):
        if key in file_cfg:
            top[key] = file_cfg[key]

    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key == "network_preset":
            preset_name = raw
        elif "." in key:
            section, _, sub = key.partition(".")
            if section not in sections:
                raise ConfigError(f"unknown config key {key}")
            sections[section][sub] = raw
        elif key in ("seed", "threads", "data_dir", "out_dir"):
            top[key] = raw
        else:
            raise ConfigError(f"unknown config key {key}")

    if preset_name not in PRESETS:
        raise ConfigError(f"unknown network_preset {preset_name!r}; expected one of {sorted(PRESETS)}")
    network = _apply_section(PRESETS[preset_name], "network", sections["network"])
    train = _apply_section(TrainConfig(), "train", sections["train"])
    synth = _apply_section(SynthConfig(), "synth", sections["synth"])

    run = RunConfig(network=network, train=train, synth=synth)
    for key, raw in top.items():
        setattr(run, key, _coerce(key, raw, getattr(run, key)))

    # one master seed: sub-config seeds follow unless explicitly set
    if "seed" not in sections["train"]:
        run.train = replace(run.train, seed=run.seed)
    if "seed" not in sections["synth"]:
        run.synth = replace(run.synth, seed=run.seed)
    run.validate()
    return run
