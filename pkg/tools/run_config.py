"""
tools/run_config.py
Merged run configuration: defaults < config file < command line

The config file is a dotenv-style file of `section.field=value` lines, e.g.

    seed=7
    train.steps=2000
    decode.temperatures.trajectory=0.7
    bench.strategies=ar,ss
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError

from decoders import DecodeConfig
from eval_bench import BenchConfig
from rollout_scaling import RolloutConfig
from self_check import CheckConfig
from sasd_training import TrainConfig
from synth_driving_data import DataConfig
from tools.errors import ConfigError
from tools.tiny_lm import ModelConfig

SECTIONS = ("model", "data", "train", "decode", "bench", "rollout", "check")
LIST_FIELDS = {("bench", "strategies"), ("rollout", "sweep")}


class RunConfig(BaseModel):
    """Every module config plus the global seed"""
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    out_dir: str = "runs"
    model: ModelConfig = ModelConfig()
    data: DataConfig = DataConfig()
    train: TrainConfig = TrainConfig()
    decode: DecodeConfig = DecodeConfig()
    bench: BenchConfig = BenchConfig()
    rollout: RolloutConfig = RolloutConfig()
    check: CheckConfig = CheckConfig()


def _parse_value(section: str, key: str, raw: str) -> Any:
    raw = raw.strip()
    if (section, key) in LIST_FIELDS:
        items = [item.strip() for item in raw.split(",") if item.strip()]
        return [int(i) for i in items] if key == "sweep" else items
    if raw.startswith(("[", "{")):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError(f"'{section}.{key}' is not valid JSON: {e}") from e
    return raw


def _set_path(tree: Dict[str, Any], dotted: str, raw: str):
    parts = dotted.strip().split(".")
    if not all(parts):
        raise ConfigError(f"malformed key '{dotted}'")
    if len(parts) == 1:
        tree[parts[0]] = raw.strip()
        return
    section = parts[0]
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section '{section}' in '{dotted}'")
    node = tree.setdefault(section, {})
    for part in parts[1:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"'{dotted}' overrides a non-table value")
    node[parts[-1]] = _parse_value(section, ".".join(parts[1:]), raw)


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    """`key=value` strings from --set into a dict"""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' is not key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value
    return out


def build_run_config(entries: Mapping[str, Optional[str]]) -> RunConfig:
    """Validate flat `section.field` entries into a RunConfig"""
    tree: Dict[str, Any] = {}
    for key, value in entries.items():
        if value is None:
            raise ConfigError(f"key '{key}' has no value")
        _set_path(tree, key, value)
    seed = tree.get("seed", RunConfig.model_fields["seed"].default)
    for section in SECTIONS:
        tree.setdefault(section, {}).setdefault("seed", seed)
    try:
        config = RunConfig.model_validate(tree)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid config at '{where}': {first['msg']}") from e
    return config


def load_run_config(path=None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Read the config file (if any), apply overrides, validate

    Raises:
        ConfigError: missing file, unknown key or invalid value
    """
    entries: Dict[str, Optional[str]] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        entries.update(dotenv_values(path))
    entries.update(overrides or {})
    return build_run_config(entries)
