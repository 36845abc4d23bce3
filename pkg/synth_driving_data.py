"""
synth_driving_data.py
Deterministic synthetic driving task: scene parameters -> oracle record

Every record is a pure function of (seed, index). The prompt prints the
scene at the precision it was quantised to, so a prompt determines its
oracle output exactly.
"""

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tools import console
from tools.schema_scaffold import DrivingRecord

OBJECT_NAMES = (
    "nearby_vehicle", "pedestrian", "cyclist", "traffic_element", "road_hazard",
    "weather_condition", "construction", "emergency_vehicle", "animal",
    "special_vehicle", "conflicting_vehicle", "door_opening_vehicle",
)

HORIZON_S = 5
SIM_HZ = 100

ACCEL_KEEP = 0.2
YAW_KEEP = 0.05

OBJECT_PHRASES = {
    "nearby_vehicle": "a nearby vehicle",
    "pedestrian": "a pedestrian",
    "cyclist": "a cyclist",
    "traffic_element": "a traffic signal",
    "road_hazard": "a road hazard",
    "weather_condition": "poor weather",
    "construction": "construction",
    "emergency_vehicle": "an emergency vehicle",
    "animal": "an animal",
    "special_vehicle": "a special vehicle",
    "conflicting_vehicle": "a conflicting vehicle",
    "door_opening_vehicle": "an opening car door",
}
LONGITUDINAL_PHRASES = {"decelerate": "Slow down", "accelerate": "Speed up", "keep_speed": "Hold speed"}
LATERAL_PHRASES = {"keep_lane": "stay in lane", "left_turn": "turn left", "right_turn": "turn right"}

CLEAR_ROAD_SENTENCE = "Clear road ahead, hold speed and stay in lane."
WET_CLAUSE = "Road is wet, keep extra distance."

PROMPT_PATTERN = re.compile(
    r"^v\+(\d\d\.\d) a([+-]\d\.\d) w([+-]\d\.\d\d) o([01]{12}) r([01])$")


class DataConfig(BaseModel):
    """Synthetic dataset settings"""
    model_config = ConfigDict(extra="forbid")

    n_records: int = Field(default=20000, ge=0)
    val_fraction: float = Field(default=0.1, ge=0.0, le=1.0)
    object_rate: float = Field(default=0.25, ge=0.0, le=1.0)
    wet_rate: float = Field(default=0.2, ge=0.0, le=1.0)
    seed: Optional[int] = None


@dataclass(frozen=True)
class SceneParams:
    v0: float
    a: float
    omega: float
    object_flags: Tuple[bool, ...]
    wet: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.v0 <= 30.0:
            raise ValueError(f"v0={self.v0} outside [0, 30]")
        if abs(self.a) > 4.0:
            raise ValueError(f"|a|={abs(self.a)} exceeds 4")
        if abs(self.omega) > 0.3:
            raise ValueError(f"|omega|={abs(self.omega)} exceeds 0.3")
        if len(self.object_flags) != len(OBJECT_NAMES):
            raise ValueError(f"expected {len(OBJECT_NAMES)} object flags")

    @property
    def flags(self) -> Dict[str, bool]:
        return dict(zip(OBJECT_NAMES, self.object_flags))


# ==================== ORACLE ====================

def oracle_trajectory(v0: float, a: float, omega: float) -> List[Tuple[float, float]]:
    """
    Constant-acceleration, constant-turn-rate kinematics

    heading = omega * t, speed = max(0, v0 + a * t); midpoint integration at
    100 Hz, sampled at t = 1..5 s and rounded to 0.01 m.
    """
    dt = 1.0 / SIM_HZ
    t_mid = (np.arange(HORIZON_S * SIM_HZ) + 0.5) * dt
    speed = np.maximum(0.0, v0 + a * t_mid)
    heading = omega * t_mid
    x = np.cumsum(speed * np.cos(heading) * dt)
    y = np.cumsum(speed * np.sin(heading) * dt)
    idx = np.arange(1, HORIZON_S + 1) * SIM_HZ - 1
    return [(round(float(x[i]), 2) + 0.0, round(float(y[i]), 2) + 0.0) for i in idx]


def derive_behavior(scene: SceneParams) -> Tuple[str, str]:
    """Thresholds are closed on the keep side"""
    if scene.a < -ACCEL_KEEP:
        longitudinal = "decelerate"
    elif scene.a > ACCEL_KEEP:
        longitudinal = "accelerate"
    else:
        longitudinal = "keep_speed"

    if scene.omega > YAW_KEEP:
        lateral = "left_turn"
    elif scene.omega < -YAW_KEEP:
        lateral = "right_turn"
    else:
        lateral = "keep_lane"
    return longitudinal, lateral


def compose_explanation(scene: SceneParams) -> str:
    longitudinal, lateral = derive_behavior(scene)
    flagged = [name for name, on in zip(OBJECT_NAMES, scene.object_flags) if on]

    if not flagged and longitudinal == "keep_speed" and lateral == "keep_lane":
        parts = [CLEAR_ROAD_SENTENCE]
    else:
        if flagged:
            objects = " and ".join(OBJECT_PHRASES[name] for name in flagged[:2])
            if len(flagged) > 2:
                objects += " and more"
            parts = [f"Attention to {objects}."]
        else:
            parts = ["Road is clear."]
        parts.append(f"{LONGITUDINAL_PHRASES[longitudinal]} and {LATERAL_PHRASES[lateral]}.")
    if scene.wet:
        parts.append(WET_CLAUSE)
    return " ".join(parts)


# ==================== PROMPTS ====================

def format_prompt(scene: SceneParams) -> str:
    flags = "".join("1" if f else "0" for f in scene.object_flags)
    return f"v+{scene.v0:04.1f} a{scene.a:+.1f} w{scene.omega:+.2f} o{flags} r{int(scene.wet)}"


def parse_prompt(prompt: str) -> SceneParams:
    """Recover the (quantised) scene from its prompt text"""
    match = PROMPT_PATTERN.match(prompt.strip())
    if not match:
        raise ValueError(f"unrecognised prompt {prompt!r}")
    v0, a, omega, flags, wet = match.groups()
    return SceneParams(
        v0=float(v0),
        a=float(a),
        omega=float(omega),
        object_flags=tuple(c == "1" for c in flags),
        wet=wet == "1",
    )


def make_record(scene: SceneParams) -> DrivingRecord:
    longitudinal, lateral = derive_behavior(scene)
    return DrivingRecord(
        critical_objects=scene.flags,
        longitudinal=longitudinal,
        lateral=lateral,
        explanation=compose_explanation(scene),
        waypoints=oracle_trajectory(scene.v0, scene.a, scene.omega),
        prompt=format_prompt(scene),
    )


def sample_scene(rng: np.random.Generator, config: DataConfig = DataConfig(), seed: int = 0) -> SceneParams:
    """Behaviour classes are drawn uniformly, then values inside each class"""
    long_class = rng.integers(3)
    if long_class == 0:
        a = rng.uniform(-4.0, -0.3)
    elif long_class == 1:
        a = rng.uniform(0.3, 4.0)
    else:
        a = rng.uniform(-ACCEL_KEEP, ACCEL_KEEP)
    lat_class = rng.integers(3)
    if lat_class == 0:
        omega = rng.uniform(0.06, 0.3)
    elif lat_class == 1:
        omega = rng.uniform(-0.3, -0.06)
    else:
        omega = rng.uniform(-YAW_KEEP, YAW_KEEP)
    v0 = rng.uniform(0.0, 30.0)
    flags = tuple(bool(f) for f in rng.random(len(OBJECT_NAMES)) < config.object_rate)
    wet = bool(rng.random() < config.wet_rate)
    return SceneParams(
        v0=round(v0, 1) + 0.0,
        a=round(a, 1) + 0.0,
        omega=round(omega, 2) + 0.0,
        object_flags=flags,
        wet=wet,
        seed=seed,
    )


def record_for_index(seed: int, index: int, config: DataConfig = DataConfig()) -> DrivingRecord:
    rng = np.random.default_rng([seed, index])
    return make_record(sample_scene(rng, config, seed))


# ==================== DATASETS ====================

def record_to_json(record: DrivingRecord) -> str:
    return json.dumps(record.to_dict(), separators=(",", ":"))


def load_records(path) -> List[DrivingRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(DrivingRecord.from_dict(json.loads(line)))
    return records


def emit_dataset(n: int, seed: int, out_dir, val_fraction: float = 0.1,
                 config: DataConfig = DataConfig()) -> Tuple[Path, Path]:
    """
    Write train.jsonl and val.jsonl

    Record i comes from the RNG stream (seed, i); the first
    round(n * (1 - val_fraction)) indices go to train, the rest to val.

    Returns:
        (train path, val path)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_train = int(round(n * (1.0 - val_fraction)))
    train_path = out_dir / "train.jsonl"
    val_path = out_dir / "val.jsonl"

    console.step(f"Generating {n} records ({n_train} train / {n - n_train} val)")
    with open(train_path, "w", encoding="utf-8") as train_f, open(val_path, "w", encoding="utf-8") as val_f:
        for index in console.progress(range(n), desc="records", total=n):
            line = record_to_json(record_for_index(seed, index, config)) + "\n"
            (train_f if index < n_train else val_f).write(line)
    console.ok(f"Dataset written to {out_dir}")
    return train_path, val_path
