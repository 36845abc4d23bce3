"""
rollout_scaling.py
Shared-prefix multi-trajectory rollouts

The first three sections are decoded once, greedily, with Scaffold Spec.
The cache is then forked N times and only the trajectory section is
re-decoded, with a sampled verifier. Each rollout is resampled to 20 points
by a jerk-minimizing quintic spline and the rollouts are averaged.
"""

import concurrent.futures
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from decoders import DecodeConfig, DecodeSession, ScaffoldSpecDecoder
from decoders.base_decoder import finish
from eval_bench import ade
from synth_driving_data import parse_prompt
from tools import console
from tools.errors import MalformedNumber, ShapeMismatch, SingularSystem
from tools.schema_scaffold import SECTION_ORDER, BlockPlan, DrivingRecord, ScaffoldLayout, plan_blocks
from tools.tiny_lm import TinyLM

PREFIX_SECTIONS = SECTION_ORDER[:3]
SEGMENTS = 5
SEGMENT_S = 1.0
INTERP_STEP_S = 0.25
SECOND_INDICES = (3, 7, 11, 15, 19)      # interp20 samples at t = 1..5 s


class RolloutConfig(BaseModel):
    """Test-time scaling settings"""
    model_config = ConfigDict(extra="forbid")

    n: int = Field(default=4, ge=1)
    temperature: float = Field(default=0.7, ge=0.0)
    block_size: int = Field(default=32, ge=1)
    sweep: List[int] = Field(default_factory=lambda: [1, 2, 4, 8])
    max_samples: int = Field(default=500, ge=0)
    max_workers: int = Field(default=1, ge=1)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _sampling_needs_temperature(self):
        if self.n > 1 and self.temperature <= 0:
            raise ValueError("temperature must be > 0 when n > 1")
        return self


@dataclass
class Trajectory:
    times: np.ndarray           # (K,)
    points: np.ndarray          # (K, 2)
    resolution: str = "raw5"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.times) != len(self.points):
            raise ShapeMismatch(f"{len(self.times)} timestamps for {len(self.points)} points")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    @classmethod
    def raw5(cls, waypoints: Sequence[Tuple[float, float]]) -> "Trajectory":
        return cls(np.arange(1, len(waypoints) + 1, dtype=np.float64), np.asarray(waypoints), "raw5")

    def at_seconds(self) -> np.ndarray:
        """Points at t = 1..5 s"""
        if self.resolution == "raw5":
            return self.points
        return self.points[list(SECOND_INDICES)]


@dataclass
class PrefixState:
    """Decoded first three sections plus the session holding their cache"""
    session: DecodeSession
    tokens: List[int]
    passes: int


@dataclass
class RolloutOutcome:
    index: int
    tokens: Optional[List[int]]
    waypoints: Optional[List[Tuple[float, float]]]
    passes: int
    attempts: int
    failed: bool = False


# ==================== PREFIX / ROLLOUTS ====================

def decode_shared_prefix(model: TinyLM, prompt_ids: Sequence[int], layout: ScaffoldLayout,
                         plan: Optional[BlockPlan] = None) -> PrefixState:
    """
    Greedy Scaffold Spec over critical_objects, explanation and
    future_meta_behavior; on return the cache holds prompt + prefix
    """
    config = DecodeConfig(strategy="ss", block_size=plan.block_size if plan else 32)
    decoder = ScaffoldSpecDecoder(model, layout, config, plan)
    session = decoder.new_session()
    session.prefill(prompt_ids)
    pending = decoder.run_blocks(session, PREFIX_SECTIONS)
    prefix_end = layout.section_tokens["trajectory"][0]
    if pending:
        session.commit_pending(prefix_end)
    return PrefixState(session=session, tokens=list(session.tokens[:prefix_end]),
                       passes=session.trace.total_passes)


def _rollout_once(decoder: ScaffoldSpecDecoder, prefix: PrefixState, config: DecodeConfig,
                  rng: np.random.Generator):
    session = prefix.session.fork(config, rng)
    decoder.run_blocks(session, ("trajectory",))
    return finish(session)


def rollout_trajectories(model: TinyLM, prefix: PrefixState, layout: ScaffoldLayout, n: int,
                         temperature: float, seed: int, plan: Optional[BlockPlan] = None,
                         max_workers: int = 1) -> List[RolloutOutcome]:
    """
    N independent trajectory-section rollouts from forks of the prefix cache

    Rollout i draws from np.random.default_rng([seed, i]). A rollout whose
    numerals fail to parse is resampled once, then counted as failed.
    """
    config = DecodeConfig(strategy="ss", block_size=plan.block_size if plan else 32,
                          temperatures={"trajectory": temperature})
    decoder = ScaffoldSpecDecoder(model, layout, config, plan)

    def one(index: int) -> RolloutOutcome:
        rng = np.random.default_rng([seed, index])
        passes = 0
        attempt = 0
        while attempt < 2:
            attempt += 1
            result = _rollout_once(decoder, prefix, config, rng)
            passes += result.trace.total_passes
            if result.parsed is not None:
                return RolloutOutcome(index, result.tokens, result.parsed.waypoints, passes, attempt)
            if not isinstance(result.error, MalformedNumber):
                break
        console.warn(f"rollout {index} failed: {result.parse_error}")
        return RolloutOutcome(index, None, None, passes, attempt, failed=True)

    if max_workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
            outcomes = list(executor.map(one, range(n)))
    else:
        outcomes = [one(i) for i in range(n)]
    return sorted(outcomes, key=lambda o: o.index)


# ==================== JMT ====================

def _derivative_row(order: int, tau: float) -> np.ndarray:
    """Coefficients of d^order/dtau^order of sum_j c_j tau^j, j = 0..5"""
    row = np.zeros(6)
    for j in range(order, 6):
        row[j] = math.factorial(j) / math.factorial(j - order) * tau ** (j - order)
    return row


def _jmt_axis(values: np.ndarray, v0: float, a0: float) -> np.ndarray:
    """Quintic coefficients (SEGMENTS, 6) through 0, values[0..4] on 1 s segments"""
    n = SEGMENTS * 6
    A = np.zeros((n, n))
    b = np.zeros(n)
    knots = np.concatenate([[0.0], values])
    r = 0

    def put(segment: int, order: int, tau: float, rhs: float, other: Optional[int] = None):
        nonlocal r
        A[r, segment * 6:(segment + 1) * 6] = _derivative_row(order, tau)
        if other is not None:
            A[r, other * 6:(other + 1) * 6] = -_derivative_row(order, 0.0)
        b[r] = rhs
        r += 1

    for k in range(SEGMENTS):
        put(k, 0, 0.0, knots[k])
        put(k, 0, 1.0, knots[k + 1])
    for k in range(1, SEGMENTS):
        for order in range(1, 5):
            put(k - 1, order, 1.0, 0.0, other=k)
    put(0, 1, 0.0, v0 * SEGMENT_S)
    put(0, 2, 0.0, a0 * SEGMENT_S ** 2)
    put(SEGMENTS - 1, 3, 1.0, 0.0)
    put(SEGMENTS - 1, 4, 1.0, 0.0)

    try:
        return np.linalg.solve(A, b).reshape(SEGMENTS, 6)
    except np.linalg.LinAlgError as e:
        raise SingularSystem(str(e)) from e


def jmt_interpolate(waypoints: Sequence[Tuple[float, float]],
                    velocity: Tuple[float, float] = (0.0, 0.0),
                    acceleration: Tuple[float, float] = (0.0, 0.0)) -> Trajectory:
    """
    Piecewise-quintic jerk-minimizing fit through the origin and 5 waypoints

    Position and its first four derivatives are continuous at the knots;
    the start takes the given velocity/acceleration, the end has zero jerk
    and snap. Resampled every 0.25 s to 20 points on (0, 5].
    """
    points = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    if len(points) != SEGMENTS:
        raise ShapeMismatch(f"expected {SEGMENTS} waypoints, got {len(points)}")
    times = INTERP_STEP_S * np.arange(1, int(SEGMENTS / INTERP_STEP_S) + 1)
    out = np.zeros((len(times), 2))
    for axis in range(2):
        coeffs = _jmt_axis(points[:, axis], velocity[axis], acceleration[axis])
        for i, t in enumerate(times):
            seg = min(int(math.ceil(t / SEGMENT_S - 1e-12)) - 1, SEGMENTS - 1)
            tau = t / SEGMENT_S - seg
            out[i, axis] = coeffs[seg] @ (tau ** np.arange(6))
    return Trajectory(times, out, "interp20")


def boundary_from_prompt(prompt: str) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """Start velocity (v0, 0) and acceleration (a, 0) in the ego frame"""
    scene = parse_prompt(prompt)
    return (scene.v0, 0.0), (scene.a, 0.0)


def average_trajectories(trajectories: Sequence[Trajectory]) -> Trajectory:
    """Pointwise equal-weight mean"""
    if not trajectories:
        raise ShapeMismatch("no trajectories to average")
    first = trajectories[0]
    for traj in trajectories[1:]:
        if traj.points.shape != first.points.shape or not np.array_equal(traj.times, first.times):
            raise ShapeMismatch("trajectories do not share timestamps")
    mean = np.mean(np.stack([t.points for t in trajectories]), axis=0)
    return Trajectory(first.times.copy(), mean, first.resolution)


# ==================== SCALING ====================

@dataclass
class ScaledPrediction:
    prefix_tokens: List[int]
    outcomes: List[RolloutOutcome]
    interpolated: List[Trajectory]
    mean: Optional[Trajectory]
    prefix_passes: int
    rollout_passes: int

    @property
    def failures(self) -> int:
        return sum(o.failed for o in self.outcomes)

    def waypoint_spread(self) -> np.ndarray:
        """Inter-rollout std of the 1..5 s points, per waypoint (Euclidean)"""
        valid = [o.waypoints for o in self.outcomes if not o.failed]
        if len(valid) < 2:
            return np.zeros(SEGMENTS)
        pts = np.asarray(valid, dtype=np.float64)
        return np.sqrt(pts.var(axis=0).sum(axis=-1))


def predict_scaled(model: TinyLM, record: DrivingRecord, layout: ScaffoldLayout, n: int,
                   temperature: float, seed: int, plan: Optional[BlockPlan] = None,
                   prefix: Optional[PrefixState] = None, max_workers: int = 1) -> ScaledPrediction:
    """Prefix once, N rollouts, JMT each valid rollout, average"""
    prompt_ids = layout.vocab.encode_prompt(record.prompt)
    prefix = prefix or decode_shared_prefix(model, prompt_ids, layout, plan)
    outcomes = rollout_trajectories(model, prefix, layout, n, temperature, seed, plan, max_workers)
    velocity, acceleration = boundary_from_prompt(record.prompt)
    interpolated = [jmt_interpolate(o.waypoints, velocity, acceleration) for o in outcomes if not o.failed]
    return ScaledPrediction(
        prefix_tokens=prefix.tokens,
        outcomes=outcomes,
        interpolated=interpolated,
        mean=average_trajectories(interpolated) if interpolated else None,
        prefix_passes=prefix.passes,
        rollout_passes=sum(o.passes for o in outcomes),
    )


def scaling_sweep(model: TinyLM, layout: ScaffoldLayout, records: Sequence[DrivingRecord],
                  config: RolloutConfig = RolloutConfig()) -> Tuple[List[Dict], List[Dict]]:
    """
    Per-sample ADE@3s/@5s for every N in config.sweep

    Returns:
        (per-sample rows, per-N summary rows with mean and standard error)
    """
    seed = config.seed if config.seed is not None else 0
    plan = plan_blocks(layout, config.block_size)
    records = list(records)[:config.max_samples]
    rows: List[Dict] = []
    console.step(f"Scaling sweep N={config.sweep} over {len(records)} samples")
    for sample_id, record in console.progress(enumerate(records), desc="scale", total=len(records)):
        prefix = decode_shared_prefix(model, layout.vocab.encode_prompt(record.prompt), layout, plan)
        for n in config.sweep:
            temperature = config.temperature
            pred = predict_scaled(model, record, layout, n, temperature, seed * 1_000_003 + sample_id,
                                  plan, prefix, config.max_workers)
            nan = float("nan")
            at_s = pred.mean.at_seconds() if pred.mean is not None else None
            spread = pred.waypoint_spread()
            rows.append({
                "sample_id": sample_id,
                "n": n,
                "ade_3s": ade(at_s, record.waypoints, 3) if at_s is not None else nan,
                "ade_5s": ade(at_s, record.waypoints, 5) if at_s is not None else nan,
                "failures": pred.failures,
                "prefix_passes": pred.prefix_passes,
                "rollout_passes": pred.rollout_passes,
                **{f"spread_{t + 1}s": float(spread[t]) for t in range(SEGMENTS)},
            })
    return rows, summarize_sweep(rows, config.sweep)


def summarize_sweep(rows: Sequence[Dict], sweep: Sequence[int]) -> List[Dict]:
    summary = []
    for n in sweep:
        picked = [r for r in rows if r["n"] == n]
        entry = {"n": n, "samples": len(picked)}
        for col in ("ade_3s", "ade_5s"):
            values = np.array([r[col] for r in picked], dtype=np.float64)
            values = values[np.isfinite(values)]
            entry[f"{col}_mean"] = float(values.mean()) if len(values) else float("nan")
            entry[f"{col}_stderr"] = (float(values.std(ddof=1) / math.sqrt(len(values)))
                                      if len(values) > 1 else 0.0)
        entry["failures"] = int(sum(r["failures"] for r in picked))
        summary.append(entry)
    return summary


def endpoint_variance(model: TinyLM, record: DrivingRecord, layout: ScaffoldLayout, n: int = 1,
                      repetitions: int = 200, temperature: float = 0.7, seed: int = 0,
                      plan: Optional[BlockPlan] = None, stream: int = 0) -> np.ndarray:
    """
    Per-coordinate variance of the 5 s endpoint of the n-rollout mean over
    repeated experiments; `stream` picks an independent set of rollout seeds
    """
    prompt_ids = layout.vocab.encode_prompt(record.prompt)
    prefix = decode_shared_prefix(model, prompt_ids, layout, plan)
    velocity, acceleration = boundary_from_prompt(record.prompt)

    endpoints = []
    for r in range(repetitions):
        outcomes = rollout_trajectories(model, prefix, layout, n, temperature,
                                        seed * 1_000_003 + 2 * r + stream, plan)
        trajs = [jmt_interpolate(o.waypoints, velocity, acceleration) for o in outcomes if not o.failed]
        if trajs:
            endpoints.append(average_trajectories(trajs).points[-1])
    if len(endpoints) < 2:
        return np.full(2, np.nan)
    return np.array(endpoints).var(axis=0, ddof=1)


def endpoint_variance_ratio(model: TinyLM, record: DrivingRecord, layout: ScaffoldLayout,
                            n: int = 4, repetitions: int = 200, temperature: float = 0.7,
                            seed: int = 0, plan: Optional[BlockPlan] = None) -> np.ndarray:
    """
    Endpoint variance of the N-rollout mean divided by that of single
    rollouts; NaN for a coordinate whose single-rollout variance is 0
    """
    single = endpoint_variance(model, record, layout, 1, repetitions, temperature, seed, plan, stream=0)
    means = endpoint_variance(model, record, layout, n, repetitions, temperature, seed, plan, stream=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(single > 0, means / single, np.nan)
