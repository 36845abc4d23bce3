"""
sasd_training.py
Section-aware training: corruption, weighted masked-diffusion loss,
causal LM loss, joint objective, Adam loop and gradient checks

One forward pass over [prompt ; x_0 ; x_t] serves both branches. The prompt
and x_0 attend causally (the AR stream). An x_t position in block b sees the
prompt, the clean x_0 tokens before b's token span, and every x_t position
inside b's span. x_0 and x_t share position ids.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from tools import console
from tools.checkpoint_io import save_checkpoint
from tools.errors import Diverged, MaskOnAnchor
from tools.schema_scaffold import (
    SECTION_ORDER, BlockPlan, DrivingRecord, ScaffoldLayout, plan_blocks, serialize_record,
)
from tools.tiny_lm import (
    ModelConfig, Params, backward_full, forward_full, init_params, log_softmax,
    params_finite, zeros_like_params,
)


# ==================== CONFIG ====================

class SectionWeights(BaseModel):
    """Per-section loss weights w_s"""
    model_config = ConfigDict(extra="forbid")

    critical_objects: float = Field(default=1.5, gt=0)
    explanation: float = Field(default=1.0, gt=0)
    future_meta_behavior: float = Field(default=2.0, gt=0)
    trajectory: float = Field(default=3.0, gt=0)

    def get(self, section: str) -> float:
        return getattr(self, section)

    @classmethod
    def uniform(cls) -> "SectionWeights":
        return cls(critical_objects=1.0, explanation=1.0, future_meta_behavior=1.0, trajectory=1.0)


class NoiseSpec(BaseModel):
    """Per-section Beta(alpha_s, beta_s) masking-level distributions"""
    model_config = ConfigDict(extra="forbid")

    critical_objects: Tuple[float, float] = (1.0, 2.0)
    explanation: Tuple[float, float] = (1.0, 1.0)
    future_meta_behavior: Tuple[float, float] = (1.0, 1.5)
    trajectory: Tuple[float, float] = (2.0, 1.0)

    @field_validator("critical_objects", "explanation", "future_meta_behavior", "trajectory")
    @classmethod
    def _positive(cls, value):
        if value[0] <= 0 or value[1] <= 0:
            raise ValueError(f"Beta parameters must be positive, got {value}")
        return value

    def get(self, section: str) -> Tuple[float, float]:
        return getattr(self, section)

    def mean(self, section: str) -> float:
        a, b = self.get(section)
        return a / (a + b)


class TrainConfig(BaseModel):
    """Training recipe"""
    model_config = ConfigDict(extra="forbid")

    mix_alpha: float = Field(default=0.5, ge=0)
    mix_beta: float = Field(default=0.5, ge=0)
    learning_rate: float = Field(default=3e-3, gt=0)
    warmup_steps: int = Field(default=100, ge=0)
    steps: int = Field(default=3000, ge=0)
    batch_size: int = Field(default=8, ge=1)
    block_size: int = Field(default=32, ge=1)
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = Field(default=1.0, ge=0)
    eval_every: int = Field(default=250, ge=1)
    val_batch: int = Field(default=64, ge=1)
    use_section_weights: bool = True
    use_section_noise: bool = True
    weights: SectionWeights = SectionWeights()
    noise: NoiseSpec = NoiseSpec()
    seed: Optional[int] = None

    @property
    def mix(self) -> Tuple[float, float]:
        return self.mix_alpha, self.mix_beta

    def effective_weights(self) -> SectionWeights:
        return self.weights if self.use_section_weights else SectionWeights.uniform()


# ==================== CORRUPTION ====================

@dataclass
class CorruptedExample:
    prompt: np.ndarray                  # (P,)
    x0: np.ndarray                      # (L,)
    xt: np.ndarray                      # (L,)
    mask_sets: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def masked(self) -> np.ndarray:
        parts = [self.mask_sets[s] for s in SECTION_ORDER if s in self.mask_sets]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def sample_noise(spec: NoiseSpec, rng: np.random.Generator, per_section: bool = True) -> Dict[str, float]:
    """
    Masking level t_s for every section

    With per_section=False one t ~ U(0, 1) is shared by all sections.
    """
    if not per_section:
        t = float(rng.random())
        return {s: t for s in SECTION_ORDER}
    return {s: float(rng.beta(*spec.get(s))) for s in SECTION_ORDER}


def corrupt(x0: Sequence[int], layout: ScaffoldLayout, levels: Dict[str, float],
            rng: np.random.Generator, prompt: Sequence[int] = ()) -> CorruptedExample:
    """Mask each editable position of section s independently with probability t_s"""
    x0 = np.asarray(x0, dtype=np.int64)
    xt = x0.copy()
    mask_sets = {}
    for section in SECTION_ORDER:
        positions = np.asarray(layout.section_editable[section], dtype=np.int64)
        hits = positions[rng.random(len(positions)) < levels[section]]
        xt[hits] = layout.vocab.mask_id
        mask_sets[section] = hits
    return CorruptedExample(np.asarray(prompt, dtype=np.int64), x0, xt, mask_sets)


# ==================== OBJECTIVE ====================

def training_attention(prompt_len: int, plan: BlockPlan, total_len: int) -> np.ndarray:
    """Boolean (P + 2L, P + 2L) attention mask over [prompt ; x_0 ; x_t]"""
    p, n = prompt_len, total_len
    size = p + 2 * n
    allowed = np.zeros((size, size), dtype=bool)
    allowed[:p + n, :p + n] = np.tril(np.ones((p + n, p + n), dtype=bool))
    for block in plan.blocks:
        rows = slice(p + n + block.token_start, p + n + block.token_end)
        allowed[rows, :p + block.token_start] = True
        allowed[rows, rows] = True
    return allowed


class SasdObjective:
    """
    Joint dual-stream objective on a fixed scaffold

    All prompts in a batch must share one length (the synthetic prompt
    format is fixed width), so the attention mask is built once.
    """

    def __init__(self, model_config: ModelConfig, layout: ScaffoldLayout, block_size: int, prompt_len: int):
        self.model_config = model_config
        self.layout = layout
        self.plan = plan_blocks(layout, block_size)
        self.prompt_len = prompt_len
        self.total_len = layout.total_len
        self.allowed = training_attention(prompt_len, self.plan, self.total_len)
        self.positions = np.concatenate([
            np.arange(prompt_len + self.total_len),
            np.arange(prompt_len, prompt_len + self.total_len),
        ])

    def _stack(self, examples: Sequence[CorruptedExample]) -> np.ndarray:
        for ex in examples:
            if len(ex.prompt) != self.prompt_len:
                raise ValueError(f"prompt length {len(ex.prompt)} != {self.prompt_len}")
            for pos in ex.masked:
                if self.layout.is_anchor(int(pos)):
                    raise MaskOnAnchor(f"position {int(pos)} is an anchor")
        return np.stack([np.concatenate([ex.prompt, ex.x0, ex.xt]) for ex in examples])

    def _logits(self, params: Params, examples: Sequence[CorruptedExample]):
        return forward_full(params, self.model_config, self._stack(examples), self.positions, self.allowed)

    # ---------- per-branch terms ----------

    def _mdm_terms(self, logp: np.ndarray, ex: CorruptedExample, weights: SectionWeights,
                   dlogits: Optional[np.ndarray], scale: float) -> Dict[str, float]:
        offset = self.prompt_len + self.total_len
        terms = {}
        for section in SECTION_ORDER:
            hits = ex.mask_sets.get(section, np.zeros(0, dtype=np.int64))
            if len(hits) == 0:
                terms[section] = 0.0
                continue
            coef = weights.get(section) / len(hits)
            rows = offset + hits
            nll = -logp[rows, ex.x0[hits]].sum()
            terms[section] = float(coef * nll)
            if dlogits is not None:
                g = np.exp(logp[rows])
                g[np.arange(len(hits)), ex.x0[hits]] -= 1.0
                dlogits[rows] += scale * coef * g
        return terms

    def _ar_term(self, logp: np.ndarray, ex: CorruptedExample,
                 dlogits: Optional[np.ndarray], scale: float) -> float:
        rows = np.arange(self.prompt_len - 1, self.prompt_len + self.total_len - 1)
        nll = -logp[rows, ex.x0].sum() / self.total_len
        if dlogits is not None:
            g = np.exp(logp[rows])
            g[np.arange(self.total_len), ex.x0] -= 1.0
            dlogits[rows] += scale * g / self.total_len
        return float(nll)

    # ---------- public losses ----------

    def mdm_terms(self, params: Params, example: CorruptedExample, weights: SectionWeights) -> Dict[str, float]:
        """Per-section weighted MDM contributions for one example"""
        logits, _ = self._logits(params, [example])
        return self._mdm_terms(log_softmax(logits[0]), example, weights, None, 1.0)

    def weighted_mdm_loss(self, params: Params, example: CorruptedExample, weights: SectionWeights) -> float:
        """Sum over sections of (w_s / |M_s|) * masked NLL; empty sections add 0"""
        return float(sum(self.mdm_terms(params, example, weights).values()))

    def ar_loss(self, params: Params, x0: Sequence[int], prompt: Sequence[int]) -> float:
        """Mean next-token NLL over all L response positions, anchors included"""
        x0 = np.asarray(x0, dtype=np.int64)
        ex = CorruptedExample(np.asarray(prompt, dtype=np.int64), x0, x0.copy(), {})
        logits, _ = self._logits(params, [ex])
        return self._ar_term(log_softmax(logits[0]), ex, None, 1.0)

    def joint_loss(self, params: Params, example: CorruptedExample, weights: SectionWeights,
                   mix: Tuple[float, float] = (0.5, 0.5)) -> float:
        return self.loss_and_grads(params, [example], weights, mix, with_grads=False)[0]["joint"]

    def loss_and_grads(self, params: Params, examples: Sequence[CorruptedExample], weights: SectionWeights,
                       mix: Tuple[float, float] = (0.5, 0.5), with_grads: bool = True):
        """
        Batch-mean losses and (optionally) their parameter gradients

        Returns:
            ({"mdm", "ar", "joint"} floats, grads or None, dlogits or None)
        """
        alpha, beta = mix
        logits, acts = self._logits(params, examples)
        n = len(examples)
        dlogits = np.zeros_like(logits) if with_grads else None
        mdm_total, ar_total = 0.0, 0.0
        for b, ex in enumerate(examples):
            logp = log_softmax(logits[b])
            row_grad = dlogits[b] if with_grads else None
            mdm_total += sum(self._mdm_terms(logp, ex, weights, row_grad, alpha / n).values())
            ar_total += self._ar_term(logp, ex, row_grad, beta / n)
        losses = {"mdm": mdm_total / n, "ar": ar_total / n}
        losses["joint"] = alpha * losses["mdm"] + beta * losses["ar"]
        if not with_grads:
            return losses, None, None
        grads = backward_full(params, self.model_config, acts, dlogits)
        return losses, grads, dlogits

    # ---------- validation ----------

    def exact_match(self, params: Params, records_tokens: Sequence[Tuple[np.ndarray, np.ndarray]],
                    sections: Sequence[str] = ("critical_objects", "future_meta_behavior")) -> float:
        """
        Teacher-forced causal exact match: the fraction of records whose
        value positions in `sections` are all predicted correctly
        """
        if not records_tokens:
            return 0.0
        layout = self.layout
        positions = [p for s in sections for p in layout.section_editable[s]]
        n_seq = self.prompt_len + self.total_len
        causal = np.tril(np.ones((n_seq, n_seq), dtype=bool))
        hits = 0
        for prompt, x0 in records_tokens:
            seq = np.concatenate([prompt, x0])[None, :]
            logits, _ = forward_full(params, self.model_config, seq, np.arange(n_seq), causal)
            logits = logits[0]
            ok = True
            for pos in positions:
                allowed = layout.allowed(pos, x0, causal=True)
                row = logits[self.prompt_len - 1 + pos]
                if int(allowed[np.argmax(row[allowed])]) != int(x0[pos]):
                    ok = False
                    break
            hits += ok
        return hits / len(records_tokens)


# ==================== OPTIMIZER ====================

class Adam:
    """Adaptive moment estimation with warmup-then-constant learning rate"""

    def __init__(self, params: Params, config: TrainConfig):
        self.config = config
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)
        self.t = 0

    def learning_rate(self, step: int) -> float:
        warmup = self.config.warmup_steps
        if warmup and step < warmup:
            return self.config.learning_rate * (step + 1) / warmup
        return self.config.learning_rate

    def step(self, params: Params, grads: Params) -> float:
        cfg = self.config
        lr = self.learning_rate(self.t)
        if cfg.grad_clip > 0:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > cfg.grad_clip:
                grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
        self.t += 1
        for name, g in grads.items():
            self.m[name] = cfg.adam_b1 * self.m[name] + (1 - cfg.adam_b1) * g
            self.v[name] = cfg.adam_b2 * self.v[name] + (1 - cfg.adam_b2) * g * g
            m_hat = self.m[name] / (1 - cfg.adam_b1 ** self.t)
            v_hat = self.v[name] / (1 - cfg.adam_b2 ** self.t)
            params[name] -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        return lr


# ==================== TRAINING LOOP ====================

@dataclass
class TrainResult:
    params: Params
    curve: List[Dict[str, float]]
    checkpoint: Optional[Path] = None


def encode_records(records: Sequence[DrivingRecord], layout: ScaffoldLayout) -> List[Tuple[np.ndarray, np.ndarray]]:
    vocab = layout.vocab
    return [
        (np.asarray(vocab.encode_prompt(r.prompt), dtype=np.int64),
         np.asarray(serialize_record(r, layout), dtype=np.int64))
        for r in records
    ]


def make_batch(encoded: Sequence[Tuple[np.ndarray, np.ndarray]], layout: ScaffoldLayout,
               config: TrainConfig, rng: np.random.Generator) -> List[CorruptedExample]:
    idx = rng.integers(len(encoded), size=config.batch_size)
    batch = []
    for i in idx:
        prompt, x0 = encoded[int(i)]
        levels = sample_noise(config.noise, rng, per_section=config.use_section_noise)
        batch.append(corrupt(x0, layout, levels, rng, prompt))
    return batch


def write_loss_curve(path, curve: Sequence[Dict[str, float]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["step", "mdm_loss", "ar_loss", "joint_loss", "val_metric"])
        writer.writeheader()
        for row in curve:
            writer.writerow(row)
    return path


def train(config: TrainConfig, dataset: Sequence[DrivingRecord], layout: ScaffoldLayout,
          model_config: ModelConfig, val_records: Sequence[DrivingRecord] = (),
          out_dir=None, params: Optional[Params] = None) -> TrainResult:
    """
    Run the joint-objective training loop

    Args:
        config: training recipe (seed defaults to the model seed)
        dataset: training records
        layout: compiled scaffold
        model_config: transformer shape
        val_records: records for the periodic exact-match metric
        out_dir: where checkpoint.fddr and loss_curve.csv go (None = no files)
        params: starting parameters (defaults to init_params(model_config))

    Raises:
        Diverged: loss or parameters became non-finite
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    seed = model_config.seed if config.seed is None else config.seed
    rng = np.random.default_rng(seed)
    params = init_params(model_config) if params is None else {k: v.copy() for k, v in params.items()}

    encoded = encode_records(dataset, layout)
    val_encoded = encode_records(list(val_records)[:config.val_batch], layout)
    objective = SasdObjective(model_config, layout, config.block_size, len(encoded[0][0]))
    weights = config.effective_weights()
    optimizer = Adam(params, config)
    curve: List[Dict[str, float]] = []

    console.step(f"Training {config.steps} steps, batch {config.batch_size}, d={config.block_size}")
    for step in console.progress(range(config.steps), desc="train", total=config.steps):
        batch = make_batch(encoded, layout, config, rng)
        losses, grads, _ = objective.loss_and_grads(params, batch, weights, config.mix)
        if not all(math.isfinite(v) for v in losses.values()):
            raise Diverged(f"non-finite loss at step {step}: {losses}")
        optimizer.step(params, grads)
        if not params_finite(params):
            raise Diverged(f"non-finite parameters after step {step}")

        last = step == config.steps - 1
        if (step + 1) % config.eval_every == 0 or last:
            val_metric = objective.exact_match(params, val_encoded) if val_encoded else float("nan")
            curve.append({
                "step": step + 1,
                "mdm_loss": round(losses["mdm"], 6),
                "ar_loss": round(losses["ar"], 6),
                "joint_loss": round(losses["joint"], 6),
                "val_metric": round(val_metric, 6),
            })
            console.info(f"step {step + 1}: joint={losses['joint']:.4f} mdm={losses['mdm']:.4f} "
                         f"ar={losses['ar']:.4f} val={val_metric:.3f}")

    result = TrainResult(params=params, curve=curve)
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.checkpoint = save_checkpoint(out_dir / "checkpoint.fddr", model_config, params,
                                            list(layout.vocab.tokens))
        write_loss_curve(out_dir / "loss_curve.csv", curve)
        console.ok(f"Checkpoint saved: {result.checkpoint}")
    return result


# ==================== GRADIENT CHECKS ====================

def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-5)


def finite_difference_check(fn: Callable[[np.ndarray], float], x: np.ndarray, analytic: np.ndarray,
                            indices: Optional[Sequence[int]] = None, h: float = 1e-5) -> float:
    """Max relative error of `analytic` against central differences of fn at x"""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.asarray(analytic, dtype=np.float64).reshape(-1)
    indices = range(flat.size) if indices is None else indices
    worst = 0.0
    for i in indices:
        old = flat[i]
        flat[i] = old + h
        plus = fn(x)
        flat[i] = old - h
        minus = fn(x)
        flat[i] = old
        worst = max(worst, relative_error(grad[i], (plus - minus) / (2 * h)))
    return worst


def grad_check(objective: SasdObjective, params: Params, example: CorruptedExample,
               weights: SectionWeights = SectionWeights(), mix: Tuple[float, float] = (0.5, 0.5),
               n_samples: int = 200, seed: int = 0, h: float = 1e-5) -> float:
    """
    Compare analytic joint-loss gradients with central differences on
    n_samples parameter entries drawn at random across all tensors
    """
    _, grads, _ = objective.loss_and_grads(params, [example], weights, mix)
    rng = np.random.default_rng(seed)
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    flat_ids = rng.choice(int(sizes.sum()), size=min(n_samples, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat_id in np.sort(flat_ids):
        t = int(np.searchsorted(bounds, flat_id, side="right"))
        name = names[t]
        local = int(flat_id - (bounds[t] - sizes[t]))
        tensor = params[name].reshape(-1)
        old = tensor[local]
        tensor[local] = old + h
        plus = objective.joint_loss(params, example, weights, mix)
        tensor[local] = old - h
        minus = objective.joint_loss(params, example, weights, mix)
        tensor[local] = old
        worst = max(worst, relative_error(float(grads[name].reshape(-1)[local]), (plus - minus) / (2 * h)))
    return worst
