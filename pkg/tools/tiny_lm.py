"""
tools/tiny_lm.py
Tiny dual-mode decoder transformer (numpy, float64)

One weight set, two attention modes: causal, and block-bidirectional over a
block given causal context. Inference runs against a forkable KV cache;
training runs full sequences under an explicit attention mask and
backpropagates by hand.
"""

import copy
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tools.errors import LengthOverflow, MaskInCausal, StaleCandidate

Params = Dict[str, np.ndarray]

LN_EPS = 1e-5
GELU_C = math.sqrt(2.0 / math.pi)


class ModelConfig(BaseModel):
    """Transformer shape and init seed"""
    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(default=0, ge=0)
    d_model: int = Field(default=64, ge=1)
    n_layers: int = Field(default=2, ge=1)
    n_heads: int = Field(default=4, ge=1)
    max_seq_len: int = Field(default=448, ge=1)
    init_scale: float = Field(default=0.02, gt=0)
    head_init_scale: float = Field(default=0.002, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


class AttentionMode(Enum):
    CAUSAL = "causal"
    BIDIRECTIONAL = "bidirectional"


# ==================== PARAMETERS ====================

def param_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Parameter names and shapes in checkpoint order"""
    d, v = config.d_model, config.vocab_size
    shapes = [("tok_emb", (v, d)), ("pos_emb", (config.max_seq_len, d))]
    for layer in range(config.n_layers):
        p = f"h{layer}."
        shapes += [
            (p + "ln1_g", (d,)), (p + "ln1_b", (d,)),
            (p + "w_qkv", (d, 3 * d)), (p + "b_qkv", (3 * d,)),
            (p + "w_o", (d, d)), (p + "b_o", (d,)),
            (p + "ln2_g", (d,)), (p + "ln2_b", (d,)),
            (p + "w_fc", (d, 4 * d)), (p + "b_fc", (4 * d,)),
            (p + "w_proj", (4 * d, d)), (p + "b_proj", (d,)),
        ]
    shapes += [("lnf_g", (d,)), ("lnf_b", (d,)), ("w_out", (d, v)), ("b_out", (v,))]
    return shapes


def init_params(config: ModelConfig) -> Params:
    """
    Deterministic parameters for (config, seed)

    LayerNorm gains start at 1 and biases at 0. The output projection uses
    a much smaller scale so fresh logits are close to uniform.
    """
    if config.vocab_size < 1:
        raise ValueError("vocab_size must be set before initialising parameters")
    rng = np.random.default_rng(config.seed)
    params: Params = {}
    for name, shape in param_shapes(config):
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            params[name] = np.ones(shape)
        elif leaf.startswith("b_") or leaf.endswith("_b"):
            params[name] = np.zeros(shape)
        elif leaf == "w_out":
            params[name] = rng.normal(0.0, config.head_init_scale, size=shape)
        else:
            params[name] = rng.normal(0.0, config.init_scale, size=shape)
    return params


def zeros_like_params(params: Params) -> Params:
    return {name: np.zeros_like(value) for name, value in params.items()}


def params_finite(params: Params) -> bool:
    return all(np.isfinite(value).all() for value in params.values())


# ==================== LAYERS ====================

def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_backward(dy, g, cache):
    xhat, inv = cache
    n = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, n).sum(axis=0)
    db = dy.reshape(-1, n).sum(axis=0)
    dxhat = dy * g
    dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    t = np.tanh(GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    dt = (1.0 - t ** 2) * GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _masked_softmax(scores, allowed):
    scores = np.where(allowed, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _forward(params: Params, config: ModelConfig, tokens: np.ndarray, positions: np.ndarray,
             allowed: np.ndarray, past: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None,
             record: bool = False):
    """
    Shared forward pass

    tokens: (B, T) ids; positions: (T,) position ids; allowed: (T, P + T)
    boolean attention mask where P is the number of past positions.
    Returns logits (B, T, V), the new per-layer (K, V) of shape (B, H, T, dh)
    and, with record=True, the activations backward() needs.
    """
    n_heads = config.n_heads
    scale = 1.0 / math.sqrt(config.head_dim)
    x = params["tok_emb"][tokens] + params["pos_emb"][positions][None, :, :]
    new_kv = []
    acts = []
    for layer in range(config.n_layers):
        p = f"h{layer}."
        h, ln1 = _layernorm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        qkv = h @ params[p + "w_qkv"] + params[p + "b_qkv"]
        q, k, v = (_split_heads(part, n_heads) for part in np.split(qkv, 3, axis=-1))
        new_kv.append((k, v))
        if past is not None:
            k_all = np.concatenate([past[layer][0], k], axis=2)
            v_all = np.concatenate([past[layer][1], v], axis=2)
        else:
            k_all, v_all = k, v
        att = _masked_softmax(q @ k_all.transpose(0, 1, 3, 2) * scale, allowed)
        y = _merge_heads(att @ v_all)
        x_mid = x + y @ params[p + "w_o"] + params[p + "b_o"]
        h2, ln2 = _layernorm(x_mid, params[p + "ln2_g"], params[p + "ln2_b"])
        f = h2 @ params[p + "w_fc"] + params[p + "b_fc"]
        g, t = _gelu(f)
        x = x_mid + g @ params[p + "w_proj"] + params[p + "b_proj"]
        if record:
            acts.append(dict(h=h, ln1=ln1, q=q, k=k, v=v, att=att, y=y, h2=h2, ln2=ln2, f=f, g=g, t=t))
    hf, lnf = _layernorm(x, params["lnf_g"], params["lnf_b"])
    logits = hf @ params["w_out"] + params["b_out"]
    if record:
        acts.append(dict(hf=hf, lnf=lnf, tokens=tokens, positions=positions))
    return logits, new_kv, acts


def forward_full(params: Params, config: ModelConfig, tokens: np.ndarray, positions: np.ndarray,
                 allowed: np.ndarray):
    """Cache-free forward over whole sequences; returns (logits, activations)"""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    logits, _, acts = _forward(params, config, tokens, np.asarray(positions), allowed, record=True)
    return logits, acts


def backward_full(params: Params, config: ModelConfig, acts, dlogits: np.ndarray) -> Params:
    """Gradients of a scalar loss given dL/dlogits from forward_full"""
    grads = zeros_like_params(params)
    n_heads = config.n_heads
    scale = 1.0 / math.sqrt(config.head_dim)
    d = config.d_model

    top = acts[-1]
    hf = top["hf"]
    grads["w_out"] = hf.reshape(-1, d).T @ dlogits.reshape(-1, dlogits.shape[-1])
    grads["b_out"] = dlogits.reshape(-1, dlogits.shape[-1]).sum(axis=0)
    dhf = dlogits @ params["w_out"].T
    dx, grads["lnf_g"], grads["lnf_b"] = _layernorm_backward(dhf, params["lnf_g"], top["lnf"])

    for layer in reversed(range(config.n_layers)):
        p = f"h{layer}."
        a = acts[layer]
        # MLP
        grads[p + "w_proj"] = a["g"].reshape(-1, 4 * d).T @ dx.reshape(-1, d)
        grads[p + "b_proj"] = dx.reshape(-1, d).sum(axis=0)
        df = _gelu_backward(dx @ params[p + "w_proj"].T, a["f"], a["t"])
        grads[p + "w_fc"] = a["h2"].reshape(-1, d).T @ df.reshape(-1, 4 * d)
        grads[p + "b_fc"] = df.reshape(-1, 4 * d).sum(axis=0)
        dh2 = df @ params[p + "w_fc"].T
        dln, grads[p + "ln2_g"], grads[p + "ln2_b"] = _layernorm_backward(dh2, params[p + "ln2_g"], a["ln2"])
        dx = dx + dln
        # attention
        grads[p + "w_o"] = a["y"].reshape(-1, d).T @ dx.reshape(-1, d)
        grads[p + "b_o"] = dx.reshape(-1, d).sum(axis=0)
        dy = _split_heads(dx @ params[p + "w_o"].T, n_heads)
        att = a["att"]
        datt = dy @ a["v"].transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dy
        dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
        dq = dscores @ a["k"]
        dk = dscores.transpose(0, 1, 3, 2) @ a["q"]
        dqkv = np.concatenate([_merge_heads(dq), _merge_heads(dk), _merge_heads(dv)], axis=-1)
        grads[p + "w_qkv"] = a["h"].reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
        grads[p + "b_qkv"] = dqkv.reshape(-1, 3 * d).sum(axis=0)
        dh = dqkv @ params[p + "w_qkv"].T
        dln, grads[p + "ln1_g"], grads[p + "ln1_b"] = _layernorm_backward(dh, params[p + "ln1_g"], a["ln1"])
        dx = dx + dln

    np.add.at(grads["tok_emb"], top["tokens"], dx)
    np.add.at(grads["pos_emb"], top["positions"], dx.sum(axis=0))
    return grads


# ==================== KV CACHE ====================

@dataclass
class CandidateKV:
    """Per-layer K/V for a block, not yet part of any cache"""
    context_len: int
    layers: List[Tuple[np.ndarray, np.ndarray]]     # each (H, T, dh)

    @property
    def length(self) -> int:
        return self.layers[0][0].shape[1] if self.layers else 0

    def prefix(self, n: int) -> "CandidateKV":
        """First n block positions (valid for causal candidates only)"""
        return CandidateKV(self.context_len, [(k[:, :n], v[:, :n]) for k, v in self.layers])


@dataclass
class KVCache:
    """Per-layer keys/values of every committed position"""
    layers: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    committed_len: int = 0

    @classmethod
    def empty(cls, config: ModelConfig) -> "KVCache":
        shape = (config.n_heads, 0, config.head_dim)
        return cls([(np.zeros(shape), np.zeros(shape)) for _ in range(config.n_layers)], 0)

    def commit(self, candidate: CandidateKV) -> "KVCache":
        """Append a candidate block in place"""
        if candidate.context_len != self.committed_len:
            raise StaleCandidate(
                f"candidate computed at context {candidate.context_len}, cache holds {self.committed_len}")
        if candidate.length == 0:
            return self
        self.layers = [
            (np.concatenate([k, ck], axis=1), np.concatenate([v, cv], axis=1))
            for (k, v), (ck, cv) in zip(self.layers, candidate.layers)
        ]
        self.committed_len += candidate.length
        return self

    def fork(self) -> "KVCache":
        return copy.deepcopy(self)

    def equals(self, other: "KVCache") -> bool:
        return self.committed_len == other.committed_len and all(
            np.array_equal(k1, k2) and np.array_equal(v1, v2)
            for (k1, v1), (k2, v2) in zip(self.layers, other.layers))


def commit_block(cache: KVCache, candidate: CandidateKV) -> KVCache:
    return cache.commit(candidate)


def fork_cache(cache: KVCache) -> KVCache:
    return cache.fork()


# ==================== TOKEN CHOICE ====================

def argmax_token(logits: np.ndarray, allowed: Optional[np.ndarray] = None) -> int:
    """Greedy choice, restricted to `allowed` ids when given (ties go to the lowest id)"""
    if allowed is None:
        return int(np.argmax(logits))
    return int(allowed[np.argmax(logits[allowed])])


def sample_token(logits: np.ndarray, temperature: float, rng: np.random.Generator,
                 allowed: Optional[np.ndarray] = None) -> int:
    """
    Draw from softmax(logits / temperature) over `allowed` ids

    temperature 0 is argmax. Callers pass the slot's allowed set; without one
    every id is eligible, so callers outside value slots must exclude
    specials themselves.
    """
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0:
        return argmax_token(logits, allowed)
    ids = np.arange(logits.shape[-1]) if allowed is None else allowed
    probs = softmax(logits[ids] / temperature)
    return int(ids[rng.choice(len(ids), p=probs)])


def non_special_ids(vocab_size: int, special_ids) -> np.ndarray:
    return np.array([i for i in range(vocab_size) if i not in special_ids], dtype=np.int64)


# ==================== MODEL ====================

class TinyLM:
    """
    Inference wrapper: parameters plus pass accounting

    forward() never touches a cache; callers commit the returned candidate.
    """

    def __init__(self, config: ModelConfig, params: Optional[Params] = None, mask_id: Optional[int] = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        self.mask_id = mask_id

        # Stats tracking, shared by worker threads
        self.total_passes = 0
        self.total_tokens = 0
        self._stats_lock = threading.Lock()

    def new_cache(self) -> KVCache:
        return KVCache.empty(self.config)

    def forward(self, cache: KVCache, block_tokens: Sequence[int],
                mode: AttentionMode = AttentionMode.CAUSAL) -> Tuple[np.ndarray, CandidateKV]:
        """
        Logits for a block given the committed cache

        Returns (T, V) logits and the block's candidate KV. In causal mode
        row j depends only on the cache and block positions <= j; in
        bidirectional mode every row sees the whole block.
        """
        block = np.asarray(block_tokens, dtype=np.int64).reshape(-1)
        n = block.shape[0]
        start = cache.committed_len
        if n == 0:
            return np.zeros((0, self.config.vocab_size)), CandidateKV(start, [])
        if mode is AttentionMode.CAUSAL and self.mask_id is not None and (block == self.mask_id).any():
            raise MaskInCausal("MASK token in a causal-mode block")
        if start + n > self.config.max_seq_len:
            raise LengthOverflow(f"{start + n} positions exceed max_seq_len={self.config.max_seq_len}")

        allowed = np.ones((n, start + n), dtype=bool)
        if mode is AttentionMode.CAUSAL:
            allowed[:, start:] = np.tril(np.ones((n, n), dtype=bool))
        past = [(k[None], v[None]) for k, v in cache.layers]
        logits, new_kv, _ = _forward(self.params, self.config, block[None, :],
                                     np.arange(start, start + n), allowed, past)

        with self._stats_lock:
            self.total_passes += 1
            self.total_tokens += n
        return logits[0], CandidateKV(start, [(k[0], v[0]) for k, v in new_kv])

    def full_logits(self, tokens: Sequence[int], allowed: np.ndarray,
                    positions: Optional[np.ndarray] = None) -> np.ndarray:
        """Cache-free logits for one sequence under an explicit mask"""
        tokens = np.asarray(tokens, dtype=np.int64)[None, :]
        if positions is None:
            positions = np.arange(tokens.shape[1])
        logits, _, _ = _forward(self.params, self.config, tokens, positions, allowed)
        return logits[0]

    def get_stats(self) -> Dict[str, int]:
        with self._stats_lock:
            return {"total_passes": self.total_passes, "total_tokens": self.total_tokens}


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))
