"""
decoders/base_decoder.py
Shared decoding machinery: config, trace, session state and the
draft/verify loop used by the speculative strategies
"""

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tools.errors import ParseError
from tools.schema_scaffold import SECTION_ORDER, DrivingRecord, ScaffoldLayout, parse_output
from tools.tiny_lm import AttentionMode, CandidateKV, KVCache, TinyLM, argmax_token, non_special_ids, sample_token

Strategy = Literal["ar", "sd", "selfspec", "ss"]


class DecodeConfig(BaseModel):
    """Decoding strategy and its knobs"""
    model_config = ConfigDict(extra="forbid")

    strategy: Strategy = "ss"
    block_size: int = Field(default=32, ge=1)
    tau: float = Field(default=0.9, gt=0.0, le=1.0)
    temperatures: Dict[str, float] = Field(default_factory=lambda: {s: 0.0 for s in SECTION_ORDER})
    sd_commit: Literal["bidirectional", "causal"] = "bidirectional"
    seed: Optional[int] = None

    def temperature(self, section: str) -> float:
        return float(self.temperatures.get(section, 0.0))


@dataclass
class DecodeTrace:
    """Forward-pass, acceptance and timing accounting for one decode"""
    forward_passes: Dict[str, int] = field(default_factory=lambda: {"causal": 0, "bidirectional": 0})
    tokens_value: int = 0
    tokens_scaffold: int = 0
    accepted_runs: List[int] = field(default_factory=list)
    rejections: int = 0
    bonus: int = 0
    anchor_miss: int = 0
    wall_time: float = 0.0

    @property
    def total_passes(self) -> int:
        return sum(self.forward_passes.values())

    @property
    def tokens_total(self) -> int:
        return self.tokens_value + self.tokens_scaffold

    @property
    def tok_per_step(self) -> float:
        return self.tokens_total / self.total_passes if self.total_passes else 0.0

    @property
    def tokens_per_second(self) -> float:
        return self.tokens_total / self.wall_time if self.wall_time > 0 else 0.0

    @property
    def mean_accepted_run(self) -> float:
        return float(np.mean(self.accepted_runs)) if self.accepted_runs else 0.0

    def to_dict(self) -> dict:
        return {
            "forward_passes": dict(self.forward_passes, total=self.total_passes),
            "tokens_committed": {
                "value": self.tokens_value,
                "scaffold": self.tokens_scaffold,
                "total": self.tokens_total,
            },
            "draft_accept_events": {
                "accepted_runs": list(self.accepted_runs),
                "rejections": self.rejections,
                "bonus": self.bonus,
            },
            "anchor_miss": self.anchor_miss,
            "tok_per_step": self.tok_per_step,
            "tokens_per_second": self.tokens_per_second,
            "wall_time": self.wall_time,
        }


@dataclass
class DecodeResult:
    tokens: List[int]
    trace: DecodeTrace
    parsed: Optional[DrivingRecord]
    parse_error: Optional[str] = None
    error: Optional[ParseError] = field(default=None, repr=False)

    @property
    def structural_valid(self) -> bool:
        return self.parsed is not None


class DecodeSession:
    """
    Mutable state of one decode: the cache, the response tokens (MASK where
    undecided), the causal row predicting the next uncommitted position,
    and the trace
    """

    def __init__(self, model: TinyLM, layout: ScaffoldLayout, config: DecodeConfig,
                 rng: Optional[np.random.Generator] = None, prefill_template: bool = True):
        self.model = model
        self.layout = layout
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed if config.seed is not None else 0)
        self.cache: KVCache = model.new_cache()
        self.prompt_len = 0
        self.trace = DecodeTrace()
        self.next_logits: Optional[np.ndarray] = None
        mask = layout.vocab.mask_id
        self.tokens: List[int] = list(layout.template) if prefill_template else [mask] * layout.total_len
        self._free_ids = non_special_ids(len(layout.vocab), layout.vocab.special_ids)

    def fork(self, config: Optional[DecodeConfig] = None,
             rng: Optional[np.random.Generator] = None) -> "DecodeSession":
        """Independent copy sharing nothing mutable; the copy starts a fresh trace"""
        clone = DecodeSession.__new__(DecodeSession)
        clone.model = self.model
        clone.layout = self.layout
        clone.config = config or self.config
        clone.rng = rng if rng is not None else np.random.default_rng(0)
        clone.cache = self.cache.fork()
        clone.prompt_len = self.prompt_len
        clone.trace = DecodeTrace()
        clone.next_logits = self.next_logits
        clone.tokens = list(self.tokens)
        clone._free_ids = self._free_ids
        return clone

    # ---------- passes ----------

    def run_pass(self, block: Sequence[int], mode: AttentionMode):
        logits, candidate = self.model.forward(self.cache, block, mode)
        self.trace.forward_passes[mode.value] += 1
        return logits, candidate

    def causal(self, block: Sequence[int]):
        return self.run_pass(block, AttentionMode.CAUSAL)

    def bidirectional(self, block: Sequence[int]):
        return self.run_pass(block, AttentionMode.BIDIRECTIONAL)

    def commit(self, candidate: CandidateKV):
        self.cache.commit(candidate)

    @property
    def committed(self) -> int:
        """Response positions whose KV is in the cache"""
        return self.cache.committed_len - self.prompt_len

    def prefill(self, prompt_ids: Sequence[int]):
        """Commit the prompt with one causal pass"""
        logits, candidate = self.causal(prompt_ids)
        self.commit(candidate)
        self.prompt_len = len(prompt_ids)
        self.next_logits = logits[-1]

    def commit_pending(self, upto: int):
        """Causal pass committing response positions committed..upto-1"""
        if self.committed >= upto:
            return
        logits, candidate = self.causal(self.tokens[self.committed:upto])
        self.commit(candidate)
        self.next_logits = logits[-1]

    # ---------- token choice ----------

    def choose(self, pos: int, row: np.ndarray, count_anchor_miss: bool = False) -> int:
        """
        Left-to-right choice at `pos`: the template token at anchors,
        otherwise the constrained argmax (or a sample when the section's
        temperature is positive) given the tokens before `pos`
        """
        layout = self.layout
        if layout.is_anchor(pos):
            expected = layout.template[pos]
            if count_anchor_miss and argmax_token(row, self._free_ids) != expected:
                self.trace.anchor_miss += 1
            return expected
        allowed = layout.allowed(pos, self.tokens, causal=True)
        temperature = self.config.temperature(layout.section_of(pos))
        return sample_token(row, temperature, self.rng, allowed)

    def draft_allowed(self, pos: int) -> np.ndarray:
        if self.layout.is_anchor(pos):
            return self._free_ids
        return self.layout.static_allowed(pos)

    # ---------- speculative block loop ----------

    def speculate(self, start: int, end: int, verify_anchors: bool) -> bool:
        """
        Draft/verify the span [start, end) until every position is final

        Drafts fill every MASK position with one bidirectional pass; a
        causal pass over the remainder verifies drafted positions left to
        right. The first mismatch is replaced by the verifier's choice
        (the bonus token), later drafts are discarded and the remainder is
        re-drafted. Accepted causal KV is committed.

        Returns True when the span ends with a bonus token whose KV is not
        yet committed.
        """
        mask = self.layout.vocab.mask_id
        cur = start
        while True:
            drafted = [p for p in range(cur, end) if self.tokens[p] == mask]
            if drafted:
                logits, _ = self.bidirectional(self.tokens[cur:end])
                for p in drafted:
                    self.tokens[p] = argmax_token(logits[p - cur], self.draft_allowed(p))
            drafted_set = set(drafted)

            logits, candidate = self.causal(self.tokens[cur:end])
            mismatch = None
            run = 0
            for p in range(cur, end):
                if p not in drafted_set:
                    continue
                if self.layout.is_anchor(p) and not verify_anchors:
                    continue
                row = self.next_logits if p == cur else logits[p - cur - 1]
                choice = self.choose(p, row)
                if choice == self.tokens[p]:
                    run += 1
                    continue
                self.tokens[p] = choice
                mismatch = p
                break

            if drafted:
                self.trace.accepted_runs.append(run)
            if mismatch is None:
                self.commit(candidate)
                self.next_logits = logits[-1]
                return False

            self.trace.rejections += 1
            self.trace.bonus += 1
            if mismatch > cur:
                self.commit(candidate.prefix(mismatch - cur))
                self.next_logits = logits[mismatch - cur - 1]
            for q in drafted:
                if q > mismatch:
                    self.tokens[q] = mask
            cur = mismatch
            if cur == end - 1:
                return True


class BaseDecoder(ABC):
    """Abstract base class for all decoding strategies"""

    name = "base"
    prefill_template = True

    def __init__(self, model: TinyLM, layout: ScaffoldLayout, config: Optional[DecodeConfig] = None):
        self.model = model
        self.layout = layout
        self.config = config or DecodeConfig(strategy=self.name)
        self.decode_count = 0

    def new_session(self, rng: Optional[np.random.Generator] = None) -> DecodeSession:
        return DecodeSession(self.model, self.layout, self.config, rng, self.prefill_template)

    @abstractmethod
    def run(self, session: DecodeSession):
        """
        Fill session.tokens after prefill
        Must be implemented by each strategy
        """
        pass

    def decode(self, prompt_ids: Sequence[int], rng: Optional[np.random.Generator] = None) -> DecodeResult:
        """Decode one prompt into a full response"""
        session = self.new_session(rng)
        started = time.perf_counter()
        session.prefill(prompt_ids)
        self.run(session)
        session.trace.wall_time = time.perf_counter() - started
        self.decode_count += 1
        return finish(session)


def finish(session: DecodeSession) -> DecodeResult:
    """Fill token accounting and parse the response"""
    layout = session.layout
    session.trace.tokens_value = len(layout.editable)
    session.trace.tokens_scaffold = len(layout.anchors)
    parsed, error = None, None
    try:
        parsed = parse_output(session.tokens, layout)
    except ParseError as e:
        error = e
    return DecodeResult(tokens=list(session.tokens), trace=session.trace, parsed=parsed,
                        parse_error=str(error) if error else None, error=error)
