"""
decoders/section_diffusion_decoder.py
Diffusion-only decoding: confidence-thresholded unmasking per block
"""

from typing import Optional, Sequence

import numpy as np

from decoders.base_decoder import BaseDecoder, DecodeConfig, DecodeResult, DecodeSession
from tools.schema_scaffold import BlockPlan, ScaffoldLayout, plan_blocks
from tools.tiny_lm import AttentionMode, TinyLM, sample_token, softmax


class SectionDiffusionDecoder(BaseDecoder):
    """
    For each section-aligned block, repeat bidirectional passes and
    finalize every masked value whose confidence reaches tau (at least the
    single most confident one) until the block is complete; then one
    commit pass writes the finished block into the cache.

    Confidence is the top probability after renormalising over the slot's
    static token set. Within a pass positions are finalized in descending
    confidence, each choice respecting the slots already finalized.
    """

    name = "sd"

    def __init__(self, model: TinyLM, layout: ScaffoldLayout, config: Optional[DecodeConfig] = None,
                 plan: Optional[BlockPlan] = None):
        super().__init__(model, layout, config)
        self.plan = plan or plan_blocks(layout, self.config.block_size)

    def denoise_step(self, session: DecodeSession, start: int, end: int) -> int:
        """One bidirectional pass over [start, end); returns positions finalized"""
        layout = self.layout
        mask = layout.vocab.mask_id
        masked = [p for p in range(start, end) if session.tokens[p] == mask]
        logits, _ = session.bidirectional(session.tokens[start:end])

        confidence = {}
        for p in masked:
            static = layout.static_allowed(p)
            confidence[p] = float(softmax(logits[p - start][static]).max())
        order = sorted(masked, key=lambda p: (-confidence[p], p))
        chosen = [p for p in order if confidence[p] >= self.config.tau] or order[:1]

        for p in chosen:
            allowed = layout.allowed(p, session.tokens, causal=False)
            temperature = self.config.temperature(layout.section_of(p))
            session.tokens[p] = sample_token(logits[p - start], temperature, session.rng, allowed)
        return len(chosen)

    def run(self, session: DecodeSession):
        mask = self.layout.vocab.mask_id
        commit_mode = AttentionMode(self.config.sd_commit)
        for block in self.plan.blocks:
            start, end = block.token_start, block.token_end
            while any(session.tokens[p] == mask for p in block.positions):
                self.denoise_step(session, start, end)
            _, candidate = session.run_pass(session.tokens[start:end], commit_mode)
            session.commit(candidate)


def decode_section_diffusion(model: TinyLM, prompt_ids: Sequence[int], layout: ScaffoldLayout,
                             plan: Optional[BlockPlan] = None, tau: Optional[float] = None,
                             config: Optional[DecodeConfig] = None) -> DecodeResult:
    config = config or DecodeConfig(strategy="sd")
    if tau is not None:
        config = config.model_copy(update={"tau": tau})
    return SectionDiffusionDecoder(model, layout, config, plan).decode(prompt_ids)
