"""
decoders/scaffold_spec_decoder.py
Scaffold speculative decoding over section-aligned blocks

Anchors are pre-filled and auto-accepted; only value positions are drafted
and verified. A block whose draft is fully accepted costs two passes.
"""

from typing import Optional, Sequence

from decoders.base_decoder import BaseDecoder, DecodeConfig, DecodeResult, DecodeSession
from tools.schema_scaffold import SECTION_ORDER, BlockPlan, ScaffoldLayout, plan_blocks
from tools.tiny_lm import TinyLM


class ScaffoldSpecDecoder(BaseDecoder):
    name = "ss"

    def __init__(self, model: TinyLM, layout: ScaffoldLayout, config: Optional[DecodeConfig] = None,
                 plan: Optional[BlockPlan] = None):
        super().__init__(model, layout, config)
        self.plan = plan or plan_blocks(layout, self.config.block_size)

    def run_blocks(self, session: DecodeSession, sections=SECTION_ORDER):
        """Decode the blocks of `sections` (a prefix of the section order)"""
        blocks = [b for b in self.plan.blocks if b.section in sections]
        pending = False
        for block in blocks:
            if pending:
                session.commit_pending(block.token_start)
            pending = session.speculate(block.token_start, block.token_end, verify_anchors=False)
        return pending

    def run(self, session: DecodeSession):
        self.run_blocks(session)


def decode_scaffold_spec(model: TinyLM, prompt_ids: Sequence[int], layout: ScaffoldLayout,
                         plan: Optional[BlockPlan] = None, config: Optional[DecodeConfig] = None) -> DecodeResult:
    return ScaffoldSpecDecoder(model, layout, config, plan).decode(prompt_ids)
