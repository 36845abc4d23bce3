"""
decoders/self_spec_decoder.py
Vanilla self-speculative decoding on fixed-size blocks

Blocks of d positions tile the whole response regardless of sections, and
scaffold positions are drafted and verified like values.
"""

from typing import Optional, Sequence

from decoders.base_decoder import BaseDecoder, DecodeConfig, DecodeResult, DecodeSession
from tools.schema_scaffold import ScaffoldLayout, fixed_size_blocks
from tools.tiny_lm import TinyLM


class SelfSpecDecoder(BaseDecoder):
    name = "selfspec"
    prefill_template = False

    def run(self, session: DecodeSession):
        pending = False
        for span in fixed_size_blocks(self.layout.total_len, self.config.block_size):
            if pending:
                session.commit_pending(span.start)
            pending = session.speculate(span.start, span.stop, verify_anchors=True)


def decode_self_spec(model: TinyLM, prompt_ids: Sequence[int], layout: ScaffoldLayout,
                     d: Optional[int] = None, config: Optional[DecodeConfig] = None) -> DecodeResult:
    config = config or DecodeConfig(strategy="selfspec")
    if d is not None:
        config = config.model_copy(update={"block_size": d})
    return SelfSpecDecoder(model, layout, config).decode(prompt_ids)
