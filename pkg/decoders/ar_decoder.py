"""
decoders/ar_decoder.py
Pure autoregressive baseline: one causal pass per response position
"""

from typing import Optional, Sequence

from decoders.base_decoder import BaseDecoder, DecodeConfig, DecodeResult, DecodeSession
from tools.schema_scaffold import ScaffoldLayout
from tools.tiny_lm import TinyLM


class ArDecoder(BaseDecoder):
    """
    Greedy next-token decoding over every response position

    Anchors are force-verified: the template token is written and a miss is
    counted whenever the raw argmax disagrees. The prefill pass predicts the
    first token, so a response of L tokens costs exactly L passes.
    """

    name = "ar"

    def run(self, session: DecodeSession):
        total = self.layout.total_len
        for pos in range(total):
            if pos > 0:
                logits, candidate = session.causal([session.tokens[pos - 1]])
                session.commit(candidate)
                session.next_logits = logits[-1]
            session.tokens[pos] = session.choose(pos, session.next_logits, count_anchor_miss=True)


def decode_ar(model: TinyLM, prompt_ids: Sequence[int], layout: ScaffoldLayout,
              config: Optional[DecodeConfig] = None) -> DecodeResult:
    return ArDecoder(model, layout, config).decode(prompt_ids)
