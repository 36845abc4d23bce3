"""
decoders package
Decoding strategies over the compiled scaffold
"""

from typing import Optional

from .ar_decoder import ArDecoder, decode_ar
from .base_decoder import BaseDecoder, DecodeConfig, DecodeResult, DecodeSession, DecodeTrace
from .scaffold_spec_decoder import ScaffoldSpecDecoder, decode_scaffold_spec
from .section_diffusion_decoder import SectionDiffusionDecoder, decode_section_diffusion
from .self_spec_decoder import SelfSpecDecoder, decode_self_spec

DECODERS = {
    "ar": ArDecoder,
    "sd": SectionDiffusionDecoder,
    "selfspec": SelfSpecDecoder,
    "ss": ScaffoldSpecDecoder,
}


def make_decoder(model, layout, config: Optional[DecodeConfig] = None) -> BaseDecoder:
    config = config or DecodeConfig()
    return DECODERS[config.strategy](model, layout, config)


__all__ = [
    'ArDecoder', 'BaseDecoder', 'DecodeConfig', 'DecodeResult', 'DecodeSession', 'DecodeTrace',
    'ScaffoldSpecDecoder', 'SectionDiffusionDecoder', 'SelfSpecDecoder', 'DECODERS',
    'decode_ar', 'decode_scaffold_spec', 'decode_section_diffusion', 'decode_self_spec', 'make_decoder',
]
