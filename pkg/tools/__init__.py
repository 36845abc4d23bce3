"""
tools package
Shared infrastructure: schema scaffold, tiny model, checkpoints, console, errors
"""

from .checkpoint_io import init_model, load_checkpoint, load_model, save_checkpoint
from .schema_scaffold import OutputSchema, ScaffoldLayout, TokenVocab, compile_schema, load_reference_layout
from .tiny_lm import KVCache, ModelConfig, TinyLM

__all__ = [
    'OutputSchema', 'ScaffoldLayout', 'TokenVocab', 'compile_schema', 'load_reference_layout',
    'KVCache', 'ModelConfig', 'TinyLM',
    'init_model', 'load_checkpoint', 'load_model', 'save_checkpoint',
]
