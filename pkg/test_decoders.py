"""
Decoding strategies - Test Suite
Losslessness, structural validity and forward-pass accounting
"""

import unittest

import numpy as np

from decoders import (
    DECODERS, DecodeConfig, ScaffoldSpecDecoder, decode_ar, decode_scaffold_spec,
    decode_section_diffusion, decode_self_spec, make_decoder,
)
from eval_bench import check_equivalence
from synth_driving_data import record_for_index
from tools.checkpoint_io import init_model
from tools.schema_scaffold import load_reference_layout, plan_blocks
from tools.tiny_lm import ModelConfig


class DecoderFixture(unittest.TestCase):
    """Reference layout, an untrained small model and a few prompts"""

    @classmethod
    def setUpClass(cls):
        cls.layout = load_reference_layout()
        config = ModelConfig(d_model=16, n_layers=2, n_heads=2, seed=7, init_scale=0.5, head_init_scale=0.5)
        cls.model = init_model(config, cls.layout)
        cls.prompts = [cls.layout.vocab.encode_prompt(record_for_index(0, i).prompt) for i in range(3)]
        cls.plan = plan_blocks(cls.layout, 32)


class TestAutoregressive(DecoderFixture):
    """Test the AR baseline"""

    def test_one_pass_per_token(self):
        result = decode_ar(self.model, self.prompts[0], self.layout)
        self.assertEqual(result.trace.total_passes, self.layout.total_len)
        self.assertEqual(result.trace.tok_per_step, 1.0)
        self.assertEqual(result.trace.forward_passes["bidirectional"], 0)

    def test_anchors_follow_template(self):
        result = decode_ar(self.model, self.prompts[0], self.layout)
        for pos in self.layout.anchors:
            self.assertEqual(result.tokens[pos], self.layout.template[pos])

    def test_deterministic(self):
        a = decode_ar(self.model, self.prompts[1], self.layout)
        b = decode_ar(self.model, self.prompts[1], self.layout)
        self.assertEqual(a.tokens, b.tokens)


class TestLosslessness(DecoderFixture):
    """Test that the speculative strategies reproduce greedy AR"""

    def test_scaffold_spec_matches_ar(self):
        for prompt in self.prompts:
            reference = decode_ar(self.model, prompt, self.layout)
            result = decode_scaffold_spec(self.model, prompt, self.layout, self.plan)
            eq = check_equivalence(result, reference)
            self.assertTrue(eq.identical, f"first mismatch at {eq.first_mismatch}")

    def test_self_spec_matches_ar(self):
        for prompt in self.prompts:
            reference = decode_ar(self.model, prompt, self.layout)
            for d in (8, 32):
                result = decode_self_spec(self.model, prompt, self.layout, d)
                eq = check_equivalence(result, reference)
                self.assertTrue(eq.identical, f"d={d}: first mismatch at {eq.first_mismatch}")

    def test_scaffold_spec_matches_ar_at_other_block_sizes(self):
        prompt = self.prompts[0]
        reference = decode_ar(self.model, prompt, self.layout)
        for d in (1, 5, 64):
            result = decode_scaffold_spec(self.model, prompt, self.layout, plan_blocks(self.layout, d))
            self.assertTrue(check_equivalence(result, reference).identical, f"d={d}")


class TestStructuralValidity(DecoderFixture):
    """Test that every strategy yields a parseable output on untrained weights"""

    def test_all_strategies_parse(self):
        for strategy in DECODERS:
            decoder = make_decoder(self.model, self.layout, DecodeConfig(strategy=strategy))
            for prompt in self.prompts:
                result = decoder.decode(prompt)
                self.assertTrue(result.structural_valid, f"{strategy}: {result.parse_error}")
                self.assertEqual(len(result.parsed.waypoints), 5)

    def test_sampled_trajectory_still_parses(self):
        config = DecodeConfig(strategy="ss", temperatures={"trajectory": 1.5, "explanation": 1.0})
        decoder = make_decoder(self.model, self.layout, config)
        for seed in range(3):
            result = decoder.decode(self.prompts[0], rng=np.random.default_rng(seed))
            self.assertTrue(result.structural_valid, result.parse_error)


class TestPassAccounting(DecoderFixture):
    """Test forward-pass counts and traces"""

    def test_scaffold_spec_trace(self):
        result = decode_scaffold_spec(self.model, self.prompts[0], self.layout, self.plan)
        trace = result.trace
        self.assertEqual(trace.tokens_total, self.layout.total_len)
        self.assertEqual(trace.tokens_value, 280)
        self.assertEqual(trace.tokens_scaffold, 124)
        self.assertGreaterEqual(trace.total_passes, 1 + 2 * self.plan.total_blocks)
        self.assertAlmostEqual(trace.tok_per_step * trace.total_passes, self.layout.total_len)
        self.assertEqual(trace.rejections, trace.bonus)

    def test_scaffold_spec_only_verifies_values(self):
        trace = decode_scaffold_spec(self.model, self.prompts[0], self.layout, self.plan).trace
        self.assertEqual(trace.anchor_miss, 0)
        self.assertLessEqual(trace.rejections, len(self.layout.editable))
        self.assertLessEqual(sum(trace.accepted_runs) + trace.bonus, len(self.layout.editable))

    def test_section_diffusion_low_threshold(self):
        result = decode_section_diffusion(self.model, self.prompts[0], self.layout, self.plan, tau=1e-6)
        self.assertEqual(result.trace.total_passes, 1 + 2 * self.plan.total_blocks)
        self.assertEqual(result.trace.forward_passes["causal"], 1)

    def test_section_diffusion_high_threshold_needs_more_passes(self):
        low = decode_section_diffusion(self.model, self.prompts[0], self.layout, self.plan, tau=1e-6)
        high = decode_section_diffusion(self.model, self.prompts[0], self.layout, self.plan, tau=1.0)
        self.assertGreater(high.trace.total_passes, low.trace.total_passes)
        self.assertTrue(high.structural_valid)

    def test_section_diffusion_causal_commit(self):
        config = DecodeConfig(strategy="sd", tau=1e-6, sd_commit="causal")
        result = decode_section_diffusion(self.model, self.prompts[0], self.layout, self.plan, config=config)
        self.assertEqual(result.trace.forward_passes["causal"], 1 + self.plan.total_blocks)
        self.assertEqual(result.trace.forward_passes["bidirectional"], self.plan.total_blocks)

    def test_trace_dict(self):
        result = decode_scaffold_spec(self.model, self.prompts[0], self.layout, self.plan)
        data = result.trace.to_dict()
        self.assertEqual(data["forward_passes"]["total"], result.trace.total_passes)
        self.assertEqual(data["tokens_committed"]["total"], self.layout.total_len)


class TestSessions(DecoderFixture):
    """Test shared-prefix sessions"""

    def test_prefix_then_trajectory_equals_full_decode(self):
        decoder = ScaffoldSpecDecoder(self.model, self.layout, DecodeConfig(strategy="ss"), self.plan)
        full = decoder.decode(self.prompts[0])

        session = decoder.new_session()
        session.prefill(self.prompts[0])
        pending = decoder.run_blocks(session, ("critical_objects", "explanation", "future_meta_behavior"))
        if pending:
            session.commit_pending(self.layout.section_tokens["trajectory"][0])
        fork = session.fork()
        decoder.run_blocks(fork, ("trajectory",))
        self.assertEqual(fork.tokens, full.tokens)

    def test_fork_is_isolated(self):
        decoder = ScaffoldSpecDecoder(self.model, self.layout, DecodeConfig(strategy="ss"), self.plan)
        session = decoder.new_session()
        session.prefill(self.prompts[0])
        before = list(session.tokens)
        committed = session.cache.committed_len
        fork = session.fork()
        decoder.run_blocks(fork)
        self.assertEqual(session.tokens, before)
        self.assertEqual(session.cache.committed_len, committed)

    def test_unknown_strategy(self):
        with self.assertRaises(ValueError):
            DecodeConfig(strategy="beam")


if __name__ == "__main__":
    unittest.main(verbosity=2)
