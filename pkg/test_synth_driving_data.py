"""
Synthetic driving data - Test Suite
"""

import itertools
import math
import tempfile
import unittest
from pathlib import Path

from synth_driving_data import (
    CLEAR_ROAD_SENTENCE, OBJECT_NAMES, WET_CLAUSE, DataConfig, SceneParams,
    compose_explanation, derive_behavior, emit_dataset, format_prompt, load_records,
    make_record, oracle_trajectory, parse_prompt, record_for_index,
)
from tools.schema_scaffold import load_reference_layout, parse_output, serialize_record

NO_OBJECTS = (False,) * len(OBJECT_NAMES)


def scene(v0=10.0, a=0.0, omega=0.0, flags=NO_OBJECTS, wet=False) -> SceneParams:
    return SceneParams(v0=v0, a=a, omega=omega, object_flags=flags, wet=wet)


class TestOracle(unittest.TestCase):
    """Test the kinematic oracle"""

    def test_constant_speed_straight(self):
        self.assertEqual(oracle_trajectory(10.0, 0.0, 0.0),
                         [(10.0, 0.0), (20.0, 0.0), (30.0, 0.0), (40.0, 0.0), (50.0, 0.0)])

    def test_standstill(self):
        self.assertEqual(oracle_trajectory(0.0, 0.0, 0.3), [(0.0, 0.0)] * 5)

    def test_braking_stops_and_holds(self):
        points = oracle_trajectory(2.0, -4.0, 0.0)
        self.assertEqual(points, [(0.5, 0.0)] * 5)

    def test_left_turn_goes_left(self):
        points = oracle_trajectory(10.0, 0.0, 0.2)
        self.assertTrue(all(y > 0 for _, y in points))

    def test_points_are_rounded_to_centimetres(self):
        for x, y in oracle_trajectory(13.7, 1.3, -0.17):
            self.assertEqual(round(x, 2), x)
            self.assertEqual(round(y, 2), y)

    def test_constant_acceleration_closed_form(self):
        expected = [(6.0, 0.0), (14.0, 0.0), (24.0, 0.0), (36.0, 0.0), (50.0, 0.0)]
        for (x, y), (ex, ey) in zip(oracle_trajectory(5.0, 2.0, 0.0), expected):
            self.assertAlmostEqual(x, ex, delta=0.02)
            self.assertAlmostEqual(y, ey, delta=0.02)

    def test_constant_radius_arc_closed_form(self):
        v0, omega = 8.0, 0.2
        radius = v0 / omega
        for t, (x, y) in enumerate(oracle_trajectory(v0, 0.0, omega), start=1):
            self.assertAlmostEqual(x, radius * math.sin(omega * t), delta=0.02)
            self.assertAlmostEqual(y, radius * (1.0 - math.cos(omega * t)), delta=0.02)


class TestBehaviour(unittest.TestCase):
    """Test behaviour thresholds and explanations"""

    def test_keep_thresholds_are_inclusive(self):
        self.assertEqual(derive_behavior(scene(a=0.2, omega=0.05)), ("keep_speed", "keep_lane"))
        self.assertEqual(derive_behavior(scene(a=-0.2, omega=-0.05)), ("keep_speed", "keep_lane"))

    def test_classes(self):
        self.assertEqual(derive_behavior(scene(a=0.3, omega=0.06)), ("accelerate", "left_turn"))
        self.assertEqual(derive_behavior(scene(a=-0.3, omega=-0.06)), ("decelerate", "right_turn"))

    def test_clear_road_sentence(self):
        self.assertEqual(compose_explanation(scene()), CLEAR_ROAD_SENTENCE)

    def test_wet_clause(self):
        self.assertTrue(compose_explanation(scene(wet=True)).endswith(WET_CLAUSE))

    def test_objects_named(self):
        flags = tuple(name == "cyclist" for name in OBJECT_NAMES)
        text = compose_explanation(scene(a=-1.0, flags=flags))
        self.assertIn("a cyclist", text)
        self.assertIn("Slow down", text)

    def test_scene_ranges(self):
        with self.assertRaises(ValueError):
            scene(v0=31.0)
        with self.assertRaises(ValueError):
            scene(a=4.5)
        with self.assertRaises(ValueError):
            SceneParams(v0=1.0, a=0.0, omega=0.0, object_flags=(True,))

    def test_explanation_fits_section_for_every_flag_combination(self):
        longest = 0
        for bits in itertools.product((False, True), repeat=len(OBJECT_NAMES) + 1):
            for a, omega in itertools.product((-1.0, 0.0, 1.0), (-0.1, 0.0, 0.1)):
                text = compose_explanation(scene(a=a, omega=omega, flags=bits[:-1], wet=bits[-1]))
                longest = max(longest, len(text))
        self.assertLessEqual(longest, 192)


class TestPrompts(unittest.TestCase):
    """Test prompt formatting"""

    def test_format(self):
        flags = tuple(i == 1 for i in range(len(OBJECT_NAMES)))
        prompt = format_prompt(scene(v0=5.0, a=-1.5, omega=0.12, flags=flags, wet=True))
        self.assertEqual(prompt, "v+05.0 a-1.5 w+0.12 o010000000000 r1")

    def test_parse_recovers_scene(self):
        for index in range(50):
            record = record_for_index(11, index)
            parsed = parse_prompt(record.prompt)
            self.assertEqual(format_prompt(parsed), record.prompt)
            self.assertEqual(make_record(parsed).waypoints, record.waypoints)

    def test_fixed_prompt_length(self):
        layout = load_reference_layout()
        for index in range(20):
            ids = layout.vocab.encode_prompt(record_for_index(0, index).prompt)
            self.assertEqual(len(ids), 37)

    def test_unrecognised_prompt(self):
        with self.assertRaises(ValueError):
            parse_prompt("hello")


class TestRecords(unittest.TestCase):
    """Test record generation and datasets"""

    def test_deterministic_per_index(self):
        self.assertEqual(record_for_index(3, 7).to_dict(), record_for_index(3, 7).to_dict())
        self.assertNotEqual(record_for_index(3, 7).prompt, record_for_index(3, 8).prompt)

    def test_records_fit_the_scaffold(self):
        layout = load_reference_layout()
        for index in range(200):
            record = record_for_index(0, index)
            tokens = serialize_record(record, layout)
            self.assertTrue(parse_output(tokens, layout).same_output(record))

    def test_unknown_config_field(self):
        with self.assertRaises(ValueError):
            DataConfig(n_records=10, noise=0.1)

    def test_emit_dataset(self):
        with tempfile.TemporaryDirectory() as tmp:
            train_path, val_path = emit_dataset(20, 4, Path(tmp), val_fraction=0.25)
            train = load_records(train_path)
            val = load_records(val_path)
        self.assertEqual((len(train), len(val)), (15, 5))
        self.assertEqual(val[0].to_dict(), record_for_index(4, 15).to_dict())

    def test_emit_empty_dataset(self):
        with tempfile.TemporaryDirectory() as tmp:
            train_path, val_path = emit_dataset(0, 1, Path(tmp))
            self.assertEqual(train_path.read_bytes(), b"")
            self.assertEqual(val_path.read_bytes(), b"")

    def test_same_seed_gives_identical_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = emit_dataset(12, 6, Path(tmp) / "a", val_fraction=0.25)
            second = emit_dataset(12, 6, Path(tmp) / "b", val_fraction=0.25)
            for a, b in zip(first, second):
                self.assertEqual(a.read_bytes(), b.read_bytes())


if __name__ == "__main__":
    unittest.main(verbosity=2)
