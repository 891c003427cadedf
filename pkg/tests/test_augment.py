import unittest

import numpy as np

from utils.augment import augment_audio, augment_english, expand_with_augmentations, synonym_table, time_shift
from utils.config_validator import AugmentationConfig
from utils.data import VOCABULARY, ModalityError
from utils.encoders import Language, TokenSequence, Waveform
from utils.invariants import random_sample


class TestTimeShift(unittest.TestCase):
    def test_delay_pads_with_zeros(self):
        np.testing.assert_array_equal(time_shift(np.array([1.0, 2.0, 3.0, 4.0]), 2), [0.0, 0.0, 1.0, 2.0])

    def test_advance_pads_with_zeros(self):
        np.testing.assert_array_equal(time_shift(np.array([1.0, 2.0, 3.0, 4.0]), -1), [2.0, 3.0, 4.0, 0.0])

    def test_shift_beyond_length(self):
        np.testing.assert_array_equal(time_shift(np.ones(3), 5), np.zeros(3))


class TestAugmentAudio(unittest.TestCase):
    def setUp(self):
        self.wave = Waveform(samples=0.5 * np.sin(np.linspace(0, 40, 800)), sample_rate=8000)

    def test_fixed_gain_only(self):
        cfg = AugmentationConfig(time_shift_ms=[0, 0], gain_db=[6, 6], snr_db=None)
        out = augment_audio(self.wave, cfg, seed=0)
        np.testing.assert_allclose(out.samples, self.wave.samples * 10 ** (6 / 20), atol=1e-12)

    def test_shift_in_samples(self):
        cfg = AugmentationConfig(time_shift_ms=[10, 10], gain_db=[0, 0], snr_db=None)
        out = augment_audio(self.wave, cfg, seed=0)
        np.testing.assert_array_equal(out.samples[:80], np.zeros(80))
        np.testing.assert_allclose(out.samples[80:], self.wave.samples[:-80])

    def test_loud_output_is_rescaled(self):
        cfg = AugmentationConfig(time_shift_ms=[0, 0], gain_db=[20, 20], snr_db=None)
        out = augment_audio(self.wave, cfg, seed=0)
        self.assertAlmostEqual(np.max(np.abs(out.samples)), 1.0)

    def test_length_and_rate_preserved(self):
        out = augment_audio(self.wave, AugmentationConfig(), seed=4)
        self.assertEqual(len(out), len(self.wave))
        self.assertEqual(out.sample_rate, 8000)

    def test_seeded(self):
        cfg = AugmentationConfig()
        np.testing.assert_array_equal(augment_audio(self.wave, cfg, 7).samples, augment_audio(self.wave, cfg, 7).samples)


class TestAugmentEnglish(unittest.TestCase):
    def setUp(self):
        self.text = VOCABULARY.sequence(["please", "open", "the", "door", "quickly"], Language.ENGLISH)

    def test_marker_and_length_survive(self):
        for seed in range(20):
            out = augment_english(self.text, 1.0, seed)
            self.assertEqual(len(out), len(self.text))
            self.assertEqual(out.tokens[0], self.text.tokens[0])

    def test_full_probability_swaps_every_synonym(self):
        out = VOCABULARY.decode(augment_english(self.text, 1.0, 0).tokens)
        self.assertEqual(out, ["please", "unlock", "the", "gate", "quickly"])

    def test_zero_probability_is_identity(self):
        self.assertEqual(augment_english(self.text, AugmentationConfig(synonym_prob=0.0), 3), self.text)

    def test_bengali_is_refused(self):
        bengali = TokenSequence(VOCABULARY.encode(["bn_01", "bn_02", "bn_03", "bn_04", "bn_05"]), Language.BENGALI)
        with self.assertRaises(ModalityError):
            augment_english(bengali, 1.0, 0)

    def test_markers_have_no_synonyms(self):
        table = synonym_table()
        for marker in ("please", "can", "must"):
            self.assertNotIn(VOCABULARY.encode([marker])[0], table)


class TestExpand(unittest.TestCase):
    def test_copies_follow_originals(self):
        samples = [random_sample(s, length=400) for s in range(3)]
        expanded = expand_with_augmentations(samples, AugmentationConfig(copies=2), seed=1)
        self.assertEqual(len(expanded), 9)
        self.assertEqual(expanded[:3], samples)
        self.assertEqual(expanded[3].record_id, "random_0+aug0")
        self.assertEqual(expanded[8].record_id, "random_2+aug1")
        for sample in expanded[3:]:
            self.assertTrue(sample.augmented)
        for original, copy in zip(samples, expanded[3:6]):
            self.assertEqual(copy.bengali, original.bengali)
            self.assertEqual(copy.label, original.label)

    def test_no_copies(self):
        samples = [random_sample(0)]
        self.assertEqual(expand_with_augmentations(samples, AugmentationConfig(copies=0), seed=1), samples)
