import os
import shutil
import tempfile
import unittest
from collections import Counter

import numpy as np

from utils.config_validator import GeneratorConfig
from utils.data import (
    IMPERATIVE_VERB,
    MANIFEST_NAME,
    QUESTION_PARTICLE,
    SENTENCE_BANK,
    VOCABULARY,
    DatasetIOError,
    ModalityError,
    UtteranceRecord,
    Vocabulary,
    generate_dataset,
    load_manifest,
    load_samples,
    normalize_amplitude,
    pitch_contour,
    plan_corpus,
    round_half_up,
    stratified_split,
    synth_utterance,
    synthesize_corpus,
)
from utils.encoders import Language, TokenSequence
from utils.model import SpeechAct


def small_generator(**overrides) -> GeneratorConfig:
    settings = dict(
        counts=[4, 4, 4],
        duration_mean=0.25,
        sample_rate=8000,
        snr_db=None,
        marker_noise=0.0,
        contour_noise=0.0,
        seed=11,
    )
    settings.update(overrides)
    return GeneratorConfig(**settings)


class TestVocabulary(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_markers_and_special_tokens_present(self):
        for word in ("please", "can", "must", QUESTION_PARTICLE, IMPERATIVE_VERB, "bn_47"):
            self.assertIn(word, VOCABULARY.decode(VOCABULARY.encode([word])))

    def test_unknown_word(self):
        with self.assertRaises(KeyError):
            VOCABULARY.encode(["teleport"])

    def test_save_and_load(self):
        path = os.path.join(self.test_dir, "vocab.txt")
        VOCABULARY.save(path)
        self.assertEqual(Vocabulary.load(path), VOCABULARY)

    def test_missing_file(self):
        with self.assertRaises(DatasetIOError):
            Vocabulary.load(os.path.join(self.test_dir, "absent.txt"))

    def test_duplicates_rejected(self):
        with self.assertRaises(ValueError):
            Vocabulary(["a", "b", "a"])


class TestSentenceBank(unittest.TestCase):
    def test_bank_shape(self):
        self.assertEqual(len(SENTENCE_BANK), 48)
        for template in SENTENCE_BANK:
            self.assertTrue(5 <= len(template.bengali) <= 7)
            self.assertIn(len(template.english), (3, 4))

    def test_bank_is_stable(self):
        from utils.data import _build_bank

        self.assertEqual(_build_bank(), SENTENCE_BANK)


class TestUtteranceRecord(unittest.TestCase):
    def _record(self, bengali_len=5, bengali_lang=Language.BENGALI, split="train"):
        return UtteranceRecord(
            id="r",
            wav_path="wavs/r.wav",
            bengali=TokenSequence(tuple(range(4, 4 + bengali_len)), bengali_lang),
            english=TokenSequence((2, 3), Language.ENGLISH),
            label=SpeechAct.REQUEST,
            speaker=0,
            split=split,
        )

    def test_valid(self):
        self.assertEqual(self._record().split, "train")

    def test_bengali_length(self):
        with self.assertRaises(ValueError):
            self._record(bengali_len=4)
        with self.assertRaises(ValueError):
            self._record(bengali_len=8)

    def test_language_tags(self):
        with self.assertRaises(ModalityError):
            self._record(bengali_lang=Language.ENGLISH)

    def test_split_name(self):
        with self.assertRaises(ValueError):
            self._record(split="dev")


class TestSynthesis(unittest.TestCase):
    def test_normalize_amplitude(self):
        out = normalize_amplitude(np.array([0.1, -0.5, 0.2]))
        self.assertAlmostEqual(np.max(np.abs(out)), 0.9)
        np.testing.assert_array_equal(normalize_amplitude(np.zeros(4)), np.zeros(4))

    def test_contour_shapes(self):
        question = pitch_contour(SpeechAct.QUESTION, 1000)
        order = pitch_contour(SpeechAct.ORDER, 1000)
        request = pitch_contour(SpeechAct.REQUEST, 1000)
        self.assertEqual(question[0], 1.0)
        self.assertAlmostEqual(question[-1], 1.4, places=2)
        self.assertAlmostEqual(order[-1], 0.7, places=2)
        self.assertAlmostEqual(request[500], 0.85, places=6)
        self.assertAlmostEqual(request[-1], 1.0, places=3)

    def test_utterance_properties(self):
        cfg = small_generator()
        for act in SpeechAct:
            u = synth_utterance(act, cfg, seed=5, sentence=3, ambiguous=False, speaker=1)
            self.assertLessEqual(np.max(np.abs(u.waveform.samples)), 0.9 + 1e-12)
            self.assertEqual(u.waveform.sample_rate, 8000)
            self.assertTrue(0.125 <= u.waveform.duration <= 0.375)
            self.assertEqual(u.contour, act)
            self.assertFalse(u.marker_flipped)

    def test_same_seed_same_waveform(self):
        cfg = small_generator(snr_db=[10, 20])
        a = synth_utterance(SpeechAct.ORDER, cfg, seed=9)
        b = synth_utterance(SpeechAct.ORDER, cfg, seed=9)
        np.testing.assert_array_equal(a.waveform.samples, b.waveform.samples)

    def test_noise_never_flips_the_protected_class(self):
        cfg = small_generator(marker_noise=1.0, contour_noise=1.0)
        order = synth_utterance(SpeechAct.ORDER, cfg, seed=1)
        question = synth_utterance(SpeechAct.QUESTION, cfg, seed=1)
        request = synth_utterance(SpeechAct.REQUEST, cfg, seed=1)
        self.assertFalse(order.marker_flipped)
        self.assertTrue(order.contour_flipped)
        self.assertFalse(question.contour_flipped)
        self.assertTrue(question.marker_flipped)
        self.assertEqual(VOCABULARY.decode(request.english.tokens)[0], "can")
        self.assertEqual(request.contour, SpeechAct.ORDER)


class TestCorpusPlan(unittest.TestCase):
    def test_round_half_up(self):
        self.assertEqual([round_half_up(x) for x in (0.5, 1.5, 2.5, 3.75, 5.25)], [1, 2, 3, 4, 5])

    def test_stratified_split_counts(self):
        names = stratified_split(25, [0.7, 0.15, 0.15], np.random.default_rng(0))
        self.assertEqual(Counter(names), {"train": 17, "val": 4, "test": 4})
        names = stratified_split(35, [0.7, 0.15, 0.15], np.random.default_rng(0))
        self.assertEqual(Counter(names), {"train": 25, "val": 5, "test": 5})

    def test_default_layout(self):
        plan = plan_corpus(GeneratorConfig())
        self.assertEqual(len(plan), 85)
        self.assertEqual(Counter(p.label for p in plan), {SpeechAct.REQUEST: 25, SpeechAct.QUESTION: 35, SpeechAct.ORDER: 25})
        ambiguous = [p for p in plan if p.ambiguous]
        self.assertEqual(len(ambiguous), 30)
        self.assertFalse(any(p.label == SpeechAct.ORDER for p in ambiguous))
        self.assertEqual(sorted(Counter(p.speaker for p in plan).values()), [21, 21, 21, 22])

    def test_twins_share_bengali_only_when_ambiguous(self):
        corpus = {item.id: u for item, u in synthesize_corpus(small_generator())}
        self.assertEqual(corpus["request_000"].bengali, corpus["question_000"].bengali)
        self.assertEqual(corpus["request_001"].bengali, corpus["question_001"].bengali)
        self.assertNotEqual(corpus["request_002"].bengali, corpus["question_002"].bengali)
        self.assertIn(QUESTION_PARTICLE, VOCABULARY.decode(corpus["question_003"].bengali.tokens))
        for i in range(4):
            words = VOCABULARY.decode(corpus[f"order_{i:03d}"].bengali.tokens)
            self.assertEqual(words[-1], IMPERATIVE_VERB)
            self.assertEqual(VOCABULARY.decode(corpus[f"order_{i:03d}"].english.tokens)[0], "must")


class TestDatasetFiles(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_generate_is_byte_reproducible(self):
        cfg = small_generator(snr_db=[10, 20])
        first = generate_dataset(cfg, os.path.join(self.test_dir, "a"))
        second = generate_dataset(cfg, os.path.join(self.test_dir, "b"))
        self.assertEqual(first.checksum, second.checksum)
        with open(first.path, "rb") as f1, open(second.path, "rb") as f2:
            self.assertEqual(f1.read(), f2.read())

    def test_seed_changes_checksum(self):
        a = generate_dataset(small_generator(seed=1), os.path.join(self.test_dir, "a"))
        b = generate_dataset(small_generator(seed=2), os.path.join(self.test_dir, "b"))
        self.assertNotEqual(a.checksum, b.checksum)

    def test_load_manifest_matches_generation(self):
        out = os.path.join(self.test_dir, "corpus")
        manifest = generate_dataset(small_generator(), out)
        loaded = load_manifest(out)
        self.assertEqual(loaded.records, manifest.records)
        self.assertEqual(loaded.checksum, manifest.checksum)
        self.assertEqual(loaded.summary(), "12 records (4/4/4)")

        samples = load_samples(loaded)
        self.assertEqual(len(samples), 12)
        self.assertEqual({s.split for s in samples} <= {"train", "val", "test"}, True)
        self.assertEqual(len(load_samples(loaded, "test")), sum(r.split == "test" for r in loaded.records))
        self.assertEqual(samples[0].waveform.sample_rate, 8000)

    def test_manifest_header(self):
        out = os.path.join(self.test_dir, "corpus")
        generate_dataset(small_generator(), out)
        with open(os.path.join(out, MANIFEST_NAME), encoding="utf-8") as f:
            self.assertEqual(f.readline().rstrip("\n").split("\t"), ["id", "wav_path", "bengali", "english", "label", "speaker", "split"])

    def test_missing_dataset(self):
        with self.assertRaises(DatasetIOError):
            load_manifest(os.path.join(self.test_dir, "nowhere"))

    def test_malformed_manifest(self):
        out = os.path.join(self.test_dir, "corpus")
        generate_dataset(small_generator(), out)
        with open(os.path.join(out, MANIFEST_NAME), "a", encoding="utf-8") as f:
            f.write("broken\twavs/x.wav\tbn_01\tplease\tstatement\t0\ttrain\n")
        with self.assertRaises(DatasetIOError):
            load_manifest(out)
