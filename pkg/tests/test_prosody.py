import unittest

import numpy as np

from utils.config_validator import GeneratorConfig
from utils.data import VOCABULARY, synth_utterance
from utils.encoders import Language, Waveform
from utils.model import SpeechAct
from utils.prosody import (
    audio_oracle,
    combine_oracles,
    contour_summary,
    oracle_accuracies,
    pitch_track,
    text_oracle,
)


def clean_generator() -> GeneratorConfig:
    return GeneratorConfig(
        duration_mean=1.0,
        duration_jitter=0.0,
        sample_rate=16000,
        snr_db=None,
        marker_noise=0.0,
        contour_noise=0.0,
    )


class TestPitchTrack(unittest.TestCase):
    def test_pure_tone(self):
        t = np.arange(16000) / 16000
        w = Waveform(samples=0.8 * np.sin(2 * np.pi * 200.0 * t), sample_rate=16000)
        pitches = pitch_track(w)
        self.assertEqual(len(pitches), 25)
        np.testing.assert_allclose(pitches, 200.0)

    def test_silence_is_unvoiced(self):
        pitches = pitch_track(Waveform(samples=np.zeros(8000), sample_rate=16000))
        self.assertTrue(np.all(pitches == 0))
        self.assertEqual(contour_summary(Waveform(samples=np.zeros(8000), sample_rate=16000)).terminal_ratio, 1.0)

    def test_too_short(self):
        self.assertEqual(len(pitch_track(Waveform(samples=np.zeros(100), sample_rate=16000))), 0)


class TestOracles(unittest.TestCase):
    def test_contours_are_recognised(self):
        cfg = clean_generator()
        for act in SpeechAct:
            for speaker in range(cfg.speakers):
                u = synth_utterance(act, cfg, seed=speaker, speaker=speaker)
                self.assertEqual(audio_oracle(u.waveform), act, f"{act.label} speaker {speaker}")

    def test_text_oracle_reads_marker(self):
        for act, marker in ((SpeechAct.REQUEST, "please"), (SpeechAct.QUESTION, "can"), (SpeechAct.ORDER, "must")):
            tokens = VOCABULARY.sequence([marker, "open", "the", "door"], Language.ENGLISH)
            self.assertEqual(text_oracle(tokens), act)

    def test_combination_rule(self):
        self.assertEqual(combine_oracles(SpeechAct.QUESTION, SpeechAct.ORDER), SpeechAct.QUESTION)
        self.assertEqual(combine_oracles(SpeechAct.REQUEST, SpeechAct.ORDER), SpeechAct.ORDER)
        self.assertEqual(combine_oracles(SpeechAct.ORDER, SpeechAct.QUESTION), SpeechAct.REQUEST)
        self.assertEqual(combine_oracles(SpeechAct.REQUEST, SpeechAct.REQUEST), SpeechAct.REQUEST)

    def test_accuracies_need_samples(self):
        with self.assertRaises(ValueError):
            oracle_accuracies([])
