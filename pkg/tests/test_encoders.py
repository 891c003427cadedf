import unittest

import numpy as np

import reference_loops
from utils.data import VOCABULARY, normalize_amplitude, render_tone
from utils.encoders import (
    ConfigurationError,
    FrameCountError,
    Language,
    Modality,
    TokenSequence,
    Waveform,
    attention,
    audio_frame_count,
    encode_audio,
    encode_text,
    frame_count,
    init_attention,
    init_audio_encoder,
    init_block,
    init_text_encoder,
    minimum_length,
    self_attention_block,
    sinusoidal_positions,
)
from utils.invariants import tiny_model_config
from utils.model import SpeechAct
from utils.numcore import tensor


class TestDomainTypes(unittest.TestCase):
    def test_waveform_rejects_out_of_range_samples(self):
        with self.assertRaises(ValueError):
            Waveform(samples=np.array([0.0, 1.5]), sample_rate=8000)

    def test_waveform_rejects_non_finite(self):
        with self.assertRaises(ValueError):
            Waveform(samples=np.array([0.0, np.nan]), sample_rate=8000)

    def test_waveform_duration(self):
        w = Waveform(samples=np.zeros(4000), sample_rate=8000)
        self.assertEqual(w.duration, 0.5)
        self.assertEqual(len(w), 4000)

    def test_waveform_is_immutable(self):
        w = Waveform(samples=np.zeros(10), sample_rate=8000)
        with self.assertRaises(ValueError):
            w.samples[0] = 0.5

    def test_token_sequence_rules(self):
        with self.assertRaises(ValueError):
            TokenSequence((), Language.ENGLISH)
        with self.assertRaises(IndexError):
            TokenSequence((3, -1), Language.ENGLISH)
        seq = TokenSequence([5, 6], "bengali")
        self.assertEqual(seq.language, Language.BENGALI)
        self.assertEqual(seq.tokens, (5, 6))


class TestFrameArithmetic(unittest.TestCase):
    def test_composed_frame_count(self):
        self.assertEqual(frame_count(40, [4, 3], [2, 2]), 9)
        self.assertEqual(frame_count(3, [4, 3], [2, 2]), 0)

    def test_minimum_length_is_tight(self):
        kernels, strides = [10, 8, 4], [5, 4, 2]
        minimum = minimum_length(kernels, strides)
        self.assertEqual(frame_count(minimum, kernels, strides), 1)
        self.assertEqual(frame_count(minimum - 1, kernels, strides), 0)

    def test_default_config_at_one_point_three_seconds(self):
        cfg = tiny_model_config().audio.model_copy(
            update={"conv_kernels": [10, 8, 4], "conv_strides": [5, 4, 2], "frame_pool": 24}
        )
        self.assertEqual(audio_frame_count(57330, cfg), 59)

    def test_frame_count_matches_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            length, kernel, stride = int(rng.integers(1, 200)), int(rng.integers(1, 12)), int(rng.integers(1, 8))
            starts = [s for s in range(0, length, stride) if s + kernel <= length]
            self.assertEqual(frame_count(length, [kernel], [stride]), len(starts), (length, kernel, stride))


class TestAudioEncoder(unittest.TestCase):
    def setUp(self):
        self.cfg = tiny_model_config().audio
        self.params = init_audio_encoder(self.cfg, seed=1)

    def test_output_shape(self):
        w = Waveform(samples=np.random.default_rng(0).uniform(-0.5, 0.5, 40), sample_rate=8000)
        out = encode_audio(w, self.params, self.cfg)
        self.assertEqual(out.features.modality, Modality.SPEECH)
        self.assertEqual(out.features.length, audio_frame_count(40, self.cfg))
        self.assertEqual(out.features.width, 8)
        self.assertEqual(out.pooled.shape, (8,))
        self.assertEqual(len(out.attention), self.cfg.blocks)

    def test_deterministic(self):
        w = Waveform(samples=np.linspace(-0.5, 0.5, 60), sample_rate=8000)
        a = encode_audio(w, self.params, self.cfg).features.values.data
        b = encode_audio(w, init_audio_encoder(self.cfg, seed=1), self.cfg).features.values.data
        np.testing.assert_array_equal(a, b)

    def test_too_short_waveform(self):
        with self.assertRaises(FrameCountError) as ctx:
            encode_audio(Waveform(samples=np.zeros(5), sample_rate=8000), self.params, self.cfg)
        self.assertEqual(ctx.exception.minimum, 12)

    def test_silence_is_finite(self):
        out = encode_audio(Waveform(samples=np.zeros(40), sample_rate=8000), self.params, self.cfg)
        self.assertTrue(np.all(np.isfinite(out.features.values.data)))

    def test_rising_and_falling_contours_differ(self):
        latents = []
        for contour in (SpeechAct.QUESTION, SpeechAct.ORDER):
            samples = normalize_amplitude(render_tone(contour, 2000, 8000, 200.0, 5))
            w = Waveform(samples=samples, sample_rate=8000)
            latents.append(encode_audio(w, self.params, self.cfg).pooled.data)
        self.assertGreater(np.linalg.norm(latents[0] - latents[1]), 1e-3)


class TestTextEncoder(unittest.TestCase):
    def setUp(self):
        self.cfg = tiny_model_config().text
        self.params = init_text_encoder(self.cfg, seed=2)

    def test_shape_and_modality(self):
        t = TokenSequence(VOCABULARY.encode(["please", "open", "the", "door"]), Language.ENGLISH)
        out = encode_text(t, self.params, self.cfg)
        self.assertEqual(out.features.modality, Modality.TEXT)
        self.assertEqual((out.features.length, out.features.width), (4, 8))

    def test_unknown_token(self):
        t = TokenSequence((len(VOCABULARY),), Language.ENGLISH)
        with self.assertRaises(IndexError):
            encode_text(t, self.params, self.cfg)

    def test_requires_vocab_size(self):
        with self.assertRaises(ConfigurationError):
            init_text_encoder(self.cfg.model_copy(update={"vocab_size": None}))

    def test_positions_distinguish_order(self):
        forward = TokenSequence(VOCABULARY.encode(["open", "the", "door"]), Language.ENGLISH)
        backward = TokenSequence(VOCABULARY.encode(["door", "the", "open"]), Language.ENGLISH)
        a = encode_text(forward, self.params, self.cfg).features.values.data
        b = encode_text(backward, self.params, self.cfg).features.values.data
        self.assertFalse(np.allclose(a[0], b[2]))

    def test_marker_word_changes_the_latent(self):
        request = TokenSequence(VOCABULARY.encode(["please", "open", "the", "door"]), Language.ENGLISH)
        question = TokenSequence(VOCABULARY.encode(["can", "open", "the", "door"]), Language.ENGLISH)
        a = encode_text(request, self.params, self.cfg).pooled.data
        b = encode_text(question, self.params, self.cfg).pooled.data
        self.assertGreater(np.linalg.norm(a - b), 1e-6)

    def test_sinusoidal_table(self):
        table = sinusoidal_positions(3, 4)
        np.testing.assert_array_equal(table[0], [0.0, 1.0, 0.0, 1.0])
        self.assertAlmostEqual(table[1, 0], np.sin(1.0))


class TestAttention(unittest.TestCase):
    def setUp(self):
        self.params = {}
        init_attention(np.random.default_rng(0), self.params, "attn", 8)

    def test_weights_are_row_stochastic(self):
        x = tensor(np.random.default_rng(1).normal(size=(5, 8)))
        kv = tensor(np.random.default_rng(2).normal(size=(3, 8)))
        out, weights = attention(x, kv, self.params, "attn", 2)
        self.assertEqual(out.shape, (5, 8))
        self.assertEqual(len(weights), 2)
        for w in weights:
            self.assertEqual(w.shape, (5, 3))
            np.testing.assert_allclose(w.sum(axis=1), np.ones(5), atol=1e-12)

    def test_indivisible_heads(self):
        x = tensor(np.zeros((2, 8)))
        with self.assertRaises(ConfigurationError):
            attention(x, x, self.params, "attn", 3)

    def test_width_mismatch(self):
        with self.assertRaises(ConfigurationError):
            attention(tensor(np.zeros((2, 8))), tensor(np.zeros((2, 4))), self.params, "attn", 2)

    def test_key_projection_has_no_bias(self):
        self.assertNotIn("attn.k.b", self.params)
        self.assertIn("attn.q.b", self.params)

    def test_zero_projections_give_uniform_weights(self):
        params = dict(self.params)
        for name in ("attn.q.w", "attn.q.b", "attn.k.w"):
            params[name] = tensor(np.zeros(params[name].shape))
        x = tensor(np.random.default_rng(3).normal(size=(5, 8)))
        _out, weights = attention(x, x, params, "attn", 2)
        for w in weights:
            np.testing.assert_allclose(w, np.full((5, 5), 1.0 / 5), atol=1e-15)

    def test_block_matches_loop_reference(self):
        rng = np.random.default_rng(4)
        params = {}
        init_block(rng, params, "blk", 8, 16)
        # non-trivial layer norm affine terms
        params = {k: tensor(v.data + rng.normal(0.0, 0.1, size=v.shape)) for k, v in params.items()}
        x = tensor(rng.normal(size=(4, 8)))
        out, _weights = self_attention_block(x, params, "blk", 2)
        expected = reference_loops.self_attention_block(x, params, "blk", 2)
        np.testing.assert_allclose(out.data, np.array(expected), rtol=0.0, atol=1e-12)
