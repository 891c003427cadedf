import logging
import math
from dataclasses import replace
from typing import Dict, List, Union

import numpy as np

from utils.config_validator import AugmentationConfig
from utils.data import SYNONYM_GROUPS, VOCABULARY, ModalityError, Sample, Vocabulary
from utils.encoders import Language, TokenSequence, Waveform
from utils.seeding import derive_seed

# Position 0 of every English sequence is the class marker.
MARKER_POSITION = 0


def _draw(rng: np.random.Generator, bounds) -> float:
    low, high = bounds
    return float(low) if low == high else float(rng.uniform(low, high))


def time_shift(samples: np.ndarray, shift: int) -> np.ndarray:
    """Delays (shift > 0) or advances the signal, zero-padding instead of wrapping around."""
    n = len(samples)
    out = np.zeros(n)
    if shift >= n or -shift >= n:
        return out
    if shift >= 0:
        out[shift:] = samples[: n - shift]
    else:
        out[: n + shift] = samples[-shift:]
    return out


def augment_audio(w: Waveform, cfg: AugmentationConfig, seed: int) -> Waveform:
    """
    Time-domain augmentation only: shift, linear gain, additive Gaussian
    noise at a sampled SNR. Output is rescaled only when it would leave [-1, 1].
    """
    rng = np.random.default_rng(seed)
    shift_ms = _draw(rng, cfg.time_shift_ms)
    gain_db = _draw(rng, cfg.gain_db)

    shift = int(round(shift_ms * w.sample_rate / 1000.0))
    samples = time_shift(w.samples, shift) * (10.0 ** (gain_db / 20.0))
    if cfg.snr_db is not None:
        snr = _draw(rng, cfg.snr_db)
        power = float(np.mean(samples**2)) if samples.size else 0.0
        if power > 0.0:
            samples = samples + rng.normal(0.0, math.sqrt(power / 10.0 ** (snr / 10.0)), size=samples.shape)

    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > 1.0:
        samples = samples / peak
    return Waveform(samples=samples, sample_rate=w.sample_rate)


def synonym_table(vocab: Vocabulary = VOCABULARY) -> Dict[int, List[int]]:
    """token id -> the other members of its synonym group."""
    table = {}
    for group in SYNONYM_GROUPS:
        ids = vocab.encode(group)
        for token in ids:
            table[token] = [other for other in ids if other != token]
    return table


def augment_english(
    t: TokenSequence,
    cfg: Union[AugmentationConfig, float],
    seed: int,
    vocab: Vocabulary = VOCABULARY,
) -> TokenSequence:
    """Synonym swaps outside the marker position; length and marker are preserved."""
    if t.language != Language.ENGLISH:
        raise ModalityError(f"only English text is augmented, got {t.language.value}")
    prob = cfg.synonym_prob if isinstance(cfg, AugmentationConfig) else float(cfg)
    if prob <= 0.0:
        return t

    rng = np.random.default_rng(seed)
    table = synonym_table(vocab)
    tokens = list(t.tokens)
    for position, token in enumerate(tokens):
        if position == MARKER_POSITION or token not in table:
            continue
        if rng.random() < prob:
            options = table[token]
            tokens[position] = options[int(rng.integers(len(options)))]
    return TokenSequence(tokens=tuple(tokens), language=t.language)


def expand_with_augmentations(samples: List[Sample], cfg: AugmentationConfig, seed: int) -> List[Sample]:
    """The originals followed by `copies` augmented variants of each. Bengali tokens are never touched."""
    expanded = list(samples)
    for copy in range(cfg.copies):
        for sample in samples:
            record_seed = derive_seed(seed, "augment", sample.record_id, copy)
            expanded.append(
                replace(
                    sample,
                    record_id=f"{sample.record_id}+aug{copy}",
                    waveform=augment_audio(sample.waveform, cfg, record_seed),
                    english=augment_english(sample.english, cfg, record_seed),
                    augmented=True,
                )
            )
    logging.info(f"Augmented {len(samples)} training records to {len(expanded)}")
    return expanded
