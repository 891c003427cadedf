from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from scipy.signal import correlate

from utils.data import MARKERS, VOCABULARY, Sample, Vocabulary
from utils.encoders import TokenSequence, Waveform
from utils.model import SpeechAct

FRAME_MS = 40.0
MIN_PITCH, MAX_PITCH = 60.0, 500.0
RISE_THRESHOLD = 1.12
FALL_THRESHOLD = 0.88


def pitch_track(
    w: Waveform, frame_ms: float = FRAME_MS, min_pitch: float = MIN_PITCH, max_pitch: float = MAX_PITCH
) -> np.ndarray:
    """
    Frame-wise pitch in Hz from the autocorrelation peak inside the allowed
    lag range. Frames quieter than a tenth of the loudest frame are 0.
    """
    sr = w.sample_rate
    frame = max(8, int(round(frame_ms * sr / 1000.0)))
    lag_min = max(1, int(sr / max_pitch))
    lag_max = min(frame - 1, int(np.ceil(sr / min_pitch)))
    n_frames = len(w.samples) // frame
    if n_frames == 0 or lag_max <= lag_min:
        return np.zeros(0)

    frames = w.samples[: n_frames * frame].reshape(n_frames, frame)
    energy = np.sqrt(np.mean(frames**2, axis=1))
    loud = energy >= 0.1 * energy.max() if energy.max() > 0 else np.zeros(n_frames, dtype=bool)

    pitches = np.zeros(n_frames)
    for i in np.flatnonzero(loud):
        x = frames[i] - frames[i].mean()
        ac = correlate(x, x, mode="full", method="fft")[frame - 1 :]
        lag = lag_min + int(np.argmax(ac[lag_min : lag_max + 1]))
        pitches[i] = sr / lag
    return pitches


@dataclass(frozen=True)
class ContourSummary:
    terminal_ratio: float
    middle_ratio: float


def contour_summary(w: Waveform) -> ContourSummary:
    """Median pitch of the last and the middle fifth, each relative to the first fifth."""
    pitches = pitch_track(w)
    voiced = pitches[pitches > 0]
    if len(voiced) < 5:
        return ContourSummary(1.0, 1.0)
    fifth = max(1, len(voiced) // 5)
    start = np.median(voiced[:fifth])
    middle = np.median(voiced[len(voiced) // 2 - fifth // 2 : len(voiced) // 2 - fifth // 2 + fifth])
    end = np.median(voiced[-fifth:])
    return ContourSummary(terminal_ratio=float(end / start), middle_ratio=float(middle / start))


def audio_oracle(w: Waveform) -> SpeechAct:
    """Rising end -> Question, falling end -> Order, otherwise Request."""
    summary = contour_summary(w)
    if summary.terminal_ratio > RISE_THRESHOLD:
        return SpeechAct.QUESTION
    if summary.terminal_ratio < FALL_THRESHOLD:
        return SpeechAct.ORDER
    return SpeechAct.REQUEST


def text_oracle(english: TokenSequence, vocab: Vocabulary = VOCABULARY) -> SpeechAct:
    """Reads the class marker at position 0."""
    marker = vocab.tokens[english.tokens[0]]
    for act, word in MARKERS.items():
        if marker == word:
            return act
    return SpeechAct.REQUEST


def combine_oracles(audio: SpeechAct, text: SpeechAct) -> SpeechAct:
    """
    The rising contour is trusted for Question; otherwise the imperative
    marker decides Order and anything else is a Request.
    """
    if audio == SpeechAct.QUESTION:
        return SpeechAct.QUESTION
    return SpeechAct.ORDER if text == SpeechAct.ORDER else SpeechAct.REQUEST


def bimodal_oracle(w: Waveform, english: TokenSequence, vocab: Vocabulary = VOCABULARY) -> SpeechAct:
    return combine_oracles(audio_oracle(w), text_oracle(english, vocab))


def oracle_accuracies(samples: Sequence[Sample], vocab: Vocabulary = VOCABULARY) -> Dict[str, float]:
    if not samples:
        raise ValueError("oracle_accuracies needs at least one sample")
    hits: Dict[str, List[bool]] = {"audio": [], "text": [], "bimodal": []}
    for s in samples:
        audio = audio_oracle(s.waveform)
        text = text_oracle(s.english, vocab)
        hits["audio"].append(audio == s.label)
        hits["text"].append(text == s.label)
        hits["bimodal"].append(combine_oracles(audio, text) == s.label)
    return {name: float(np.mean(values)) for name, values in hits.items()}
