import csv
import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from utils.config_validator import GeneratorConfig
from utils.encoders import Language, TokenSequence, Waveform
from utils.model import SpeechAct
from utils.seeding import derive_seed
from utils.wav_io import encode_pcm16, read_wav

MANIFEST_NAME = "manifest.tsv"
VOCAB_NAME = "vocab.txt"
WAV_DIR = "wavs"
MANIFEST_FIELDS = ["id", "wav_path", "bengali", "english", "label", "speaker", "split"]
SPLITS = ("train", "val", "test")

TARGET_PEAK = 0.9
MIN_BENGALI, MAX_BENGALI = 5, 7

# --- VOCABULARY ---

SPECIALS = ["<pad>", "<unk>"]
MARKERS = {
    SpeechAct.REQUEST: "please",
    SpeechAct.QUESTION: "can",
    SpeechAct.ORDER: "must",
}
# Marker-preserving synonym groups for English augmentation.
SYNONYM_GROUPS = [
    ("open", "unlock"),
    ("close", "shut"),
    ("bring", "fetch"),
    ("give", "hand"),
    ("take", "grab"),
    ("clean", "wipe"),
    ("door", "gate"),
    ("water", "drink"),
    ("book", "novel"),
    ("window", "pane"),
    ("food", "meal"),
    ("bag", "sack"),
    ("light", "lamp"),
    ("car", "vehicle"),
]
VERBS = ["open", "close", "bring", "give", "take", "clean"]
NOUNS = ["door", "water", "book", "window", "food", "bag", "light", "car"]
DETERMINERS = ["the", "my", "your", "this"]
FILLERS = ["me", "quickly", "today"]

BENGALI_WORDS = [f"bn_{i:02d}" for i in range(48)]
QUESTION_PARTICLE = "bn_ki"
IMPERATIVE_VERB = "bn_dao"

BANK_SIZE = 48
BANK_SEED = 1300


class ModalityError(ValueError):
    """An operation received a token sequence of the wrong language."""


class DatasetIOError(OSError):
    """Reading or writing part of a dataset failed; names the path."""

    def __init__(self, path: str, detail: str):
        self.path = path
        super().__init__(f"{path}: {detail}")


class Vocabulary:
    """One token list shared by both languages. Ids are list positions."""

    def __init__(self, tokens: Sequence[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = list(tokens)
        self.index = {token: i for i, token in enumerate(self.tokens)}

    @classmethod
    def default(cls) -> "Vocabulary":
        english = []
        for word in list(MARKERS.values()) + [w for group in SYNONYM_GROUPS for w in group] + DETERMINERS + FILLERS:
            if word not in english:
                english.append(word)
        return cls(SPECIALS + english + BENGALI_WORDS + [QUESTION_PARTICLE, IMPERATIVE_VERB])

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, words: Iterable[str]) -> Tuple[int, ...]:
        try:
            return tuple(self.index[w] for w in words)
        except KeyError as e:
            raise KeyError(f"word {e.args[0]!r} is not in the vocabulary")

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.tokens[i] for i in ids]

    def sequence(self, words: Sequence[str], language: Language) -> TokenSequence:
        return TokenSequence(tokens=self.encode(words), language=language)

    def save(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls([line.rstrip("\n") for line in f if line.strip()])
        except OSError as e:
            raise DatasetIOError(path, f"cannot read vocabulary: {e}")


VOCABULARY = Vocabulary.default()


# --- SENTENCE BANK ---


@dataclass(frozen=True)
class SentenceTemplate:
    bengali: Tuple[str, ...]
    english: Tuple[str, ...]


def _build_bank() -> List[SentenceTemplate]:
    rng = np.random.default_rng(BANK_SEED)
    bank, seen = [], set()
    while len(bank) < BANK_SIZE:
        verb = VERBS[rng.integers(len(VERBS))]
        det = DETERMINERS[rng.integers(len(DETERMINERS))]
        noun = NOUNS[rng.integers(len(NOUNS))]
        if (verb, det, noun) in seen:
            continue
        seen.add((verb, det, noun))
        english = (verb, det, noun)
        if rng.random() < 0.5:
            english = english + (FILLERS[rng.integers(len(FILLERS))],)
        length = int(rng.integers(MIN_BENGALI, MAX_BENGALI + 1))
        bengali = tuple(BENGALI_WORDS[i] for i in rng.choice(len(BENGALI_WORDS), size=length, replace=False))
        bank.append(SentenceTemplate(bengali=bengali, english=english))
    return bank


SENTENCE_BANK = _build_bank()


def bengali_words(act: SpeechAct, template: SentenceTemplate, ambiguous: bool) -> Tuple[str, ...]:
    """
    Request and ambiguous Question share the template tokens exactly. Other
    Questions carry the question particle; Orders end in the imperative verb.
    """
    words = template.bengali
    if act == SpeechAct.ORDER:
        return words[:-1] + (IMPERATIVE_VERB,)
    if act == SpeechAct.QUESTION and not ambiguous:
        if len(words) < MAX_BENGALI:
            return words + (QUESTION_PARTICLE,)
        return words[:-1] + (QUESTION_PARTICLE,)
    return words


def english_words(marker_act: SpeechAct, template: SentenceTemplate) -> Tuple[str, ...]:
    return (MARKERS[marker_act],) + template.english


# --- DOMAIN TYPES ---


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    wav_path: str
    bengali: TokenSequence
    english: TokenSequence
    label: SpeechAct
    speaker: int
    split: str

    def __post_init__(self):
        if not MIN_BENGALI <= len(self.bengali) <= MAX_BENGALI:
            raise ValueError(f"record {self.id}: bengali has {len(self.bengali)} tokens, expected 5-7")
        if self.bengali.language != Language.BENGALI or self.english.language != Language.ENGLISH:
            raise ModalityError(f"record {self.id}: token sequences carry the wrong language tags")
        if self.split not in SPLITS:
            raise ValueError(f"record {self.id}: unknown split '{self.split}'")


@dataclass
class Sample:
    """A record with its audio loaded; what the model consumes."""

    record_id: str
    waveform: Waveform
    bengali: TokenSequence
    english: TokenSequence
    label: int
    speaker: int = 0
    split: str = "train"
    augmented: bool = False


@dataclass
class SynthesizedUtterance:
    waveform: Waveform
    bengali: TokenSequence
    english: TokenSequence
    label: SpeechAct
    speaker: int
    contour: SpeechAct
    marker_flipped: bool
    contour_flipped: bool
    ambiguous: bool


@dataclass
class DatasetManifest:
    path: str
    records: List[UtteranceRecord]
    checksum: str
    vocab_path: str
    vocabulary: Vocabulary = field(default_factory=Vocabulary.default)

    @property
    def root(self) -> str:
        return os.path.dirname(self.path)

    @property
    def class_counts(self) -> Dict[str, int]:
        counts = {act.label: 0 for act in SpeechAct}
        for record in self.records:
            counts[record.label.label] += 1
        return counts

    def split_records(self, split: Optional[str]) -> List[UtteranceRecord]:
        return [r for r in self.records if split is None or r.split == split]

    def summary(self) -> str:
        counts = self.class_counts
        return f"{len(self.records)} records ({counts['request']}/{counts['question']}/{counts['order']})"


# --- AUDIO SYNTHESIS ---


def normalize_amplitude(samples: np.ndarray, peak: float = TARGET_PEAK) -> np.ndarray:
    """Scales to the target peak; silence stays silent."""
    samples = np.asarray(samples, dtype=np.float64)
    current = np.max(np.abs(samples)) if samples.size else 0.0
    if current == 0.0:
        return samples.copy()
    return samples * (peak / current)


def pitch_contour(contour: SpeechAct, n: int) -> np.ndarray:
    """Multiplier on the base pitch over normalised time."""
    u = np.arange(n) / n
    if contour == SpeechAct.QUESTION:
        return np.where(u < 0.7, 1.0, 1.0 + 0.4 * (u - 0.7) / 0.3)
    if contour == SpeechAct.ORDER:
        return np.where(u < 0.6, 1.0, 1.0 - 0.3 * (u - 0.6) / 0.4)
    return 1.0 - 0.15 * np.exp(-0.5 * ((u - 0.5) / 0.1) ** 2)


def syllable_envelope(n: int, syllables: int, sample_rate: int) -> np.ndarray:
    u = np.arange(n) / n
    envelope = 0.6 + 0.4 * np.abs(np.sin(np.pi * syllables * u))
    ramp = min(n // 2, max(1, int(0.01 * sample_rate)))
    envelope[:ramp] *= np.linspace(0.0, 1.0, ramp)
    envelope[n - ramp :] *= np.linspace(1.0, 0.0, ramp)
    return envelope


def render_tone(
    contour: SpeechAct,
    n: int,
    sample_rate: int,
    base_pitch: float,
    syllables: int,
    phase: float = 0.0,
    harmonics: int = 4,
) -> np.ndarray:
    f0 = base_pitch * pitch_contour(contour, n)
    theta = phase + 2.0 * np.pi * np.cumsum(f0) / sample_rate
    tone = np.zeros(n)
    for h in range(1, harmonics + 1):
        if h * f0.max() >= sample_rate / 2:
            break
        tone += np.sin(h * theta) / h
    return tone * syllable_envelope(n, syllables, sample_rate)


def add_noise(samples: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    power = float(np.mean(samples**2)) if samples.size else 0.0
    if power == 0.0:
        return samples
    noise_std = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    return samples + rng.normal(0.0, noise_std, size=samples.shape)


# --- GENERATION ---


def synth_utterance(
    label: SpeechAct,
    cfg: GeneratorConfig,
    seed: int,
    sentence: Optional[int] = None,
    ambiguous: Optional[bool] = None,
    speaker: Optional[int] = None,
    vocab: Vocabulary = VOCABULARY,
) -> SynthesizedUtterance:
    """
    One utterance: a harmonic tone with a class-shaped pitch contour
    (Question rises at the end, Order falls, Request dips mid-way) and the
    Bengali/English token pair. With marker_noise the Request and Question
    English markers swap; with contour_noise the Request and Order contours
    swap. Unset sentence/ambiguity/speaker are drawn from the seed.
    """
    label = SpeechAct(label)
    rng = np.random.default_rng(seed)
    drawn_sentence = int(rng.integers(len(SENTENCE_BANK)))
    drawn_ambiguous = bool(rng.random() < cfg.ambiguity_fraction)
    drawn_speaker = int(rng.integers(cfg.speakers))
    sentence = drawn_sentence if sentence is None else sentence % len(SENTENCE_BANK)
    ambiguous = drawn_ambiguous if ambiguous is None else ambiguous
    speaker = drawn_speaker if speaker is None else speaker % cfg.speakers
    template = SENTENCE_BANK[sentence]

    marker_flip = bool(rng.random() < cfg.marker_noise)
    contour_flip = bool(rng.random() < cfg.contour_noise)

    marker_act = label
    if marker_flip and label != SpeechAct.ORDER:
        marker_act = SpeechAct.QUESTION if label == SpeechAct.REQUEST else SpeechAct.REQUEST
    contour = label
    if contour_flip and label != SpeechAct.QUESTION:
        contour = SpeechAct.ORDER if label == SpeechAct.REQUEST else SpeechAct.REQUEST

    bengali = bengali_words(label, template, ambiguous)
    english = english_words(marker_act, template)

    duration = cfg.duration_mean * (1.0 + cfg.duration_jitter * rng.standard_normal())
    duration = float(np.clip(duration, 0.5 * cfg.duration_mean, 1.5 * cfg.duration_mean))
    n = max(1, int(round(duration * cfg.sample_rate)))
    low, high = cfg.speaker_pitch_ranges[speaker]
    base_pitch = float(rng.uniform(low, high))
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    samples = render_tone(contour, n, cfg.sample_rate, base_pitch, len(bengali), phase)
    if cfg.snr_db is not None:
        samples = add_noise(samples, float(rng.uniform(*cfg.snr_db)), rng)
    samples = normalize_amplitude(samples)

    return SynthesizedUtterance(
        waveform=Waveform(samples=samples, sample_rate=cfg.sample_rate),
        bengali=vocab.sequence(bengali, Language.BENGALI),
        english=vocab.sequence(english, Language.ENGLISH),
        label=label,
        speaker=speaker,
        contour=contour,
        marker_flipped=marker_act != label,
        contour_flipped=contour != label,
        ambiguous=ambiguous,
    )


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class PlannedRecord:
    id: str
    label: SpeechAct
    sentence: int
    ambiguous: bool
    speaker: int
    split: str


def stratified_split(n: int, fractions: Sequence[float], rng: np.random.Generator) -> List[str]:
    """Split names for n items of one class; val and test get round(n * fraction), train the rest."""
    n_val = round_half_up(n * fractions[1])
    n_test = min(n - n_val, round_half_up(n * fractions[2]))
    names = ["val"] * n_val + ["test"] * n_test + ["train"] * (n - n_val - n_test)
    order = rng.permutation(n)
    out = [""] * n
    for slot, index in enumerate(order):
        out[index] = names[slot]
    return out


def plan_corpus(cfg: GeneratorConfig) -> List[PlannedRecord]:
    """
    Record layout: Request i and Question i are twins built on the same
    sentence; the first round(ambiguity_fraction * pairs) twins share
    identical Bengali tokens. Speakers rotate over the whole corpus.
    """
    n_request, n_question, _ = cfg.counts
    pairs = min(n_request, n_question)
    n_ambiguous = round_half_up(cfg.ambiguity_fraction * pairs)

    plan = []
    position = 0
    for act, count in zip(SpeechAct, cfg.counts):
        splits = stratified_split(count, cfg.split, np.random.default_rng(derive_seed(cfg.seed, "split", act.label)))
        for i in range(count):
            ambiguous = act != SpeechAct.ORDER and i < n_ambiguous
            plan.append(
                PlannedRecord(
                    id=f"{act.label}_{i:03d}",
                    label=act,
                    sentence=i % len(SENTENCE_BANK),
                    ambiguous=ambiguous,
                    speaker=position % cfg.speakers,
                    split=splits[i],
                )
            )
            position += 1
    return plan


def synthesize_corpus(cfg: GeneratorConfig) -> List[Tuple[PlannedRecord, SynthesizedUtterance]]:
    """The whole corpus in memory; each record draws from its own derived seed."""
    return [
        (
            item,
            synth_utterance(
                item.label,
                cfg,
                derive_seed(cfg.seed, item.id),
                sentence=item.sentence,
                ambiguous=item.ambiguous,
                speaker=item.speaker,
            ),
        )
        for item in plan_corpus(cfg)
    ]


def _manifest_bytes(records: Sequence[UtteranceRecord], vocab: Vocabulary) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter="\t", lineterminator="\n")
    writer.writerow(MANIFEST_FIELDS)
    for r in records:
        writer.writerow(
            [
                r.id,
                r.wav_path,
                " ".join(vocab.decode(r.bengali.tokens)),
                " ".join(vocab.decode(r.english.tokens)),
                r.label.label,
                r.speaker,
                r.split,
            ]
        )
    return buffer.getvalue().encode("utf-8")


def dataset_checksum(root: str, records: Sequence[UtteranceRecord]) -> str:
    """sha256 over the manifest, the vocabulary and every WAV in record order."""
    digest = hashlib.sha256()
    for name in [MANIFEST_NAME, VOCAB_NAME] + [r.wav_path for r in records]:
        path = os.path.join(root, name)
        try:
            with open(path, "rb") as f:
                digest.update(f.read())
        except OSError as e:
            raise DatasetIOError(path, f"cannot read for checksum: {e}")
    return digest.hexdigest()


def _write_bytes(path: str, blob: bytes):
    try:
        with open(path, "wb") as f:
            f.write(blob)
    except OSError as e:
        raise DatasetIOError(path, f"cannot write: {e}")


def generate_dataset(cfg: GeneratorConfig, out_dir: str, vocab: Vocabulary = VOCABULARY) -> DatasetManifest:
    """Writes WAVs, vocab.txt and manifest.tsv under out_dir."""
    wav_dir = os.path.join(out_dir, WAV_DIR)
    try:
        os.makedirs(wav_dir, exist_ok=True)
    except OSError as e:
        raise DatasetIOError(wav_dir, f"cannot create directory: {e}")

    records = []
    for item, utterance in synthesize_corpus(cfg):
        wav_path = f"{WAV_DIR}/{item.id}.wav"
        _write_bytes(os.path.join(out_dir, wav_path), encode_pcm16(utterance.waveform))
        records.append(
            UtteranceRecord(
                id=item.id,
                wav_path=wav_path,
                bengali=utterance.bengali,
                english=utterance.english,
                label=item.label,
                speaker=item.speaker,
                split=item.split,
            )
        )

    vocab_path = os.path.join(out_dir, VOCAB_NAME)
    try:
        vocab.save(vocab_path)
    except OSError as e:
        raise DatasetIOError(vocab_path, f"cannot write: {e}")
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    _write_bytes(manifest_path, _manifest_bytes(records, vocab))

    manifest = DatasetManifest(
        path=manifest_path,
        records=records,
        checksum=dataset_checksum(out_dir, records),
        vocab_path=vocab_path,
        vocabulary=vocab,
    )
    logging.info(f"Generated {manifest.summary()} in {out_dir} (sha256 {manifest.checksum[:12]})")
    return manifest


# --- LOADING ---


def load_manifest(dataset_dir: str) -> DatasetManifest:
    manifest_path = os.path.join(dataset_dir, MANIFEST_NAME)
    vocab_path = os.path.join(dataset_dir, VOCAB_NAME)
    vocab = Vocabulary.load(vocab_path)
    records = []
    try:
        with open(manifest_path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f, delimiter="\t")
            if reader.fieldnames != MANIFEST_FIELDS:
                raise DatasetIOError(manifest_path, f"unexpected header {reader.fieldnames}")
            for row in reader:
                records.append(
                    UtteranceRecord(
                        id=row["id"],
                        wav_path=row["wav_path"],
                        bengali=vocab.sequence(row["bengali"].split(), Language.BENGALI),
                        english=vocab.sequence(row["english"].split(), Language.ENGLISH),
                        label=SpeechAct.parse(row["label"]),
                        speaker=int(row["speaker"]),
                        split=row["split"],
                    )
                )
    except OSError as e:
        if isinstance(e, DatasetIOError):
            raise
        raise DatasetIOError(manifest_path, f"cannot read manifest: {e}")
    except (KeyError, ValueError) as e:
        raise DatasetIOError(manifest_path, f"malformed manifest row: {e}")

    return DatasetManifest(
        path=manifest_path,
        records=records,
        checksum=dataset_checksum(dataset_dir, records),
        vocab_path=vocab_path,
        vocabulary=vocab,
    )


def load_samples(manifest: DatasetManifest, split: Optional[str] = None) -> List[Sample]:
    samples = []
    for record in manifest.split_records(split):
        path = os.path.join(manifest.root, record.wav_path)
        try:
            waveform = read_wav(path)
        except OSError as e:
            raise DatasetIOError(path, f"cannot read audio: {e}")
        samples.append(
            Sample(
                record_id=record.id,
                waveform=waveform,
                bengali=record.bengali,
                english=record.english,
                label=int(record.label),
                speaker=record.speaker,
                split=record.split,
            )
        )
    return samples


def samples_from_corpus(cfg: GeneratorConfig) -> List[Sample]:
    """In-memory corpus, for checks that do not need files on disk."""
    return [
        Sample(
            record_id=item.id,
            waveform=u.waveform,
            bengali=u.bengali,
            english=u.english,
            label=int(item.label),
            speaker=item.speaker,
            split=item.split,
        )
        for item, u in synthesize_corpus(cfg)
    ]
