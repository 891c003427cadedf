import logging
import struct

import numpy as np

from utils.encoders import Waveform

PCM_FORMAT = 1
BITS_PER_SAMPLE = 16
FULL_SCALE = 32768.0


class WavFormatError(ValueError):
    """The file is not a RIFF/WAVE PCM16 mono file; names the offending field."""

    def __init__(self, path: str, field: str, detail: str):
        self.path = path
        self.field = field
        super().__init__(f"{path}: invalid WAV field '{field}': {detail}")


def encode_pcm16(w: Waveform) -> bytes:
    """RIFF/WAVE bytes of a mono PCM16 file."""
    q = np.clip(np.round(w.samples * FULL_SCALE), -32768, 32767).astype("<i2")
    data = q.tobytes()
    block_align = BITS_PER_SAMPLE // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(data),
        b"WAVE",
        b"fmt ",
        16,
        PCM_FORMAT,
        1,
        w.sample_rate,
        w.sample_rate * block_align,
        block_align,
        BITS_PER_SAMPLE,
        b"data",
        len(data),
    )
    return header + data


def write_wav(w: Waveform, path: str):
    with open(path, "wb") as f:
        f.write(encode_pcm16(w))


def decode_pcm16(blob: bytes, path: str = "<bytes>") -> Waveform:
    if len(blob) < 12:
        raise WavFormatError(path, "RIFF", f"file is only {len(blob)} bytes")
    riff, _, wave = struct.unpack_from("<4sI4s", blob, 0)
    if riff != b"RIFF":
        raise WavFormatError(path, "ChunkID", f"expected b'RIFF', got {riff!r}")
    if wave != b"WAVE":
        raise WavFormatError(path, "Format", f"expected b'WAVE', got {wave!r}")

    fmt = None
    offset = 12
    while offset + 8 <= len(blob):
        chunk_id, size = struct.unpack_from("<4sI", blob, offset)
        body = offset + 8
        if chunk_id == b"fmt ":
            if size < 16:
                raise WavFormatError(path, "Subchunk1Size", f"fmt chunk of {size} bytes")
            if body + size > len(blob):
                raise WavFormatError(path, "Subchunk1Size", f"declares {size} bytes, file holds {len(blob) - body}")
            fmt = struct.unpack_from("<HHIIHH", blob, body)
        elif chunk_id == b"data":
            if fmt is None:
                raise WavFormatError(path, "fmt ", "data chunk precedes the fmt chunk")
            if body + size > len(blob):
                raise WavFormatError(path, "Subchunk2Size", f"declares {size} bytes, file holds {len(blob) - body}")
            return _samples_from(fmt, blob[body : body + size], path)
        offset = body + size + (size % 2)

    if fmt is None:
        raise WavFormatError(path, "fmt ", "missing fmt chunk")
    raise WavFormatError(path, "data", "missing data chunk")


def _samples_from(fmt, data: bytes, path: str) -> Waveform:
    audio_format, channels, sample_rate, byte_rate, block_align, bits = fmt
    if audio_format != PCM_FORMAT:
        raise WavFormatError(path, "AudioFormat", f"only PCM (1) is supported, got {audio_format}")
    if channels != 1:
        raise WavFormatError(path, "NumChannels", f"only mono is supported, got {channels}")
    if bits != BITS_PER_SAMPLE:
        raise WavFormatError(path, "BitsPerSample", f"only 16-bit is supported, got {bits}")
    if sample_rate <= 0:
        raise WavFormatError(path, "SampleRate", f"must be > 0, got {sample_rate}")
    if block_align != 2 or byte_rate != sample_rate * 2:
        raise WavFormatError(path, "ByteRate", f"{byte_rate} inconsistent with {sample_rate} Hz mono PCM16")
    if len(data) % 2:
        raise WavFormatError(path, "Subchunk2Size", f"odd data size {len(data)}")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / FULL_SCALE
    return Waveform(samples=samples, sample_rate=sample_rate)


def read_wav(path: str) -> Waveform:
    with open(path, "rb") as f:
        blob = f.read()
    w = decode_pcm16(blob, path)
    logging.debug(f"Read {len(w)} samples at {w.sample_rate} Hz from {path}")
    return w
