import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.config_validator import EncoderConfig
from utils.numcore import (
    Tensor,
    concat,
    conv1d,
    dropout,
    gelu,
    layer_norm,
    softmax_rows,
    tensor,
)

Params = Dict[str, Tensor]

DEFAULT_SAMPLE_RATE = 44100


class FrameCountError(ValueError):
    """The waveform is too short for the convolution stack."""

    def __init__(self, length: int, minimum: int):
        self.length = length
        self.minimum = minimum
        super().__init__(
            f"waveform of {length} samples yields no frames; at least {minimum} samples are required"
        )


class ConfigurationError(ValueError):
    """Parameters do not fit the requested layer configuration."""


class Language(str, Enum):
    BENGALI = "bengali"
    ENGLISH = "english"


class Modality(str, Enum):
    SPEECH = "speech"
    TEXT = "text"
    FUSED = "fused"


# --- DOMAIN TYPES ---


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("waveform samples must lie in [-1, 1]")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[int, ...]
    language: Language

    def __post_init__(self):
        tokens = tuple(int(t) for t in self.tokens)
        if not tokens:
            raise ValueError("token sequence must not be empty")
        if any(t < 0 for t in tokens):
            raise IndexError(f"negative token id in {tokens}")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "language", Language(self.language))

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class FeatureSequence:
    values: Tensor
    modality: Modality

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class EncoderOutput:
    features: FeatureSequence
    pooled: Tensor
    attention: List[List[np.ndarray]] = field(default_factory=list)


@dataclass(frozen=True)
class ForwardContext:
    """Per-call switches: dropout only fires in training mode with an rng."""

    training: bool = False
    rng: Optional[np.random.Generator] = None
    gelu_approximate: bool = False
    ln_eps: float = 1e-5

    def drop(self, x: Tensor, rate: float) -> Tensor:
        if not self.training:
            return x
        return dropout(x, rate, self.rng)

    def gelu(self, x: Tensor) -> Tensor:
        return gelu(x, approximate=self.gelu_approximate)


EVAL = ForwardContext()


# --- INITIALISATION ---


def _weight(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> Tensor:
    return tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape: int) -> Tensor:
    return tensor(np.ones(shape), requires_grad=True)


def init_linear(rng: np.random.Generator, params: Params, name: str, fan_in: int, fan_out: int, bias: bool = True):
    params[f"{name}.w"] = _weight(rng, fan_in, (fan_in, fan_out))
    if bias:
        params[f"{name}.b"] = _zeros(fan_out)


def init_layer_norm(params: Params, name: str, width: int):
    params[f"{name}.gain"] = _ones(width)
    params[f"{name}.bias"] = _zeros(width)


def init_attention(rng: np.random.Generator, params: Params, prefix: str, width: int):
    init_linear(rng, params, f"{prefix}.q", width, width)
    # A key bias would shift every score of a row equally, so keys have none.
    init_linear(rng, params, f"{prefix}.k", width, width, bias=False)
    init_linear(rng, params, f"{prefix}.v", width, width)
    init_linear(rng, params, f"{prefix}.o", width, width)


def init_block(rng: np.random.Generator, params: Params, prefix: str, width: int, ff_width: int):
    init_attention(rng, params, f"{prefix}.attn", width)
    init_layer_norm(params, f"{prefix}.ln1", width)
    init_linear(rng, params, f"{prefix}.ff1", width, ff_width)
    init_linear(rng, params, f"{prefix}.ff2", ff_width, width)
    init_layer_norm(params, f"{prefix}.ln2", width)


def init_audio_encoder(cfg: EncoderConfig, prefix: str = "audio", seed: Optional[int] = None) -> Params:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params: Params = {}
    channels = 1
    for i, kernel in enumerate(cfg.conv_kernels):
        params[f"{prefix}.conv{i}.w"] = _weight(rng, kernel * channels, (kernel, channels, cfg.width))
        params[f"{prefix}.conv{i}.b"] = _zeros(cfg.width)
        init_layer_norm(params, f"{prefix}.conv{i}.ln", cfg.width)
        channels = cfg.width
    for b in range(cfg.blocks):
        init_block(rng, params, f"{prefix}.block{b}", cfg.width, cfg.ff_width)
    return params


def init_text_encoder(cfg: EncoderConfig, prefix: str = "text", seed: Optional[int] = None) -> Params:
    if cfg.vocab_size is None:
        raise ConfigurationError("text encoder needs vocab_size")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params: Params = {f"{prefix}.embed": tensor(rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.width)), requires_grad=True)}
    for b in range(cfg.blocks):
        init_block(rng, params, f"{prefix}.block{b}", cfg.width, cfg.ff_width)
    return params


# --- LAYERS ---


def linear(x: Tensor, params: Params, name: str) -> Tensor:
    out = x @ params[f"{name}.w"]
    bias = params.get(f"{name}.b")
    return out + bias if bias is not None else out


def attention(
    queries: Tensor, keys_values: Tensor, params: Params, prefix: str, n_heads: int
) -> Tuple[Tensor, List[np.ndarray]]:
    """
    Multi-head scaled dot-product attention, softmax(Q K^T / sqrt(d_head)) V,
    followed by the output projection. Returns the output and one
    row-stochastic weight matrix per head.
    """
    width = queries.shape[1]
    if keys_values.shape[1] != width:
        raise ConfigurationError(
            f"query width {width} does not match key/value width {keys_values.shape[1]}"
        )
    if n_heads < 1 or width % n_heads != 0:
        raise ConfigurationError(f"width {width} is not divisible into {n_heads} heads")
    if params[f"{prefix}.q.w"].shape != (width, width):
        raise ConfigurationError(
            f"{prefix} projections have shape {params[f'{prefix}.q.w'].shape}, expected {(width, width)}"
        )

    q = linear(queries, params, f"{prefix}.q")
    k = linear(keys_values, params, f"{prefix}.k")
    v = linear(keys_values, params, f"{prefix}.v")
    head_width = width // n_heads
    scale = 1.0 / math.sqrt(head_width)

    heads = []
    weights = []
    for h in range(n_heads):
        cols = slice(h * head_width, (h + 1) * head_width)
        scores = (q[:, cols] @ k[:, cols].T) * scale
        probs = softmax_rows(scores)
        heads.append(probs @ v[:, cols])
        weights.append(probs.data)
    return linear(concat(heads, axis=1), params, f"{prefix}.o"), weights


def self_attention_block(
    x: Tensor,
    params: Params,
    prefix: str,
    n_heads: int,
    ctx: ForwardContext = EVAL,
    dropout_rate: float = 0.0,
) -> Tuple[Tensor, List[np.ndarray]]:
    """Post-norm transformer block: attention and GELU feed-forward, each with residual + layer norm."""
    attended, weights = attention(x, x, params, f"{prefix}.attn", n_heads)
    x = layer_norm(
        x + ctx.drop(attended, dropout_rate),
        params[f"{prefix}.ln1.gain"],
        params[f"{prefix}.ln1.bias"],
        ctx.ln_eps,
    )
    hidden = ctx.gelu(linear(x, params, f"{prefix}.ff1"))
    out = linear(hidden, params, f"{prefix}.ff2")
    x = layer_norm(
        x + ctx.drop(out, dropout_rate),
        params[f"{prefix}.ln2.gain"],
        params[f"{prefix}.ln2.bias"],
        ctx.ln_eps,
    )
    return x, weights


# --- AUDIO ---


def frame_count(length: int, kernels: Sequence[int], strides: Sequence[int]) -> int:
    """Composes T = (len - kernel) // stride + 1 over every layer; 0 when too short."""
    for kernel, stride in zip(kernels, strides):
        if length < kernel:
            return 0
        length = (length - kernel) // stride + 1
    return length


def minimum_length(kernels: Sequence[int], strides: Sequence[int]) -> int:
    """Smallest input length that yields one output frame."""
    required = 1
    for kernel, stride in reversed(list(zip(kernels, strides))):
        required = (required - 1) * stride + kernel
    return required


def _frame_layers(cfg: EncoderConfig) -> Tuple[List[int], List[int]]:
    return list(cfg.conv_kernels) + [cfg.frame_pool], list(cfg.conv_strides) + [cfg.frame_pool]


def audio_frame_count(length: int, cfg: EncoderConfig) -> int:
    kernels, strides = _frame_layers(cfg)
    return frame_count(length, kernels, strides)


def conv_positional_encode(
    w: Waveform, params: Params, cfg: EncoderConfig, prefix: str = "audio", ctx: ForwardContext = EVAL
) -> FeatureSequence:
    """
    Strided 1-D convolutions over the raw waveform, each followed by GELU and
    layer norm, then non-overlapping frame averaging (kernel = stride = frame_pool).
    """
    kernels, strides = _frame_layers(cfg)
    if frame_count(len(w), kernels, strides) < 1:
        raise FrameCountError(len(w), minimum_length(kernels, strides))

    x = tensor(w.samples.reshape(-1, 1))
    for i, stride in enumerate(cfg.conv_strides):
        x = conv1d(x, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"], stride)
        x = layer_norm(
            ctx.gelu(x),
            params[f"{prefix}.conv{i}.ln.gain"],
            params[f"{prefix}.conv{i}.ln.bias"],
            ctx.ln_eps,
        )

    pool = cfg.frame_pool
    if pool > 1:
        frames = x.shape[0] // pool
        x = x[: frames * pool].reshape(frames, pool, cfg.width).mean(axis=1)
    return FeatureSequence(values=x, modality=Modality.SPEECH)


def encode_audio(
    w: Waveform, params: Params, cfg: EncoderConfig, prefix: str = "audio", ctx: ForwardContext = EVAL
) -> EncoderOutput:
    """Convolutional positional encoding, transformer blocks, mean pooling over frames."""
    x = conv_positional_encode(w, params, cfg, prefix, ctx).values
    maps = []
    for b in range(cfg.blocks):
        x, weights = self_attention_block(x, params, f"{prefix}.block{b}", cfg.heads, ctx, cfg.dropout)
        maps.append(weights)
    features = FeatureSequence(values=x, modality=Modality.SPEECH)
    return EncoderOutput(features=features, pooled=x.mean(axis=0), attention=maps)


# --- TEXT ---


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    positions = np.arange(length)[:, None]
    rates = np.power(10000.0, -np.arange(0, width, 2) / width)
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: width // 2])
    return table


def encode_text(
    t: TokenSequence, params: Params, cfg: EncoderConfig, prefix: str = "text", ctx: ForwardContext = EVAL
) -> EncoderOutput:
    """Embedding lookup plus sinusoidal positions, transformer blocks, mean pooling over tokens."""
    embed = params[f"{prefix}.embed"]
    vocab_size = embed.shape[0]
    for token in t.tokens:
        if token >= vocab_size:
            raise IndexError(f"token id {token} is outside the vocabulary of {vocab_size}")

    ids = np.array(t.tokens, dtype=np.int64)
    x = embed[ids] + sinusoidal_positions(len(ids), embed.shape[1])
    maps = []
    for b in range(cfg.blocks):
        x, weights = self_attention_block(x, params, f"{prefix}.block{b}", cfg.heads, ctx, cfg.dropout)
        maps.append(weights)
    features = FeatureSequence(values=x, modality=Modality.TEXT)
    logging.debug(f"encode_text: {len(ids)} {t.language.value} tokens")
    return EncoderOutput(features=features, pooled=x.mean(axis=0), attention=maps)
