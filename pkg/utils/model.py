import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple, Union

import numpy as np

from utils.config_validator import LossWeights, ModelConfig, RunConfig
from utils.encoders import (
    EVAL,
    ConfigurationError,
    ForwardContext,
    Params,
    TokenSequence,
    encode_audio,
    encode_text,
    init_audio_encoder,
    init_linear,
    init_text_encoder,
    linear,
)
from utils.fusion import concat_with_cls, fused_width, fusion_transformer, init_fusion, otk_fusion
from utils.numcore import Tensor, _softmax_np, concat, cross_entropy, tensor
from utils.seeding import derive_seed

if TYPE_CHECKING:
    from utils.data import Sample

VARIANTS = ("speech_only", "bimodal_concat", "beats_xformer", "beats_otk")
N_CLASSES = 3


class SpeechAct(IntEnum):
    REQUEST = 0
    QUESTION = 1
    ORDER = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: Union[str, int, "SpeechAct"]) -> "SpeechAct":
        if isinstance(value, str) and not value.isdigit():
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown speech act '{value}'")
        return cls(int(value))


CLASS_NAMES = tuple(act.label for act in SpeechAct)


# --- VARIANTS ---


@dataclass(frozen=True)
class ModelVariant:
    """One of the four model layouts together with the configuration it was built from."""

    name: str
    model: ModelConfig
    text_source: str = "english"
    seed: int = 0

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise ConfigurationError(f"unknown variant '{self.name}' (known: {', '.join(VARIANTS)})")
        if self.name.startswith("beats_") and self.model.fusion.scheme != self.name.split("_", 1)[1]:
            raise ConfigurationError(
                f"variant {self.name} does not match fusion scheme '{self.model.fusion.scheme}'"
            )

    @classmethod
    def from_run_config(
        cls, cfg: RunConfig, vocab_size: Optional[int] = None, name: Optional[str] = None
    ) -> "ModelVariant":
        name = name or cfg.resolved_variant
        model = cfg.model
        if name.startswith("beats_"):
            fusion = model.fusion.model_copy(update={"scheme": name.split("_", 1)[1]})
            model = model.model_copy(update={"fusion": fusion})
        if vocab_size is not None:
            configured = model.text.vocab_size
            if configured is not None and configured < vocab_size:
                raise ConfigurationError(
                    f"text.vocab_size {configured} is smaller than the dataset vocabulary ({vocab_size})"
                )
            if configured is None:
                text = model.text.model_copy(update={"vocab_size": vocab_size})
                model = model.model_copy(update={"text": text})
        return cls(name=name, model=model, text_source=cfg.text_source, seed=cfg.seed)

    @property
    def uses_text(self) -> bool:
        return self.name != "speech_only"

    @property
    def uses_fusion(self) -> bool:
        return self.name.startswith("beats_")

    @property
    def heads(self) -> Tuple[str, ...]:
        if self.name == "speech_only":
            return ("speech",)
        if self.name == "bimodal_concat":
            return ("concat",)
        return ("speech", "fused", "text")

    @property
    def prediction_head(self) -> str:
        """The head whose argmax is the model's prediction."""
        return {"speech_only": "speech", "bimodal_concat": "concat"}.get(self.name, "fused")

    def context(self, training: bool = False, rng: Optional[np.random.Generator] = None) -> ForwardContext:
        return ForwardContext(
            training=training,
            rng=rng,
            gelu_approximate=self.model.gelu == "tanh",
            ln_eps=self.model.ln_eps,
        )


# --- PARAMETERS ---


def _init_head(rng: np.random.Generator, params: Params, name: str, in_width: int, hidden: int):
    init_linear(rng, params, f"{name}.fc1", in_width, hidden)
    init_linear(rng, params, f"{name}.fc2", hidden, N_CLASSES)


def init_params(variant: ModelVariant) -> Params:
    """
    Fresh parameters for a variant. Each component draws from its own
    stream derived from the run seed, so variants built from the same seed
    share identical encoder initialisations.
    """
    cfg = variant.model
    params: Params = {}
    params.update(init_audio_encoder(cfg.audio, seed=derive_seed(variant.seed, "audio", cfg.audio.seed)))
    if variant.uses_text:
        params.update(init_text_encoder(cfg.text, seed=derive_seed(variant.seed, "text", cfg.text.seed)))
    if variant.uses_fusion:
        params.update(init_fusion(cfg, seed=derive_seed(variant.seed, "fusion", cfg.fusion.scheme)))

    rng = np.random.default_rng(derive_seed(variant.seed, "heads", variant.name))
    width = cfg.audio.width
    for head in variant.heads:
        in_width = {"speech": width, "text": width, "concat": 2 * width, "fused": fused_width(cfg)}[head]
        _init_head(rng, params, f"head.{head}", in_width, cfg.head_width)
    logging.debug(f"Initialised {len(params)} parameter arrays for {variant.name}")
    return params


def parameter_count(params: Params) -> int:
    return sum(p.size for p in params.values())


def save_params(params: Params, path: str):
    arrays = {name: p.data for name, p in sorted(params.items())}
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_params(path: str, variant: Optional[ModelVariant] = None) -> Params:
    """Loads an .npz archive; with a variant, the names and shapes must match a fresh init."""
    with np.load(path) as archive:
        params = {name: tensor(archive[name], requires_grad=True) for name in archive.files}
    if variant is not None:
        expected = init_params(variant)
        missing = sorted(set(expected) - set(params))
        unexpected = sorted(set(params) - set(expected))
        if missing or unexpected:
            raise ConfigurationError(
                f"{path} does not fit variant {variant.name}: missing {missing[:3]}, unexpected {unexpected[:3]}"
            )
        for name, p in expected.items():
            if params[name].shape != p.shape:
                raise ConfigurationError(
                    f"{path}: parameter {name} has shape {params[name].shape}, expected {p.shape}"
                )
    return params


# --- LOSS ---


def joint_loss(w: Union[LossWeights, Tuple[float, float, float]], l_speech, l_fused, l_text):
    """alpha * L_speech + beta * L_fused + gamma * L_text. Accepts floats or Tensors."""
    if not isinstance(w, LossWeights):
        alpha, beta, gamma = w
        w = LossWeights(alpha=alpha, beta=beta, gamma=gamma)
    for name, value in (("l_speech", l_speech), ("l_fused", l_fused), ("l_text", l_text)):
        raw = value.item() if isinstance(value, Tensor) else float(value)
        if not np.isfinite(raw) or raw < 0:
            raise ValueError(f"{name} must be finite and >= 0, got {raw}")
    return l_speech * w.alpha + l_fused * w.beta + l_text * w.gamma


# --- FORWARD ---


def classifier_head(x: Tensor, params: Params, name: str, ctx: ForwardContext = EVAL) -> Tensor:
    hidden = ctx.gelu(linear(x, params, f"{name}.fc1"))
    return linear(hidden, params, f"{name}.fc2")


@dataclass
class ForwardResult:
    logits: Dict[str, Tensor]
    losses: Dict[str, Tensor] = field(default_factory=dict)
    total_loss: Optional[Tensor] = None
    prediction_head: str = "fused"
    attention: Dict[str, list] = field(default_factory=dict)

    @property
    def probabilities(self) -> Dict[str, np.ndarray]:
        return {head: _softmax_np(logit.data) for head, logit in self.logits.items()}

    @property
    def prediction_probs(self) -> np.ndarray:
        return self.probabilities[self.prediction_head]

    @property
    def prediction(self) -> int:
        # np.argmax returns the first maximum, so the lowest class index wins ties.
        return int(np.argmax(self.prediction_probs))


def text_tokens(variant: ModelVariant, sample: "Sample") -> TokenSequence:
    return sample.english if variant.text_source == "english" else sample.bengali


def forward(
    variant: ModelVariant,
    params: Params,
    sample: "Sample",
    weights: Optional[LossWeights] = None,
    ctx: ForwardContext = EVAL,
    compute_loss: bool = True,
) -> ForwardResult:
    """
    Runs one record through the variant. Unless compute_loss is off, the
    per-head cross-entropies against the sample label and the variant total
    loss are attached.
    """
    cfg = variant.model
    audio = encode_audio(sample.waveform, params, cfg.audio, ctx=ctx)
    logits: Dict[str, Tensor] = {}
    maps: Dict[str, list] = {"audio": audio.attention}

    if variant.name == "speech_only":
        logits["speech"] = classifier_head(audio.pooled, params, "head.speech", ctx)
    else:
        text = encode_text(text_tokens(variant, sample), params, cfg.text, ctx=ctx)
        maps["text"] = text.attention
        if variant.name == "bimodal_concat":
            joined = concat([audio.pooled, text.pooled], axis=0)
            logits["concat"] = classifier_head(joined, params, "head.concat", ctx)
        else:
            if variant.name == "beats_xformer":
                fused_seq = concat_with_cls(
                    audio.features,
                    text.features,
                    params["fusion.cls"],
                    params["fusion.type.audio"],
                    params["fusion.type.text"],
                )
                fused, maps["fusion"] = fusion_transformer(fused_seq, params, cfg.fusion, ctx=ctx)
            else:
                fused, maps["fusion"] = otk_fusion(audio.features, text.features, params, cfg.fusion, ctx=ctx)
            logits["speech"] = classifier_head(audio.pooled, params, "head.speech", ctx)
            logits["fused"] = classifier_head(fused, params, "head.fused", ctx)
            logits["text"] = classifier_head(text.pooled, params, "head.text", ctx)

    result = ForwardResult(logits=logits, prediction_head=variant.prediction_head, attention=maps)
    if not compute_loss:
        return result

    result.losses = {head: cross_entropy(logit, int(sample.label)) for head, logit in logits.items()}
    if variant.uses_fusion:
        result.total_loss = joint_loss(
            weights or LossWeights(),
            result.losses["speech"],
            result.losses["fused"],
            result.losses["text"],
        )
    else:
        result.total_loss = result.losses[variant.prediction_head]
    return result


def predict(variant: ModelVariant, params: Params, samples: List["Sample"]) -> List[int]:
    return [forward(variant, params, s, compute_loss=False).prediction for s in samples]
