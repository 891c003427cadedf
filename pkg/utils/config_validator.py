from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional, Tuple
import logging

from utils.config_parser import ParsedConfig, parse_config_file

SUM_TOLERANCE = 1e-12
MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    """The run configuration failed validation; `problems` lists every failure."""

    def __init__(self, problems: List[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def _as_list(v):
    if isinstance(v, str):
        return [item.strip() for item in v.split(",") if item.strip()]
    return v


def _as_range(v):
    v = _as_list(v)
    if isinstance(v, list) and len(v) == 1:
        return [v[0], v[0]]
    return v


def _check_range(name: str, v):
    if v is not None and v[0] > v[1]:
        raise ValueError(f"{name} range is degenerate: min {v[0]} > max {v[1]}")
    return v


# --- CONFIGURATION MODELS ---


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EncoderConfig(_Strict):
    width: int = Field(32, ge=1)
    blocks: int = Field(2, ge=0)
    heads: int = Field(4, ge=1)
    ff_width: int = Field(64, ge=1)
    conv_kernels: List[int] = [10, 8, 4]
    conv_strides: List[int] = [5, 4, 2]
    frame_pool: int = Field(24, ge=1)
    vocab_size: Optional[int] = Field(None, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    seed: int = Field(0, ge=0, le=MAX_SEED)

    @field_validator("conv_kernels", "conv_strides", mode="before")
    @classmethod
    def split_lists(cls, v):
        return _as_list(v)

    @field_validator("conv_kernels", "conv_strides")
    @classmethod
    def check_positive(cls, v):
        if any(item < 1 for item in v):
            raise ValueError("kernel widths and strides must be >= 1")
        return v

    @model_validator(mode="after")
    def check_shapes(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")
        if len(self.conv_kernels) != len(self.conv_strides):
            raise ValueError("conv_kernels and conv_strides must have the same length")
        return self


class FusionConfig(_Strict):
    scheme: Literal["xformer", "otk"] = "xformer"
    blocks: int = Field(1, ge=1)
    heads: int = Field(4, ge=1)
    ff_width: int = Field(64, ge=1)
    references: int = Field(8, ge=1)
    epsilon: float = Field(0.1, gt=0.0)
    tol: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(500, ge=1)
    otk_wiring: Literal["cross_self", "cross_only", "self_only"] = "cross_self"


class ModelConfig(_Strict):
    audio: EncoderConfig = Field(default_factory=EncoderConfig)
    text: EncoderConfig = Field(default_factory=EncoderConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    head_width: int = Field(32, ge=1)
    gelu: Literal["exact", "tanh"] = "exact"
    ln_eps: float = Field(1e-5, gt=0.0)

    @model_validator(mode="after")
    def check_widths(self):
        if self.audio.width != self.text.width:
            raise ValueError(
                f"audio width {self.audio.width} and text width {self.text.width} must match for fusion"
            )
        if self.audio.width % self.fusion.heads != 0:
            raise ValueError(
                f"width {self.audio.width} is not divisible by fusion heads {self.fusion.heads}"
            )
        return self


class LossWeights(_Strict):
    alpha: float = Field(0.15, ge=0.0)
    beta: float = Field(0.7, ge=0.0)
    gamma: float = Field(0.15, ge=0.0)

    @model_validator(mode="after")
    def check_sum(self):
        total = self.alpha + self.beta + self.gamma
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"alpha + beta + gamma must equal 1, got {total!r}")
        return self

    @classmethod
    def for_ablation(cls, alpha: float) -> "LossWeights":
        """Ablation line: alpha = gamma, beta = 1 - 2 * alpha."""
        if not 0.0 < alpha < 0.5:
            raise ValueError(f"ablation alpha must lie in (0, 0.5), got {alpha}")
        return cls(alpha=alpha, beta=1.0 - 2.0 * alpha, gamma=alpha)


class OptimizerConfig(_Strict):
    lr: float = Field(1e-3, ge=0.0)
    batch_size: int = Field(8, ge=1)
    epochs: int = Field(30, ge=0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


class GeneratorConfig(_Strict):
    counts: List[int] = [25, 35, 25]
    duration_mean: float = Field(1.3, gt=0.0)
    duration_jitter: float = Field(0.05, ge=0.0)
    sample_rate: int = Field(44100, gt=0)
    speakers: int = Field(4, ge=1)
    speaker_pitch_ranges: List[Tuple[float, float]] = [
        (100.0, 130.0),
        (110.0, 145.0),
        (180.0, 220.0),
        (195.0, 240.0),
    ]
    snr_db: Optional[Tuple[float, float]] = (10.0, 20.0)
    marker_noise: float = Field(0.2, ge=0.0, le=1.0)
    contour_noise: float = Field(0.2, ge=0.0, le=1.0)
    ambiguity_fraction: float = Field(0.6, ge=0.0, le=1.0)
    split: List[float] = [0.7, 0.15, 0.15]
    seed: int = Field(0, ge=0, le=MAX_SEED)

    @field_validator("counts", "split", mode="before")
    @classmethod
    def split_lists(cls, v):
        return _as_list(v)

    @field_validator("snr_db", mode="before")
    @classmethod
    def split_snr(cls, v):
        return _as_range(v)

    @field_validator("speaker_pitch_ranges", mode="before")
    @classmethod
    def parse_pitch_ranges(cls, v):
        v = _as_list(v)
        if isinstance(v, list):
            return [tuple(item.split(":")) if isinstance(item, str) else item for item in v]
        return v

    @field_validator("counts")
    @classmethod
    def check_counts(cls, v):
        if len(v) != 3 or any(c < 1 for c in v):
            raise ValueError("counts needs three values (request, question, order), each >= 1")
        return v

    @field_validator("split")
    @classmethod
    def check_split(cls, v):
        if len(v) != 3 or any(f < 0 for f in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("split needs three nonnegative fractions (train, val, test) summing to 1")
        return v

    @field_validator("snr_db")
    @classmethod
    def check_snr(cls, v):
        return _check_range("snr_db", v)

    @model_validator(mode="after")
    def check_speakers(self):
        if len(self.speaker_pitch_ranges) != self.speakers:
            raise ValueError(
                f"speaker_pitch_ranges has {len(self.speaker_pitch_ranges)} entries for {self.speakers} speakers"
            )
        for low, high in self.speaker_pitch_ranges:
            if not 0 < low <= high < self.sample_rate / 2:
                raise ValueError(f"pitch range {low}:{high} is invalid for {self.sample_rate} Hz")
        return self


class AugmentationConfig(_Strict):
    # Time-domain transforms only; Bengali text has no augmentation knob at all.
    time_shift_ms: Tuple[float, float] = (-50.0, 50.0)
    gain_db: Tuple[float, float] = (-3.0, 3.0)
    snr_db: Optional[Tuple[float, float]] = (15.0, 30.0)
    synonym_prob: float = Field(0.3, ge=0.0, le=1.0)
    copies: int = Field(2, ge=0)

    @field_validator("time_shift_ms", "gain_db", "snr_db", mode="before")
    @classmethod
    def split_ranges(cls, v):
        return _as_range(v)

    @field_validator("time_shift_ms", "gain_db", "snr_db")
    @classmethod
    def check_ranges(cls, v, info):
        return _check_range(info.field_name, v)


class AblationConfig(_Strict):
    grid: List[float] = [0.1, 0.15, 0.20, 0.25, 0.30]
    schemes: List[Literal["xformer", "otk"]] = ["xformer", "otk"]

    @field_validator("grid", "schemes", mode="before")
    @classmethod
    def split_lists(cls, v):
        return _as_list(v)

    @field_validator("grid")
    @classmethod
    def check_grid(cls, v):
        if not v:
            raise ValueError("grid needs at least one alpha")
        for alpha in v:
            if not 0.0 < alpha < 0.5:
                raise ValueError(f"alpha {alpha} must lie in (0, 0.5) so that beta = 1 - 2*alpha > 0")
        return v


class VerifyConfig(_Strict):
    seeds: int = Field(10, ge=1)
    sinkhorn_tol: float = Field(1e-6, gt=0.0)
    only: List[str] = []

    @field_validator("only", mode="before")
    @classmethod
    def split_only(cls, v):
        return [] if v is None else _as_list(v)


class RunConfig(_Strict):
    dataset_dir: str = "data/corpus"
    output_dir: str = "runs/default"
    params_path: Optional[str] = None
    seed: int = Field(0, ge=0, le=MAX_SEED)
    variant: Literal["speech_only", "bimodal_concat", "beats_xformer", "beats_otk", "beats"] = "beats"
    text_source: Literal["english", "bengali"] = "english"
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    augment: AugmentationConfig = Field(default_factory=AugmentationConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    optim: OptimizerConfig = Field(default_factory=OptimizerConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)

    @property
    def resolved_variant(self) -> str:
        if self.variant == "beats":
            return f"beats_{self.model.fusion.scheme}"
        return self.variant

    @model_validator(mode="after")
    def check_variant_scheme(self):
        if self.variant.startswith("beats_") and self.variant != f"beats_{self.model.fusion.scheme}":
            # An explicit variant wins over the fusion.scheme default.
            self.model.fusion.scheme = self.variant.split("_", 1)[1]
        return self


# --- VALIDATION LOGIC ---


def _format_errors(error: ValidationError, parsed: Optional[ParsedConfig]) -> List[str]:
    problems = []
    for item in error.errors():
        loc = " -> ".join(str(part) for part in item["loc"])
        line = parsed.line_for(item["loc"]) if parsed else None
        where = f" (line {line})" if line is not None else ""
        problems.append(f"Field '{loc}'{where}: {item['msg']}")
    return problems


def validate_config(config_dict: Dict[str, Any], parsed: Optional[ParsedConfig] = None) -> RunConfig:
    """
    Validates a nested configuration dictionary against the RunConfig model.
    Returns the model; raises ConfigError listing every failing field.
    """
    source = parsed.source if parsed else "<dict>"
    try:
        config = RunConfig(**config_dict)
    except ValidationError as e:
        problems = _format_errors(e, parsed)
        logging.critical(f"❌ Configuration Validation Failed ({source}):")
        for problem in problems:
            logging.critical(f"   - {problem}")
        raise ConfigError(problems)
    logging.info(f"✅ Configuration validated successfully ({source}).")
    return config


def load_run_config(path: Optional[str], overrides: Optional[Dict[Tuple[str, ...], Any]] = None) -> RunConfig:
    """
    Parses and validates a run config file. Overrides (from command-line
    flags) are applied on top of the file before validation. A missing
    path validates the defaults.
    """
    parsed = parse_config_file(path) if path else ParsedConfig(source="<defaults>")
    for key_path, value in (overrides or {}).items():
        if value is not None:
            parsed.set(key_path, value)

    config = validate_config(parsed.values, parsed)
    # One seed feeds every random stream unless a section pins its own.
    if "seed" not in parsed.values.get("generator", {}):
        config.generator.seed = config.seed
    return config
