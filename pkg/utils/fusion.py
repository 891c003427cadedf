import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from utils.config_validator import FusionConfig, ModelConfig
from utils.encoders import (
    EVAL,
    FeatureSequence,
    ForwardContext,
    Modality,
    Params,
    attention,
    init_attention,
    init_block,
    init_layer_norm,
    self_attention_block,
)
from utils.numcore import (
    ContractError,
    DimensionError,
    NumericalError,
    Tensor,
    _logsumexp_np,
    as_tensor,
    concat,
    layer_norm,
    logsumexp,
    reshape,
    tensor,
)

ORACLE_MAX_SIZE = 6

# Which feature sets get OTK-pooled for each wiring.
OTK_BRANCHES: Dict[str, Tuple[str, ...]] = {
    "cross_self": ("a2t", "t2a", "audio", "text"),
    "cross_only": ("a2t", "t2a"),
    "self_only": ("audio", "text"),
}


class SinkhornError(NumericalError):
    """Sinkhorn scaling produced a non-finite value."""

    def __init__(self, epsilon: float, detail: str = ""):
        self.epsilon = epsilon
        message = f"Sinkhorn scaling became non-finite at epsilon={epsilon:g}"
        super().__init__(f"{message}: {detail}" if detail else message)


class OracleSizeError(ValueError):
    """Permutation enumeration was asked for more than ORACLE_MAX_SIZE points."""


# --- DOMAIN TYPES ---


@dataclass
class FusedSequence:
    values: Tensor
    boundary: int
    audio_length: int
    text_length: int

    def __post_init__(self):
        expected = 1 + self.audio_length + self.text_length
        if self.values.shape[0] != expected:
            raise DimensionError(
                f"fused sequence has {self.values.shape[0]} rows, expected {expected}"
            )
        if self.boundary != 1 + self.audio_length:
            raise DimensionError(
                f"boundary {self.boundary} does not follow CLS + {self.audio_length} audio frames"
            )


@dataclass
class ReferenceSet:
    references: Tensor

    def __post_init__(self):
        if self.references.ndim != 2 or self.references.shape[0] < 1:
            raise DimensionError(f"references must be a non-empty p x d array, got {self.references.shape}")
        if not np.all(np.isfinite(self.references.data)):
            raise NumericalError("references contain non-finite values")

    @property
    def size(self) -> int:
        return self.references.shape[0]


@dataclass
class TransportPlan:
    plan: Tensor
    epsilon: float
    residual: float
    converged: bool
    iterations: int
    history: List[float] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return self.plan.data

    def transport_cost(self, cost) -> float:
        return float(np.sum(as_tensor(cost).data * self.plan.data))


# --- INITIALISATION ---


def init_references(rng: np.random.Generator, p: int, width: int) -> Tensor:
    return tensor(rng.normal(0.0, 1.0, size=(p, width)) / math.sqrt(width), requires_grad=True)


def init_cross_attention(rng: np.random.Generator, params: Params, prefix: str, width: int):
    init_attention(rng, params, f"{prefix}.attn", width)
    init_layer_norm(params, f"{prefix}.ln", width)


def init_fusion(cfg: ModelConfig, prefix: str = "fusion", seed: int = 0) -> Params:
    """Parameters of the fusion block for the configured scheme only."""
    rng = np.random.default_rng(seed)
    width = cfg.audio.width
    fusion = cfg.fusion
    params: Params = {}
    if fusion.scheme == "xformer":
        params[f"{prefix}.cls"] = tensor(rng.normal(0.0, 0.02, size=width), requires_grad=True)
        params[f"{prefix}.type.audio"] = tensor(rng.normal(0.0, 0.02, size=width), requires_grad=True)
        params[f"{prefix}.type.text"] = tensor(rng.normal(0.0, 0.02, size=width), requires_grad=True)
        for b in range(fusion.blocks):
            init_block(rng, params, f"{prefix}.block{b}", width, fusion.ff_width)
        return params

    branches = OTK_BRANCHES[fusion.otk_wiring]
    for branch in ("a2t", "t2a"):
        if branch in branches:
            init_cross_attention(rng, params, f"{prefix}.{branch}", width)
    for branch in branches:
        params[f"{prefix}.refs.{branch}"] = init_references(rng, fusion.references, width)
    return params


def fused_width(cfg: ModelConfig) -> int:
    """Width of the vector the fused head reads."""
    if cfg.fusion.scheme == "xformer":
        return cfg.audio.width
    return len(OTK_BRANCHES[cfg.fusion.otk_wiring]) * cfg.fusion.references * cfg.audio.width


# --- MULTIMODAL FUSION TRANSFORMER ---


def concat_with_cls(
    audio: FeatureSequence,
    text: FeatureSequence,
    cls: Tensor,
    type_audio: Optional[Tensor] = None,
    type_text: Optional[Tensor] = None,
) -> FusedSequence:
    """Builds [CLS, audio frames, text tokens], adding a modality-type embedding to each segment."""
    width = cls.shape[-1]
    if audio.width != width or text.width != width:
        raise DimensionError(
            f"cannot fuse widths audio={audio.width}, text={text.width} with CLS width {width}"
        )
    audio_rows = audio.values if type_audio is None else audio.values + type_audio
    text_rows = text.values if type_text is None else text.values + type_text
    values = concat([reshape(cls, (1, width)), audio_rows, text_rows], axis=0)
    return FusedSequence(
        values=values,
        boundary=1 + audio.length,
        audio_length=audio.length,
        text_length=text.length,
    )


def fusion_transformer(
    f: FusedSequence,
    params: Params,
    cfg: FusionConfig,
    prefix: str = "fusion",
    ctx: ForwardContext = EVAL,
) -> Tuple[Tensor, List[List[np.ndarray]]]:
    """Self-attention blocks over the fused sequence; returns the CLS output and the attention maps."""
    x = f.values
    maps = []
    for b in range(cfg.blocks):
        x, weights = self_attention_block(x, params, f"{prefix}.block{b}", cfg.heads, ctx)
        maps.append(weights)
    return x[0], maps


def cross_attention(
    queries: FeatureSequence,
    keys_values: FeatureSequence,
    params: Params,
    prefix: str,
    n_heads: int,
    ctx: ForwardContext = EVAL,
) -> Tuple[FeatureSequence, List[np.ndarray]]:
    """Queries from one modality attend over the other's features, then residual + layer norm."""
    if queries.width != keys_values.width:
        raise DimensionError(
            f"cross attention width mismatch: queries {queries.width}, keys/values {keys_values.width}"
        )
    attended, weights = attention(queries.values, keys_values.values, params, f"{prefix}.attn", n_heads)
    out = layer_norm(
        queries.values + attended,
        params[f"{prefix}.ln.gain"],
        params[f"{prefix}.ln.bias"],
        ctx.ln_eps,
    )
    return FeatureSequence(values=out, modality=Modality.FUSED), weights


# --- OPTIMAL TRANSPORT ---


def _check_sinkhorn_args(cost: Tensor, epsilon: float, tol: float, max_iter: int):
    if cost.ndim != 2 or cost.size == 0:
        raise DimensionError(f"sinkhorn needs a non-empty n x p cost, got shape {cost.shape}")
    if epsilon <= 0 or tol <= 0 or max_iter < 1:
        raise ContractError(
            f"sinkhorn needs epsilon > 0, tol > 0, max_iter >= 1 (got {epsilon}, {tol}, {max_iter})"
        )
    if not np.all(np.isfinite(cost.data)):
        raise NumericalError("sinkhorn cost contains non-finite values")


def _marginal_residual(log_plan: np.ndarray, n: int, p: int) -> float:
    plan = np.exp(log_plan)
    rows = np.max(np.abs(plan.sum(axis=1) - 1.0 / n))
    cols = np.max(np.abs(plan.sum(axis=0) - 1.0 / p))
    return float(max(rows, cols))


def sinkhorn(cost, epsilon: float, tol: float = 1e-6, max_iter: int = 500) -> TransportPlan:
    """
    Entropic OT between uniform marginals, solved by log-domain Sinkhorn.

    Each sweep updates the row potential, then the column potential; the
    residual is the worst row or column marginal violation after the sweep.
    When the cost carries gradients every executed sweep is recorded so the
    plan can be differentiated by unrolling.
    """
    cost = as_tensor(cost)
    _check_sinkhorn_args(cost, epsilon, tol, max_iter)
    n, p = cost.shape
    log_a, log_b = -math.log(n), -math.log(p)
    differentiable = cost.requires_grad

    history: List[float] = []
    try:
        if differentiable:
            log_k = cost * (-1.0 / epsilon)
            g = tensor(np.zeros((1, p)))
            for _ in range(max_iter):
                f = reshape(log_a - logsumexp(log_k + g, axis=1), (n, 1))
                g = reshape(log_b - logsumexp(log_k + f, axis=0), (1, p))
                history.append(_marginal_residual(log_k.data + f.data + g.data, n, p))
                if history[-1] < tol:
                    break
            plan = (log_k + f + g).exp()
        else:
            g = np.zeros((1, p))
            with np.errstate(over="raise", invalid="raise"):
                log_k = cost.data * (-1.0 / epsilon)
                for _ in range(max_iter):
                    f = (log_a - _logsumexp_np(log_k + g, 1)).reshape(n, 1)
                    g = (log_b - _logsumexp_np(log_k + f, 0)).reshape(1, p)
                    history.append(_marginal_residual(log_k + f + g, n, p))
                    if history[-1] < tol:
                        break
                plan = tensor(np.exp(log_k + f + g))
    except (NumericalError, FloatingPointError, OverflowError) as e:
        raise SinkhornError(epsilon, str(e))

    residual = history[-1]
    if not math.isfinite(residual):
        raise SinkhornError(epsilon, "marginal residual is not finite")
    converged = residual < tol
    if not converged:
        logging.warning(
            f"Sinkhorn did not converge: residual {residual:.3e} >= tol {tol:g} after {max_iter} sweeps (epsilon={epsilon:g})"
        )
    return TransportPlan(
        plan=plan,
        epsilon=epsilon,
        residual=residual,
        converged=converged,
        iterations=len(history),
        history=history,
    )


def exact_ot_oracle(cost) -> Tuple[np.ndarray, float]:
    """
    Exact OT between uniform marginals on a square cost by enumerating every
    permutation. The first permutation in lexicographic order wins ties.
    """
    cost = np.asarray(as_tensor(cost).data)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"exact_ot_oracle needs a square cost, got shape {cost.shape}")
    n = cost.shape[0]
    if n > ORACLE_MAX_SIZE:
        raise OracleSizeError(f"refusing to enumerate {n}! permutations (n > {ORACLE_MAX_SIZE})")

    rows = np.arange(n)
    best_perm, best_cost = None, math.inf
    for perm in itertools.permutations(range(n)):
        value = float(cost[rows, list(perm)].sum()) / n
        if value < best_cost:
            best_perm, best_cost = perm, value

    plan = np.zeros((n, n))
    plan[rows, list(best_perm)] = 1.0 / n
    return plan, best_cost


def similarity_cost(features: Tensor, references: Tensor) -> Tensor:
    """Negative scaled dot-product similarity, -(x . z) / sqrt(d)."""
    width = features.shape[1]
    return (features @ references.T) * (-1.0 / math.sqrt(width))


def otk_pool(
    features: Union[FeatureSequence, Tensor],
    refs: Union[ReferenceSet, Tensor],
    epsilon: float,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> Tensor:
    """
    Pools a feature set onto p learned references: row j of the result is
    p * sum_i plan[i, j] * feature_i, so a uniform plan gives the feature
    mean in every slot. Returns the flattened p * d embedding.
    """
    x = features.values if isinstance(features, FeatureSequence) else as_tensor(features)
    z = refs.references if isinstance(refs, ReferenceSet) else as_tensor(refs)
    if x.ndim != 2 or z.ndim != 2 or x.shape[1] != z.shape[1]:
        raise DimensionError(f"otk_pool width mismatch: features {x.shape}, references {z.shape}")
    p = z.shape[0]
    transport = sinkhorn(similarity_cost(x, z), epsilon, tol, max_iter)
    pooled = (transport.plan.T @ x) * float(p)
    return reshape(pooled, (-1,))


def otk_fusion(
    audio: FeatureSequence,
    text: FeatureSequence,
    params: Params,
    cfg: FusionConfig,
    prefix: str = "fusion",
    ctx: ForwardContext = EVAL,
) -> Tuple[Tensor, List[List[np.ndarray]]]:
    """
    Cross-attention in both directions (audio queries text, text queries
    audio) plus the self-attended encoder outputs, each OTK-pooled onto its
    own reference set and concatenated. `cfg.otk_wiring` picks the branches.
    """
    branches = OTK_BRANCHES[cfg.otk_wiring]
    sources: Dict[str, FeatureSequence] = {"audio": audio, "text": text}
    maps = []
    if "a2t" in branches:
        sources["a2t"], weights = cross_attention(audio, text, params, f"{prefix}.a2t", cfg.heads, ctx)
        maps.append(weights)
    if "t2a" in branches:
        sources["t2a"], weights = cross_attention(text, audio, params, f"{prefix}.t2a", cfg.heads, ctx)
        maps.append(weights)

    pooled = [
        otk_pool(sources[branch], params[f"{prefix}.refs.{branch}"], cfg.epsilon, cfg.tol, cfg.max_iter)
        for branch in branches
    ]
    return concat(pooled, axis=0), maps
