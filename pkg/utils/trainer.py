import asyncio
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from utils.augment import expand_with_augmentations
from utils.config_validator import LossWeights, OptimizerConfig, RunConfig
from utils.data import VOCABULARY, Sample, samples_from_corpus
from utils.encoders import Params
from utils.metrics import PerClassMetrics
from utils.model import CLASS_NAMES, VARIANTS, ModelVariant, forward, init_params
from utils.numcore import NumericalError, backward
from utils.seeding import derive_seed


class TrainingDivergedError(RuntimeError):
    """The loss or a gradient became non-finite."""

    def __init__(self, epoch: int, batch: int, record_ids: Sequence[str], detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        self.record_ids = list(record_ids)
        message = f"training diverged at epoch {epoch}, batch {batch} (records {', '.join(self.record_ids)})"
        super().__init__(f"{message}: {detail}" if detail else message)


class Adam:
    """Adaptive-moment gradient descent over a parameter dictionary."""

    def __init__(self, params: Params, cfg: OptimizerConfig):
        self.params = params
        self.lr = cfg.lr
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.eps = cfg.eps
        self.steps = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros(p.shape) for name, p in params.items()}
        self.v: Dict[str, np.ndarray] = {name: np.zeros(p.shape) for name, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.steps += 1
        bias1 = 1.0 - self.beta1**self.steps
        bias2 = 1.0 - self.beta2**self.steps
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient for {name}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * p.grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * p.grad**2
            if self.lr == 0.0:
                continue
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.assign(p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


@dataclass
class TrainResult:
    params: Params
    loss_curve: List[float] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)


@dataclass
class EvaluationResult:
    metrics: PerClassMetrics
    predictions: List[int]
    labels: List[int]
    record_ids: List[str]

    @property
    def confusion(self) -> np.ndarray:
        return self.metrics.confusion


def train(
    variant: ModelVariant,
    samples: Sequence[Sample],
    weights: LossWeights,
    optim: OptimizerConfig,
    seed: int,
    params: Optional[Params] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """
    Mini-batch Adam on the variant's total loss. Each batch accumulates
    per-record gradients of loss / batch_size before one optimizer step.
    The record order is reshuffled every epoch from a stream derived from
    the seed, and dropout draws from another.
    """
    if not samples:
        raise ValueError("train needs a non-empty training split")
    params = init_params(variant) if params is None else params
    optimizer = Adam(params, optim)
    shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(seed, "dropout"))
    ctx = variant.context(training=True, rng=dropout_rng)
    result = TrainResult(params=params)

    for epoch in range(1, optim.epochs + 1):
        order = shuffle_rng.permutation(len(samples))
        epoch_loss = 0.0
        for batch, start in enumerate(range(0, len(order), optim.batch_size), start=1):
            batch_samples = [samples[i] for i in order[start : start + optim.batch_size]]
            ids = [s.record_id for s in batch_samples]
            optimizer.zero_grad()
            try:
                batch_loss = 0.0
                for sample in batch_samples:
                    out = forward(variant, params, sample, weights, ctx)
                    loss = out.total_loss * (1.0 / len(batch_samples))
                    backward(loss)
                    batch_loss += loss.item()
                if not math.isfinite(batch_loss):
                    raise NumericalError(f"batch loss is {batch_loss}")
                optimizer.step()
            except NumericalError as e:
                logging.critical(f"[Train] {variant.name}: non-finite values at epoch {epoch}, batch {batch}: {e}")
                raise TrainingDivergedError(epoch, batch, ids, str(e))
            result.step_losses.append(batch_loss)
            epoch_loss += batch_loss * len(batch_samples)

        epoch_loss /= len(samples)
        result.loss_curve.append(epoch_loss)
        logging.info(f"[Train] {variant.name} epoch {epoch}/{optim.epochs}: loss {epoch_loss:.6f}")
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    return result


def evaluate(variant: ModelVariant, params: Params, samples: Sequence[Sample]) -> EvaluationResult:
    """Argmax over the prediction head; the lowest class index wins ties."""
    if not samples:
        raise ValueError("evaluate needs a non-empty split")
    predictions = [forward(variant, params, s, compute_loss=False).prediction for s in samples]
    labels = [int(s.label) for s in samples]
    return EvaluationResult(
        metrics=PerClassMetrics.from_predictions(labels, predictions),
        predictions=predictions,
        labels=labels,
        record_ids=[s.record_id for s in samples],
    )


# --- ABLATION ---


@dataclass
class AblationCell:
    scheme: str
    alpha: float
    beta: float
    f1: Dict[str, float]
    macro_f1: float


@dataclass
class AblationTable:
    cells: List[AblationCell]

    def best_alpha(self, scheme: str) -> float:
        """First alpha in grid order with the highest macro F1."""
        candidates = [c for c in self.cells if c.scheme == scheme]
        if not candidates:
            raise KeyError(f"no cells for scheme '{scheme}'")
        best = candidates[0]
        for cell in candidates[1:]:
            if cell.macro_f1 > best.macro_f1:
                best = cell
        return best.alpha

    @property
    def schemes(self) -> List[str]:
        seen = []
        for cell in self.cells:
            if cell.scheme not in seen:
                seen.append(cell.scheme)
        return seen


def run_ablation_cell(
    cfg: RunConfig,
    scheme: str,
    alpha: float,
    train_samples: Sequence[Sample],
    eval_samples: Sequence[Sample],
    vocab_size: int,
) -> AblationCell:
    weights = LossWeights.for_ablation(alpha)
    variant = ModelVariant.from_run_config(cfg, vocab_size=vocab_size, name=f"beats_{scheme}")
    trained = train(variant, train_samples, weights, cfg.optim, cfg.seed)
    metrics = evaluate(variant, trained.params, eval_samples).metrics
    logging.info(f"[Ablation] {scheme} alpha={alpha:g}: macro F1 {metrics.macro_f1:.4f}")
    return AblationCell(
        scheme=scheme,
        alpha=alpha,
        beta=weights.beta,
        f1={name: metrics.f1[name] for name in CLASS_NAMES},
        macro_f1=metrics.macro_f1,
    )


async def ablation_sweep(
    cfg: RunConfig,
    train_samples: Sequence[Sample],
    eval_samples: Sequence[Sample],
    vocab_size: int,
    grid: Optional[Sequence[float]] = None,
    schemes: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> AblationTable:
    """
    Trains and evaluates every (scheme, alpha) cell with the run seed.
    Cells run in worker threads, at most `threads` at once; the table keeps
    grid order whatever the completion order.
    """
    grid = list(cfg.ablation.grid if grid is None else grid)
    schemes = list(cfg.ablation.schemes if schemes is None else schemes)
    for alpha in grid:
        if not 0.0 < alpha < 0.5:
            raise ValueError(f"ablation alpha must lie in (0, 0.5), got {alpha}")

    semaphore = asyncio.Semaphore(max(1, threads))

    async def run(scheme: str, alpha: float) -> AblationCell:
        async with semaphore:
            return await asyncio.to_thread(
                run_ablation_cell, cfg, scheme, alpha, train_samples, eval_samples, vocab_size
            )

    cells = await asyncio.gather(*(run(scheme, alpha) for scheme in schemes for alpha in grid))
    table = AblationTable(cells=list(cells))
    for scheme in schemes:
        logging.info(f"[Ablation] best alpha for {scheme}: {table.best_alpha(scheme):g}")
    return table


# --- FUSION ORDERING ---

ORDERING_MARGIN = 0.05


@dataclass
class OrderingRun:
    seed: int
    variant: str
    macro_f1: float


@dataclass
class OrderingReport:
    runs: List[OrderingRun]
    margin: float = ORDERING_MARGIN

    def mean_f1(self, variant: str) -> float:
        scores = [r.macro_f1 for r in self.runs if r.variant == variant]
        if not scores:
            raise KeyError(f"no runs for variant '{variant}'")
        return float(np.mean(scores))

    @property
    def seeds(self) -> List[int]:
        return sorted({r.seed for r in self.runs})

    def failures(self) -> List[str]:
        """Seed-averaged macro F1: each BeAts variant clears speech_only by the margin, concat does not trail it."""
        speech = self.mean_f1("speech_only")
        problems = []
        for name in ("beats_xformer", "beats_otk"):
            gain = self.mean_f1(name) - speech
            if gain < self.margin:
                problems.append(f"{name} beats speech_only by {gain:+.4f} (< {self.margin:g})")
        if self.mean_f1("bimodal_concat") < speech:
            problems.append(f"bimodal_concat {self.mean_f1('bimodal_concat'):.4f} trails speech_only {speech:.4f}")
        return problems

    @property
    def holds(self) -> bool:
        return not self.failures()


def held_out(samples: Sequence[Sample]) -> List[Sample]:
    """The test split, else val, else train."""
    for split in ("test", "val", "train"):
        chosen = [s for s in samples if s.split == split]
        if chosen:
            return chosen
    return []


def fusion_ordering(cfg: RunConfig, seeds: Sequence[int], variants: Sequence[str] = VARIANTS) -> OrderingReport:
    """
    Regenerates the corpus for every seed, trains each variant on the
    augmented training split and scores it on the held-out records.
    """
    if not seeds:
        raise ValueError("fusion_ordering needs at least one seed")
    runs = []
    for seed in seeds:
        run_cfg = cfg.model_copy(update={"seed": seed, "generator": cfg.generator.model_copy(update={"seed": seed})})
        corpus = samples_from_corpus(run_cfg.generator)
        train_set = expand_with_augmentations([s for s in corpus if s.split == "train"], cfg.augment, seed)
        eval_set = held_out(corpus)
        for name in variants:
            variant = ModelVariant.from_run_config(run_cfg, vocab_size=len(VOCABULARY), name=name)
            trained = train(variant, train_set, cfg.loss, cfg.optim, seed)
            macro = evaluate(variant, trained.params, eval_set).metrics.macro_f1
            logging.info(f"[Ordering] seed {seed} {name}: macro F1 {macro:.4f}")
            runs.append(OrderingRun(seed=seed, variant=name, macro_f1=macro))
    return OrderingReport(runs=runs)
