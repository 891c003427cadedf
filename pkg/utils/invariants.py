import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from utils.config_validator import EncoderConfig, FusionConfig, GeneratorConfig, LossWeights, ModelConfig
from utils.data import VOCABULARY, Sample, generate_dataset, load_manifest, samples_from_corpus, synth_utterance
from utils.encoders import Language, TokenSequence, Waveform, encode_audio, encode_text, init_audio_encoder, init_text_encoder
from utils.fusion import exact_ot_oracle, otk_pool, sinkhorn
from utils.model import ModelVariant, SpeechAct, forward, init_params, joint_loss
from utils.numcore import (
    conv1d,
    cross_entropy,
    gelu,
    grad_check,
    layer_norm,
    logsumexp,
    softmax_rows,
    tensor,
)
from utils.prosody import oracle_accuracies
from utils.seeding import derive_seed
from utils.wav_io import read_wav, write_wav

GRAD_TOLERANCE = 1e-4
SINKHORN_GRAD_TOLERANCE = 1e-3
CONTRACT_TOLERANCE = 1e-6
MONOTONE_SLACK = 1e-12
PERMUTATION_TOLERANCE = 1e-9
ORACLE_RELATIVE_GAP = 0.01


@dataclass
class VerifyContext:
    seeds: int = 10
    sinkhorn_tol: float = 1e-6
    base_seed: int = 0
    workdir: Optional[str] = None

    def seed_list(self, label: str) -> List[int]:
        return [derive_seed(self.base_seed, label, i) for i in range(self.seeds)]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seed: Optional[int] = None
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" (seed {self.seed})" if self.seed is not None else ""
        return f"[{status}] {self.name}{where}: {self.detail} [{self.seconds:.2f}s]"


class CheckFailure(AssertionError):
    def __init__(self, detail: str, seed: Optional[int] = None):
        self.seed = seed
        super().__init__(detail)


CHECKS: Dict[str, Callable[[VerifyContext], str]] = {}


def register(name: str):
    def decorator(fn: Callable[[VerifyContext], str]):
        if name in CHECKS:
            raise ValueError(f"check '{name}' registered twice")
        CHECKS[name] = fn
        return fn

    return decorator


def run_checks(ctx: VerifyContext, only: Sequence[str] = ()) -> List[CheckResult]:
    """Runs the registered checks (or the `only` subset) in registration order."""
    unknown = [name for name in only if name not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)} (known: {', '.join(CHECKS)})")
    results = []
    for name, fn in CHECKS.items():
        if only and name not in only:
            continue
        started = time.perf_counter()
        try:
            result = CheckResult(name=name, passed=True, detail=fn(ctx))
        except CheckFailure as e:
            result = CheckResult(name=name, passed=False, detail=str(e), seed=e.seed)
        except Exception as e:
            logging.error(f"[Verify] {name} raised: {e}", exc_info=True)
            result = CheckResult(name=name, passed=False, detail=f"{type(e).__name__}: {e}")
        result.seconds = time.perf_counter() - started
        (logging.info if result.passed else logging.error)(f"[Verify] {result.line()}")
        results.append(result)
    return results


def _require(condition: bool, detail: str, seed: Optional[int] = None):
    if not condition:
        raise CheckFailure(detail, seed)


# --- SHARED FIXTURES ---


def tiny_model_config(scheme: str = "xformer", otk_tol: float = 1e-12) -> ModelConfig:
    encoder = dict(width=8, blocks=1, heads=2, ff_width=8, conv_kernels=[4, 3], conv_strides=[2, 2], frame_pool=2, dropout=0.0)
    return ModelConfig(
        audio=EncoderConfig(**encoder),
        text=EncoderConfig(**encoder, vocab_size=len(VOCABULARY)),
        fusion=FusionConfig(
            scheme=scheme, heads=2, ff_width=8, references=3, epsilon=0.5, tol=otk_tol, max_iter=300
        ),
        head_width=8,
    )


def random_sample(seed: int, length: int = 40, label: int = 0) -> Sample:
    rng = np.random.default_rng(seed)
    bengali = VOCABULARY.encode(["bn_01", "bn_02", "bn_03", "bn_04", "bn_05"])
    english = VOCABULARY.encode(["please", "open", "the", "door"])
    return Sample(
        record_id=f"random_{seed}",
        waveform=Waveform(samples=rng.uniform(-0.9, 0.9, size=length), sample_rate=8000),
        bengali=TokenSequence(bengali, Language.BENGALI),
        english=TokenSequence(english, Language.ENGLISH),
        label=label,
    )


def params_grad_check(loss_fn, params, names: Sequence[str], max_elements: int, seed: int) -> float:
    """grad_check over named entries of a parameter dictionary."""

    def f(*values):
        local = dict(params)
        local.update(zip(names, values))
        return loss_fn(local)

    return grad_check(f, [params[n] for n in names], h=1e-4, max_elements=max_elements, seed=seed)


# --- CHECKS ---


@register("numcore.grad_check")
def check_numcore_gradients(ctx: VerifyContext) -> str:
    worst = 0.0
    for seed in ctx.seed_list("numcore"):
        rng = np.random.default_rng(seed)
        r = lambda *shape: rng.normal(size=shape)
        cases = {
            "matmul": (lambda a, b, w=r(3, 2): ((a @ b) * w).sum(), [r(3, 4), r(4, 2)]),
            "softmax_rows": (lambda m, w=r(3, 5): (softmax_rows(m) * w).sum(), [r(3, 5)]),
            "gelu.exact": (lambda x, w=r(6): (gelu(x) * w).sum(), [r(6)]),
            "gelu.tanh": (lambda x, w=r(6): (gelu(x, approximate=True) * w).sum(), [r(6)]),
            "layer_norm": (
                lambda x, g, b, w=r(3, 4): (layer_norm(x, g, b) * w).sum(),
                [r(3, 4), r(4), r(4)],
            ),
            "cross_entropy": (lambda z, y=int(rng.integers(3)): cross_entropy(z, y), [r(3)]),
            "conv1d": (
                lambda x, k, b, w=r(4, 3): (conv1d(x, k, b, 2) * w).sum(),
                [r(10, 2), r(3, 2, 3), r(3)],
            ),
            "logsumexp": (lambda x, w=r(4): (logsumexp(x, axis=1) * w).sum(), [r(4, 3)]),
            "divide": (lambda a, b: (a / (b * b + 1.0)).sum(), [r(5), r(5)]),
        }
        for op, (fn, inputs) in cases.items():
            error = grad_check(fn, [tensor(x) for x in inputs], h=1e-4, seed=seed)
            _require(error < GRAD_TOLERANCE, f"{op}: relative error {error:.3e}", seed)
            worst = max(worst, error)

        big = rng.normal(size=(4, 6)) * 1e4
        sums = softmax_rows(big).data.sum(axis=1)
        _require(np.all(np.abs(sums - 1.0) < 1e-12), f"softmax rows of 1e4-scale inputs sum to {sums}", seed)
    return f"worst relative error {worst:.2e}"


@register("encoders.grad_check")
def check_encoder_gradients(ctx: VerifyContext) -> str:
    model = tiny_model_config()
    worst = 0.0
    for seed in ctx.seed_list("encoders"):
        sample = random_sample(seed)
        weights = np.random.default_rng(seed).normal(size=model.audio.width)
        audio_params = init_audio_encoder(model.audio, seed=seed)
        text_params = init_text_encoder(model.text, seed=seed)

        audio_loss = lambda p: (encode_audio(sample.waveform, p, model.audio).pooled * weights).sum()
        text_loss = lambda p: (encode_text(sample.english, p, model.text).pooled * weights).sum()
        for name, params, loss_fn in (("audio", audio_params, audio_loss), ("text", text_params, text_loss)):
            error = params_grad_check(loss_fn, params, sorted(params), 2, seed)
            _require(error < GRAD_TOLERANCE, f"{name} encoder: relative error {error:.3e}", seed)
            worst = max(worst, error)
    return f"worst relative error {worst:.2e}"


@register("sinkhorn.grad_check")
def check_sinkhorn_gradients(ctx: VerifyContext) -> str:
    worst = 0.0
    for seed in ctx.seed_list("sinkhorn.grad"):
        rng = np.random.default_rng(seed)
        weights = rng.normal(size=(4, 3))
        fn = lambda c: (sinkhorn(c, 0.5, 1e-12, 500).plan * weights).sum()
        error = grad_check(fn, [tensor(rng.uniform(0.0, 1.0, size=(4, 3)))], h=1e-4, seed=seed)
        _require(error < SINKHORN_GRAD_TOLERANCE, f"relative error {error:.3e}", seed)
        worst = max(worst, error)
    return f"worst relative error {worst:.2e}"


@register("model.grad_check")
def check_model_gradients(ctx: VerifyContext) -> str:
    worst = {}
    for scheme, tolerance in (("xformer", GRAD_TOLERANCE), ("otk", SINKHORN_GRAD_TOLERANCE)):
        for seed in ctx.seed_list(f"model.{scheme}"):
            variant = ModelVariant(name=f"beats_{scheme}", model=tiny_model_config(scheme), seed=seed)
            params = init_params(variant)
            sample = random_sample(seed, label=int(seed % 3))
            loss_fn = lambda p: forward(variant, p, sample, LossWeights()).total_loss
            error = params_grad_check(loss_fn, params, sorted(params), 1, seed)
            _require(error < tolerance, f"beats_{scheme}: relative error {error:.3e}", seed)
            worst[scheme] = max(worst.get(scheme, 0.0), error)
    return ", ".join(f"{k} {v:.2e}" for k, v in worst.items())


@register("sinkhorn.contract")
def check_sinkhorn_contract(ctx: VerifyContext) -> str:
    rng = np.random.default_rng(derive_seed(ctx.base_seed, "sinkhorn.contract"))
    worst, slowest = 0.0, 0
    for trial in range(100):
        n, p = int(rng.integers(1, 17)), int(rng.integers(1, 9))
        cost = rng.uniform(0.0, 1.0, size=(n, p))
        plan = sinkhorn(cost, 0.1, ctx.sinkhorn_tol, 500)
        _require(
            plan.residual < CONTRACT_TOLERANCE,
            f"{n}x{p} cost (trial {trial}): marginal residual {plan.residual:.3e} after {plan.iterations} sweeps",
            trial,
        )
        steps = np.diff(plan.history)
        _require(
            np.all(steps <= MONOTONE_SLACK),
            f"{n}x{p} cost (trial {trial}): residual increased by {steps.max():.3e}",
            trial,
        )
        _require(np.all(plan.values >= 0.0), f"trial {trial}: negative plan entry", trial)
        _require(abs(plan.values.sum() - 1.0) < 1e-9, f"trial {trial}: mass {plan.values.sum()!r}", trial)
        worst = max(worst, plan.residual)
        slowest = max(slowest, plan.iterations)
    return f"worst residual {worst:.2e}, at most {slowest} sweeps"


@register("sinkhorn.oracle")
def check_sinkhorn_oracle(ctx: VerifyContext) -> str:
    worst = 0.0
    for n in range(2, 6):
        rng = np.random.default_rng(derive_seed(ctx.base_seed, "sinkhorn.oracle", n))
        for trial in range(20):
            cost = rng.uniform(1.0, 2.0, size=(n, n))
            _, optimum = exact_ot_oracle(cost)
            plan = sinkhorn(cost, 1e-3, 1e-9, 20000)
            entropic = plan.transport_cost(cost)
            gap = (entropic - optimum) / optimum
            _require(
                -1e-6 <= gap <= ORACLE_RELATIVE_GAP,
                f"n={n} trial {trial}: entropic cost {entropic:.6f} vs optimum {optimum:.6f}",
                trial,
            )
            worst = max(worst, gap)
    return f"worst relative gap {worst:.2e}"


@register("otk.permutation_invariance")
def check_otk_permutation(ctx: VerifyContext) -> str:
    worst = 0.0
    for seed in ctx.seed_list("otk")[:3]:
        rng = np.random.default_rng(seed)
        features = rng.normal(size=(6, 8))
        refs = rng.normal(size=(4, 8)) / math.sqrt(8)
        base = otk_pool(features, refs, 0.5, 1e-13, 2000).data
        for _ in range(50):
            shuffled = features[rng.permutation(6)]
            diff = float(np.max(np.abs(otk_pool(shuffled, refs, 0.5, 1e-13, 2000).data - base)))
            _require(diff < PERMUTATION_TOLERANCE, f"permuted output differs by {diff:.3e}", seed)
            worst = max(worst, diff)

        single = rng.normal(size=(1, 8))
        pooled = otk_pool(single, rng.normal(size=(1, 8)), 0.1).data
        _require(np.allclose(pooled, single[0], rtol=0.0, atol=1e-12), "n=p=1 pooling is not the identity", seed)
    return f"worst difference {worst:.2e}"


@register("joint_loss.properties")
def check_joint_loss(ctx: VerifyContext) -> str:
    w = LossWeights(alpha=0.15, beta=0.7, gamma=0.15)
    _require(abs(joint_loss(w, 1.0, 2.0, 3.0) - 2.0) < 1e-12, "0.15/0.7/0.15 on (1, 2, 3) is not 2.0")
    _require(joint_loss(w, 0.0, 0.0, 0.0) == 0.0, "joint loss of zero losses is not zero")
    rng = np.random.default_rng(derive_seed(ctx.base_seed, "joint_loss"))
    for _ in range(20):
        losses = rng.uniform(0.0, 5.0, size=3)
        c = float(rng.uniform(0.1, 10.0))
        scaled = joint_loss(w, *(losses * c))
        _require(abs(scaled - c * joint_loss(w, *losses)) < 1e-9, "joint loss is not homogeneous")
    betas = [LossWeights.for_ablation(a).beta for a in (0.1, 0.15, 0.20, 0.25, 0.30)]
    _require(np.allclose(betas, [0.8, 0.7, 0.6, 0.5, 0.4], atol=1e-12), f"ablation betas {betas}")
    return "linear, zero at zero, ablation betas 0.8..0.4"


@register("wav.round_trip")
def check_wav_round_trip(ctx: VerifyContext) -> str:
    with tempfile.TemporaryDirectory(dir=ctx.workdir) as tmp:
        sine = Waveform(samples=0.8 * np.sin(2 * np.pi * 440.0 * np.arange(4410) / 44100), sample_rate=44100)
        path = os.path.join(tmp, "sine.wav")
        write_wav(sine, path)
        back = read_wav(path)
        error = float(np.max(np.abs(back.samples - sine.samples)))
        _require(error <= 1.0 / 32768, f"sine round trip error {error:.3e}")
        _require(back.sample_rate == 44100, f"sample rate {back.sample_rate}")
        with open(path, "rb") as f:
            byte_rate = int.from_bytes(f.read()[28:32], "little")
        _require(byte_rate == 88200, f"byte rate field {byte_rate}")
    return f"max error {error:.2e}"


@register("data.fidelity")
def check_data_fidelity(ctx: VerifyContext) -> str:
    cfg = GeneratorConfig(seed=ctx.base_seed)
    with tempfile.TemporaryDirectory(dir=ctx.workdir) as tmp:
        first = generate_dataset(cfg, os.path.join(tmp, "a"))
        second = generate_dataset(cfg, os.path.join(tmp, "b"))
        _require(first.class_counts == {"request": 25, "question": 35, "order": 25}, f"counts {first.class_counts}")
        _require(first.checksum == second.checksum, "regeneration with the same seed changed the bytes")
        lengths = {len(r.bengali) for r in first.records}
        _require(lengths <= {5, 6, 7}, f"bengali lengths {sorted(lengths)}")
        reloaded = load_manifest(os.path.join(tmp, "a"))
        _require(reloaded.records == first.records, "manifest does not reload to the same records")
        for item in samples_from_corpus(cfg)[:5]:
            stored = read_wav(os.path.join(tmp, "a", "wavs", f"{item.record_id}.wav"))
            _require(stored.sample_rate == 44100, f"{item.record_id}: sample rate {stored.sample_rate}")
            error = float(np.max(np.abs(stored.samples - item.waveform.samples)))
            _require(error <= 1.0 / 32768, f"{item.record_id}: stored audio off by {error:.3e}")
    return f"{first.summary()}, sha256 {first.checksum[:12]}"


@register("data.separability")
def check_separability(ctx: VerifyContext) -> str:
    cfg = GeneratorConfig(seed=ctx.base_seed, marker_noise=0.0, contour_noise=0.0, snr_db=None)
    accuracy = oracle_accuracies(samples_from_corpus(cfg))
    _require(accuracy["bimodal"] == 1.0, f"bimodal oracle accuracy {accuracy['bimodal']:.4f} on a noiseless corpus")
    return ", ".join(f"{k} {v:.3f}" for k, v in accuracy.items())


@register("data.fusion_helps")
def check_fusion_helps(ctx: VerifyContext) -> str:
    cfg = GeneratorConfig(seed=ctx.base_seed, marker_noise=0.2, contour_noise=0.2)
    samples = []
    for i in range(1000):
        act = SpeechAct(i % 3)
        u = synth_utterance(act, cfg, derive_seed(ctx.base_seed, "fusion_helps", i))
        samples.append(Sample(record_id=str(i), waveform=u.waveform, bengali=u.bengali, english=u.english, label=int(act)))
    accuracy = oracle_accuracies(samples)
    _require(
        accuracy["audio"] < accuracy["bimodal"] and accuracy["text"] < accuracy["bimodal"],
        f"unimodal oracles do not trail the bimodal one: {accuracy}",
    )
    return ", ".join(f"{k} {v:.3f}" for k, v in accuracy.items())
