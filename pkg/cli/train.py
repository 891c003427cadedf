import argparse
import logging
import os
from typing import Dict, Tuple

from cli.common import add_run_arguments, load_config, load_splits, prepare_output_dir
from utils.augment import expand_with_augmentations
from utils.config_validator import RunConfig
from utils.metrics import PerClassMetrics
from utils.model import VARIANTS, ModelVariant, init_params, load_params, save_params
from utils.reports import (
    write_confusion_tsv,
    write_loss_curve,
    write_metrics_tsv,
    write_ordering_tsv,
    write_table1_tsv,
)
from utils.trainer import evaluate, fusion_ordering, train


def train_and_evaluate(cfg: RunConfig, variant_name: str, out_dir: str) -> Tuple[ModelVariant, PerClassMetrics]:
    """Trains one variant on the augmented training split and scores it on the held-out split."""
    manifest, train_samples, eval_samples = load_splits(cfg)
    variant = ModelVariant.from_run_config(cfg, vocab_size=len(manifest.vocabulary), name=variant_name)
    train_set = expand_with_augmentations(train_samples, cfg.augment, cfg.seed)
    result = train(variant, train_set, cfg.loss, cfg.optim, cfg.seed)
    evaluation = evaluate(variant, result.params, eval_samples)

    os.makedirs(out_dir, exist_ok=True)
    save_params(result.params, cfg.params_path or os.path.join(out_dir, f"params_{variant.name}.npz"))
    write_loss_curve(os.path.join(out_dir, f"loss_{variant.name}.tsv"), result.loss_curve)
    write_confusion_tsv(os.path.join(out_dir, f"confusion_{variant.name}.tsv"), evaluation.metrics)
    return variant, evaluation.metrics


class TrainCommand:
    """Trains the configured variant and reports per-class metrics."""

    name = "train"
    help = "Train the configured variant, save its parameters and write metrics.tsv"

    def __init__(self, app):
        self.app = app
        self._ = app._

    def configure(self, parser: argparse.ArgumentParser):
        add_run_arguments(parser)

    def run(self, args: argparse.Namespace) -> int:
        cfg = load_config(args)
        out_dir = cfg.output_dir
        variant, metrics = train_and_evaluate(cfg, cfg.resolved_variant, out_dir)
        write_metrics_tsv(os.path.join(out_dir, "metrics.tsv"), {variant.name: metrics})
        print(self._("{variant}: macro F1 {f1:.4f}").format(variant=variant.name, f1=metrics.macro_f1))
        return 0


class EvalCommand:
    """Evaluates saved (or freshly initialised) parameters on the held-out split."""

    name = "eval"
    help = "Evaluate parameters on the test split and write metrics_eval.tsv"

    def __init__(self, app):
        self.app = app
        self._ = app._

    def configure(self, parser: argparse.ArgumentParser):
        add_run_arguments(parser)
        parser.add_argument("--params", default=None, help="Parameter archive (.npz); overrides run.params_path")

    def run(self, args: argparse.Namespace) -> int:
        cfg = load_config(args)
        manifest, _train, eval_samples = load_splits(cfg)
        variant = ModelVariant.from_run_config(cfg, vocab_size=len(manifest.vocabulary))
        params_path = args.params or cfg.params_path
        if params_path:
            params = load_params(params_path, variant)
        else:
            logging.warning(f"[Eval] No parameters given; evaluating a fresh {variant.name} initialisation")
            params = init_params(variant)

        out_dir = prepare_output_dir(cfg)
        evaluation = evaluate(variant, params, eval_samples)
        write_metrics_tsv(os.path.join(out_dir, "metrics_eval.tsv"), {variant.name: evaluation.metrics})
        write_confusion_tsv(os.path.join(out_dir, f"confusion_eval_{variant.name}.tsv"), evaluation.metrics)
        for name, flags in evaluation.metrics.zero_division.items():
            logging.warning(f"[Eval] {name}: zero denominator for {', '.join(flags)} (reported as 0)")
        print(self._("{variant}: macro F1 {f1:.4f}").format(variant=variant.name, f1=evaluation.metrics.macro_f1))
        return 0


class CompareCommand:
    """Trains all four variants with one seed and writes a precision/recall table."""

    name = "compare"
    help = "Train and evaluate every variant; write table1.tsv and metrics.tsv"

    def __init__(self, app):
        self.app = app
        self._ = app._

    def configure(self, parser: argparse.ArgumentParser):
        add_run_arguments(parser)
        parser.add_argument(
            "--seeds",
            type=int,
            default=None,
            help="Regenerate the corpus for N consecutive seeds from run.seed, train every variant on each "
            "and check that fusion beats speech_only; writes ordering.tsv",
        )

    def run(self, args: argparse.Namespace) -> int:
        cfg = load_config(args)
        if args.seeds is not None:
            return self.run_ordering(cfg, args.seeds)
        # Each variant gets its own archive, so a shared params_path is ignored here.
        cfg = cfg.model_copy(update={"params_path": None})
        out_dir = cfg.output_dir
        results: Dict[str, PerClassMetrics] = {}
        for name in VARIANTS:
            variant, metrics = train_and_evaluate(cfg, name, out_dir)
            results[variant.name] = metrics
            print(self._("{variant}: macro F1 {f1:.4f}").format(variant=variant.name, f1=metrics.macro_f1))
        write_table1_tsv(os.path.join(out_dir, "table1.tsv"), results)
        write_metrics_tsv(os.path.join(out_dir, "metrics.tsv"), results)
        return 0

    def run_ordering(self, cfg: RunConfig, n_seeds: int) -> int:
        if n_seeds < 1:
            raise ValueError(f"--seeds must be >= 1, got {n_seeds}")
        seeds = [cfg.seed + i for i in range(n_seeds)]
        report = fusion_ordering(cfg, seeds)
        write_ordering_tsv(os.path.join(prepare_output_dir(cfg), "ordering.tsv"), report)
        for name in VARIANTS:
            print(self._("{variant}: mean macro F1 {f1:.4f}").format(variant=name, f1=report.mean_f1(name)))
        failures = report.failures()
        if failures:
            for problem in failures:
                logging.error(f"[Compare] Fusion ordering violated: {problem}")
            print(self._("fusion ordering does not hold over {n} seeds").format(n=n_seeds))
            return 2
        print(self._("fusion ordering holds over {n} seeds").format(n=n_seeds))
        return 0


def setup(app):
    app.add_command(TrainCommand(app))
    app.add_command(EvalCommand(app))
    app.add_command(CompareCommand(app))
