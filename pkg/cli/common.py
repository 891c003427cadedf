import argparse
import logging
import os
from typing import Dict, List, Tuple

from utils.config_validator import RunConfig, load_run_config
from utils.data import DatasetManifest, Sample, load_manifest, load_samples


def add_run_arguments(parser: argparse.ArgumentParser, config_required: bool = True):
    parser.add_argument("--config", required=config_required, help="Run config file (section.key = value lines)")
    parser.add_argument("--seed", type=int, default=None, help="Override run.seed")
    parser.add_argument("--out", default=None, help="Override the output directory")


def load_config(args: argparse.Namespace, out_key: str = "output_dir") -> RunConfig:
    """Validates the run config with the command-line overrides applied."""
    overrides = {("seed",): args.seed, (out_key,): args.out}
    return load_run_config(args.config, overrides)


def prepare_output_dir(cfg: RunConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def load_splits(cfg: RunConfig, eval_split: str = "test") -> Tuple[DatasetManifest, List[Sample], List[Sample]]:
    """Training records plus the evaluation split (val, then train, when the split is empty)."""
    manifest = load_manifest(cfg.dataset_dir)
    train_samples = load_samples(manifest, "train")
    for split in (eval_split, "val", "train"):
        eval_samples = load_samples(manifest, split)
        if eval_samples:
            if split != eval_split:
                logging.warning(f"Split '{eval_split}' is empty; evaluating on '{split}' instead")
            break
    logging.info(
        f"Loaded {manifest.summary()} from {cfg.dataset_dir}: {len(train_samples)} train, {len(eval_samples)} eval"
    )
    return manifest, train_samples, eval_samples


def split_counts(manifest: DatasetManifest) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for record in manifest.records:
        counts[record.split] = counts.get(record.split, 0) + 1
    return counts
