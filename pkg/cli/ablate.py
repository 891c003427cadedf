import argparse
import asyncio
import logging
import os

from cli.common import add_run_arguments, load_config, load_splits, prepare_output_dir
from utils.augment import expand_with_augmentations
from utils.reports import write_best_tsv, write_grid_tsv
from utils.trainer import ablation_sweep

GRID_FILE = "ablation_grid.tsv"
BEST_FILE = "ablation_best.tsv"


def thread_limit() -> int:
    """BEATS_THREADS caps how many grid cells train at once."""
    raw = os.getenv("BEATS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logging.warning(f"BEATS_THREADS={raw!r} is not an integer; using 1")
        return 1


class AblateCommand:
    """Sweeps alpha = gamma, beta = 1 - 2 * alpha for both fusion schemes."""

    name = "ablate"
    help = "Run the loss-weight ablation grid and write ablation_grid.tsv"

    def __init__(self, app):
        self.app = app
        self._ = app._

    def configure(self, parser: argparse.ArgumentParser):
        add_run_arguments(parser)

    def run(self, args: argparse.Namespace) -> int:
        cfg = load_config(args)
        manifest, train_samples, eval_samples = load_splits(cfg)
        train_set = expand_with_augmentations(train_samples, cfg.augment, cfg.seed)
        table = asyncio.run(
            ablation_sweep(cfg, train_set, eval_samples, len(manifest.vocabulary), threads=thread_limit())
        )

        out_dir = prepare_output_dir(cfg)
        write_grid_tsv(os.path.join(out_dir, GRID_FILE), table)
        write_best_tsv(os.path.join(out_dir, BEST_FILE), table)
        for scheme in table.schemes:
            print(self._("{scheme}: best alpha {alpha:g}").format(scheme=scheme, alpha=table.best_alpha(scheme)))
        return 0


def setup(app):
    app.add_command(AblateCommand(app))
