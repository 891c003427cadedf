import argparse
import logging

from cli.common import add_run_arguments, load_config, split_counts
from utils.data import generate_dataset


class GenDataCommand:
    """Generates the synthetic speech-act corpus."""

    name = "gen-data"
    help = "Generate the synthetic corpus (WAVs, vocab.txt, manifest.tsv)"

    def __init__(self, app):
        self.app = app
        self._ = app._

    def configure(self, parser: argparse.ArgumentParser):
        add_run_arguments(parser)

    def run(self, args: argparse.Namespace) -> int:
        # --out points at the dataset directory for this command.
        cfg = load_config(args, out_key="dataset_dir")
        manifest = generate_dataset(cfg.generator, cfg.dataset_dir)
        splits = split_counts(manifest)
        logging.info(f"[GenData] Manifest written to {manifest.path}")
        print(manifest.summary())
        print(
            self._("splits: {train} train / {val} val / {test} test").format(
                train=splits.get("train", 0), val=splits.get("val", 0), test=splits.get("test", 0)
            )
        )
        print(self._("sha256 {checksum}").format(checksum=manifest.checksum))
        print(manifest.path)
        return 0


def setup(app):
    app.add_command(GenDataCommand(app))
