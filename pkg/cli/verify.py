import argparse
import logging

from cli.common import add_run_arguments, load_config
from utils.i18n_setup import ngettext
from utils.invariants import VerifyContext, run_checks


class VerifyCommand:
    """Runs the invariant suite and reports every check once."""

    name = "verify"
    help = "Run gradient, Sinkhorn, OTK, I/O and dataset checks"

    def __init__(self, app):
        self.app = app
        self._ = app._

    def configure(self, parser: argparse.ArgumentParser):
        add_run_arguments(parser, config_required=False)

    def run(self, args: argparse.Namespace) -> int:
        cfg = load_config(args)
        ctx = VerifyContext(seeds=cfg.verify.seeds, sinkhorn_tol=cfg.verify.sinkhorn_tol, base_seed=cfg.seed)
        results = run_checks(ctx, cfg.verify.only)
        for result in results:
            print(result.line())

        failed = [r for r in results if not r.passed]
        print(self._("{passed}/{total} checks passed").format(passed=len(results) - len(failed), total=len(results)))
        if failed:
            print(ngettext("{count} check failed", "{count} checks failed", len(failed)).format(count=len(failed)))
            logging.error(f"[Verify] Failed: {', '.join(r.name for r in failed)}")
            return 2
        return 0


def setup(app):
    app.add_command(VerifyCommand(app))
