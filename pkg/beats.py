import argparse
import importlib
import logging
import sys
from typing import Dict, List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from utils.config_parser import ConfigParseError
from utils.config_validator import ConfigError
from utils.encoders import ConfigurationError
from utils.i18n_setup import _

# --- LOGGING SETUP ---
logging.basicConfig(level=logging.INFO, format="[%(asctime)s] [%(levelname)s] - %(message)s")

load_dotenv()

# --- COMMAND LIST ---
# Add new command modules here
COMMANDS_TO_LOAD = [
    "cli.gen_data",
    "cli.train",
    "cli.ablate",
    "cli.verify",
]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class App:
    """Command registry; every module in COMMANDS_TO_LOAD registers through setup(app)."""

    def __init__(self):
        self.commands: Dict[str, object] = {}
        self._ = _

    def add_command(self, command):
        if command.name in self.commands:
            raise ValueError(f"command '{command.name}' registered twice")
        self.commands[command.name] = command

    def load_extension(self, module_name: str):
        module = importlib.import_module(module_name)
        module.setup(self)


def create_app() -> App:
    app = App()
    for module_name in COMMANDS_TO_LOAD:
        try:
            app.load_extension(module_name)
            logging.debug(f"Loaded command module: {module_name}")
        except Exception as e:
            logging.error(f"Failed to load command module {module_name}: {e}", exc_info=True)
    return app


def build_parser(app: App) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beats", description="Speech-act classification from speech and text")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, command in app.commands.items():
        command.configure(subparsers.add_parser(name, help=command.help))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    app = create_app()
    args = build_parser(app).parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    command = app.commands[args.command]
    try:
        return command.run(args)
    except ConfigParseError as e:
        logging.critical(f"❌ {e}")
        return EXIT_CONFIG
    except (ConfigError, ConfigurationError, ValidationError) as e:
        logging.critical(_("Invalid configuration: {error}").format(error=e))
        return EXIT_CONFIG
    except Exception as e:
        logging.critical(_("{command} failed: {error}").format(command=args.command, error=e), exc_info=args.verbose)
        return EXIT_RUNTIME


# --- INITIALIZATION ---
if __name__ == "__main__":
    sys.exit(main())
