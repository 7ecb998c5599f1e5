"""
``sddp-tsto <command> [--config_path file] [--flag value ...]``, where command is one of generate, train, compare or
report. Each command parses its own config dataclass with draccus; ``sddp-tsto <command> --help`` lists the flags.
"""
import logging
import sys
from typing import Callable, Dict, List, Optional

import sddp_tsto.config
from sddp_tsto.errors import SddpError
from sddp_tsto.main import compare, generate, report, train


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2

COMMANDS: Dict[str, Callable] = {
    "generate": generate.main,
    "train": train.main,
    "compare": compare.main,
    "report": report.main,
}

USAGE = f"usage: sddp-tsto {{{','.join(COMMANDS)}}} [--config_path PATH] [--<field> VALUE ...]"


def main(argv: Optional[List[str]] = None) -> int:
    """Runs one command and returns the process exit code. ``argv`` excludes the program name."""
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return EXIT_OK if argv else EXIT_CONFIG

    command, args = argv[0], argv[1:]
    if command not in COMMANDS:
        print(f"unknown command {command!r}\n{USAGE}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        sddp_tsto.config.main(COMMANDS[command], args=args)()
    except SddpError as e:
        logger.error(f"{command} failed: {e}")
        return e.exit_code
    except (FileNotFoundError, ValueError) as e:
        # draccus decoding errors are ValueErrors
        logger.error(f"{command}: bad configuration: {e}")
        return EXIT_CONFIG
    except SystemExit as e:
        # argparse exits on --help and on unknown flags
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
