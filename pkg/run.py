"""Run pressure-lab from a source checkout: ``python run.py measure --config run.ini``."""

import logging
import os
import sys
import traceback

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from startup import initialize_environment  # noqa: E402

logger = logging.getLogger(__name__)


def main():
    """Initialize the environment and hand over to the command line."""
    try:
        initialize_environment()
        from pressure_lab.cli.commands import main as cli_main
        sys.exit(cli_main(sys.argv[1:]))
    except SystemError as e:
        logger.error(f"Error starting pressure-lab: {str(e)}")
        logger.error("Traceback:")
        logger.error(traceback.format_exc())
        sys.exit(1)


if __name__ == '__main__':
    main()
