"""Command-line entry point."""

import logging
import sys
from typing import Optional

from mkelab.cli.commands import run_cli
from mkelab.config import settings

# Configure logging
logging.basicConfig(
    level=settings.LOG_LEVEL,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

# Set log level for our modules
logging.getLogger("mkelab").setLevel(settings.LOG_LEVEL)
logging.getLogger("matplotlib").setLevel(logging.WARNING)

logger = logging.getLogger(__name__)


def main(argv: Optional[list[str]] = None) -> int:
    """Run the CLI and return its exit code."""
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
