"""
Entry point of the ``sbnn`` command.
"""

# Adding directories to system path to allow importing custom modules
import sys

sys.path.append("./")
sys.path.append("../")

# Importing necessary libraries and modules
import logging
import os
from dotenv import load_dotenv

from src.utils.cli import main as cli_main

LOG_LEVEL_ENV = "SBNN_LOG_LEVEL"


def main() -> int:
    # Load Environment variables
    load_dotenv(override=False)

    # Set up logging
    logging.basicConfig(
        level=os.environ.get(LOG_LEVEL_ENV, "INFO").upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s - line: %(lineno)d",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
