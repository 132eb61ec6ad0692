"""
Command-line entry point.
Run from the project root: python main.py <command> [flags]
"""

import sys

from src.cli.app import main


if __name__ == "__main__":
    sys.exit(main())
