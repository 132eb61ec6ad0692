"""
Module entry point.
Prefer running from the project root: python main.py
or as a module: python -m src.main
"""

import sys
from pathlib import Path


# When this file is run directly, put the project root (parent of src) on the path
if __name__ == "__main__":
    current_file = Path(__file__).resolve()
    project_root = current_file.parent.parent
    if str(project_root) not in sys.path:
        sys.path.insert(0, str(project_root))

from src.cli.app import main


if __name__ == "__main__":
    sys.exit(main())
