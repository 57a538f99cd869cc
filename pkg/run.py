#!/usr/bin/env python
"""Entry point for running rain from a source checkout."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from rain.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
