"""Allow running the CLI as ``python -m fddp``."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
