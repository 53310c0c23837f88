"""Module entry point so ``python3 -m echobench`` works like the script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
