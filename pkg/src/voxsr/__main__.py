"""Module entry point so ``python -m voxsr`` behaves like the ``voxsr`` script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
