"""Main entry point for fibospec package."""

import sys

from fibospec import main

if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
