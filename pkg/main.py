"""
didforge command-line entry point.

Usage:
    python main.py simulate --preset clean --n 4000 --seed 1 --out-dir runs/clean
    python main.py estimate --input runs/clean/panel.csv --method dr --out-dir runs/clean/dr
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
