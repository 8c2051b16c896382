#!/usr/bin/env python3
"""
Run script for gridgnn

    python run.py train --grid 2x2x2x1 --batch-size 64 --epochs 5 --out metrics.csv
"""

import sys

from backend.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
