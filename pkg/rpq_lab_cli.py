#!/usr/bin/env python3
"""Standalone CLI runner for the random-projection quantizer laboratory.

Usage:
    python rpq_lab_cli.py --help
    python rpq_lab_cli.py gen-corpus --out corpus --seed 0
    python rpq_lab_cli.py pretrain --manifest corpus/manifest.jsonl --config config.example.json --out run
    python rpq_lab_cli.py grad-check --seed 7 --out run
"""

import sys
import os

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from rpq_lab.cli import run

if __name__ == "__main__":
    sys.exit(run())
