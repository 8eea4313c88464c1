#!/usr/bin/env python3
"""Regenerate every figure dataset from the JSON configs next to this script.

Usage: python3 scripts/run_figures.py [fig1 fig2 fig3]
"""
import sys
from pathlib import Path

from chainedbell.cli import main

HERE = Path(__file__).resolve().parent


def run(names):
    worst = 0
    for name in names:
        print(f"== {name}")
        code = main([name, "--config", str(HERE / "configs" / f"{name}.json")])
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:] or ["fig1", "fig2", "fig3"]))
