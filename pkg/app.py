#!/usr/bin/env python3
"""
Sketchwrap - command-line entry point
=====================================

Wraps experimental trajectory planners in a constrained MPC:
- Run scenario suites in closed loop under the five ablation modes
- Extract and inspect single maneuvers
- Render per-frame SVG debug images and HTML ablation reports

Usage:
    python app.py run --scenarios gen:cut_in:100:0 --config all --out results
    python app.py render --log results/logs/<id>__StayAhead.ndjson --frames 30..40
"""
from pathlib import Path

from dotenv import load_dotenv

from sketchwrap.cli import cli

APP_DIR = Path(__file__).parent
load_dotenv(dotenv_path=APP_DIR / '.env')

if __name__ == '__main__':
    cli()
