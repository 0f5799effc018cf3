#!/usr/bin/env python3
"""
CLI launcher for hkfit
Usage: python hkfit_cli.py <fit|predict|variation|design|simulate|current-status> ...
"""

import os
import sys

# Add the project root to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from hkfit.cli import main

if __name__ == '__main__':
    sys.exit(main())
