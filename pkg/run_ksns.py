#!/usr/bin/env python3
"""
KSNS command line entry point

    python run_ksns.py run config/standard.cfg
    python run_ksns.py verify projection
"""

import sys

from dotenv import load_dotenv

# KSNS_* settings from .env before the package reads them
load_dotenv()

from ksns.api.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
