# dhff.py
"""
Console entry point. See `python dhff.py --help`.
"""

import sys

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
