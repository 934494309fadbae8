"""
fbm-polymer - Anderson polymer partition function in a fractional Brownian environment.

This package provides exact samplers for the fractional Brownian space-time
field, exact partition-function solvers for the lattice polymer, Monte Carlo
estimators of its free energy, and numerical checks of the bounds that
control it, together with the fbm-polymer command-line runner.
"""

import sys

from . import runner
from .errors import PolymerError
from .records import BoundReport, EstimateRecord
from .streams import StreamKey

__version__ = "1.0.0"
__author__ = "Mike Lee"
__email__ = "michael@aiop.net"


def main():
    """Main entry point for the package."""
    try:
        sys.exit(runner.main())
    except KeyboardInterrupt:
        print("\nRun interrupted by user", file=sys.stderr)
        sys.exit(130)
    except Exception as e:
        print(f"fbm-polymer error: {e}", file=sys.stderr)
        sys.exit(1)


__all__ = ['main', 'runner', 'BoundReport', 'EstimateRecord', 'PolymerError', 'StreamKey']
