#!/usr/bin/env python3
"""Reduced-rank LDS identification tool.

Commands:
- simulate  : true parameters + synthetic series
- fit       : penalized EM, writes a model archive
- predict   : k-step forecasts, scores and predictive variance
- sweep     : penalty grid search from a YAML config
- select-d  : latent dimension by profile likelihood
- distance  : permutation-invariant distance / Amari error
- study     : simulation studies over seeds
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
