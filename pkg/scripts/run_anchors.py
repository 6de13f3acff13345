"""Greedy anchors from Gaussian samples and the ellipticity floor over 10^4 trials.

Writes anchors.json and ellipticity.json to results/anchors.
"""

import sys

from landau_chaos.cli import main

if __name__ == "__main__":
    sys.exit(main(["anchors", "--out", "results/anchors", "--set", "anchors.samples=10000", *sys.argv[1:]]))
