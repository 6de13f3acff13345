"""Particle system coupled to reference-driven companions, N = 128 to T = 0.25.

Writes the pair distance series (coupled.csv) and the fitted log-growth
rate (coupled.json) to results/coupled.
"""

import sys

from landau_chaos.cli import main

if __name__ == "__main__":
    sys.exit(main(["coupled", "--out", "results/coupled", *sys.argv[1:]]))
