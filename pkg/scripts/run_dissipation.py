"""Entropy, Fisher and second moment at t in {0, 0.25, 0.5} from diag(4, 0.25, 0.25) data.

Pools 16 runs of 1024 particles. Writes dissipation.csv to results/dissipation.
"""

import sys

from landau_chaos.cli import main

if __name__ == "__main__":
    sys.exit(main(["entropy", "--out", "results/dissipation", "--set", "init.cov=4,0.25,0.25", *sys.argv[1:]]))
