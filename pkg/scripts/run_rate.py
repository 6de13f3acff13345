"""Rate study at the default scale: N in {64, 128, 256, 512}, 32 seeds, T = 0.5.

Writes rate.csv, rate.json and a manifest to the output directory
(default results/rate). Extra arguments are passed to ``landau-chaos rate``.
"""

import sys

from landau_chaos.cli import main

if __name__ == "__main__":
    sys.exit(main(["rate", "--out", "results/rate", *sys.argv[1:]]))
