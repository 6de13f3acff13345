"""Trigger frequency of the perturbation noise for N in {64, 128, 256, 512}.

Anchors are selected from 10^5 samples of the initial law, then each N runs
8 seeds to T = 0.5. Writes trigger.csv and trigger.json to results/trigger.
Pass ``--reanchor --set anchors.tau0=0.1`` to re-select anchors per window.
"""

import sys

from landau_chaos.cli import main

if __name__ == "__main__":
    sys.exit(main(["perturbed", "--out", "results/trigger", *sys.argv[1:]]))
