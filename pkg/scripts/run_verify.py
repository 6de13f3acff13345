"""Invariant battery; also shows that a tampered drift kernel is caught.

Exit status is 0 when the clean run passes and the tampered run fails.
"""

import json
import sys

from landau_chaos.verify import verify_suite


def summary(verdict):
    for c in verdict["checks"]:
        mark = "ok  " if c["passed"] else "FAIL"
        print(f"  {mark} {c['name']:<24} {c['statistic']:.3e} {c['comparison']} {c['threshold']:.1e}"
              f"  ({c['seconds']:.2f}s)")


if __name__ == "__main__":
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    clean = verify_suite(seed)
    print(f"clean kernel: {'passed' if clean['passed'] else 'FAILED'}")
    summary(clean)
    bad = verify_suite(seed, mutation="b-half-space-sign")
    print(f"tampered kernel: {'passed (not caught)' if bad['passed'] else 'failed as expected'}")
    summary(bad)
    with open("verify.json", "w") as fh:
        json.dump({"clean": clean, "tampered": bad}, fh, indent=2)
    sys.exit(0 if clean["passed"] and not bad["passed"] else 1)
