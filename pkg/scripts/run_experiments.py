#!/usr/bin/env python3
"""Run every committed experiment config into runs/.

The heavy sweeps (consistency at N = 32000, the lifted runs) take a few
minutes each on two cores; pass names to run a subset, e.g.

    python scripts/run_experiments.py moments duality hydro_uniform
"""

import sys
import time
from pathlib import Path

from sepsim.experiments import load_config, run

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"


def main(argv):
    wanted = set(argv) or None
    failures = []
    for path in sorted(CONFIGS.glob("*.ini")):
        if wanted and path.stem not in wanted:
            continue
        config = load_config(path)
        config.out = ROOT / "runs" / path.stem
        print(f"== {path.stem} -> {config.out}", flush=True)
        started = time.time()
        code = run(config)
        print(f"   exit {code} [{time.time() - started:.1f}s]", flush=True)
        if code != 0:
            failures.append(path.stem)
    if failures:
        print(f"FAILED: {', '.join(failures)}")
        return 1
    print("all experiments passed")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
