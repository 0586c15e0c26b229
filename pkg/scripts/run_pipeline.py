"""Run every CLI stage for one config and time each stage.

    python3 scripts/run_pipeline.py configs/desk_world.yaml [--jobs 4] [--seed N]

Stops at the first stage that exits non-zero and returns its exit code.
"""

import argparse
import sys
import time

from gvarsv.cli import OK, main as gvarsv

STAGES = ("ingest", "estimate", "solve", "irf", "decompose", "report")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    args = ap.parse_args()
    extra = ["--jobs", str(args.jobs)]
    if args.seed is not None:
        extra += ["--seed", str(args.seed)]
    if args.out:
        extra += ["--out", args.out]
    total = 0.0
    for stage in STAGES:
        t0 = time.perf_counter()
        code = gvarsv([stage, "--config", args.config, *extra])
        dt = time.perf_counter() - t0
        total += dt
        print(f"{stage:<10} exit {code}  {dt:8.1f} s", flush=True)
        if code != OK:
            return code
    print(f"{'total':<10}         {total:8.1f} s")
    return OK


if __name__ == "__main__":
    sys.exit(main())
