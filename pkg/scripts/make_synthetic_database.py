"""Write a synthetic raw database shaped like the public quarterly GVAR data.

    python3 scripts/make_synthetic_database.py [--out data/synthetic] [--equity]

The files (levels.csv, trade.csv, ppp.csv) feed configs/paper_synthetic.yaml,
which exercises the full 26-unit pipeline without the real database.
"""

import argparse
from pathlib import Path

from gvarsv import oracle

REPO = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=REPO / "data" / "synthetic")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--equity", action="store_true", help="add real equity price levels")
    args = ap.parse_args()
    files = oracle.synthetic_database(args.out, seed=args.seed, equity=args.equity)
    for name, path in sorted(files.items()):
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
