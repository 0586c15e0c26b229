"""Write the canonical 3-country synthetic world as CLI inputs.

    python3 scripts/make_desk_world.py [--out data/desk_world] [--seed N]

Produces panel.csv and weights.csv (read by configs/desk_world.yaml) plus
truth.json with the generating parameters.
"""

import argparse
import json
from pathlib import Path

from gvarsv import oracle

REPO = Path(__file__).resolve().parents[1]


def _params_tree(world) -> dict:
    tree = {}
    for s, p, v in zip(world.specs, world.params, world.vols):
        tree[s.id] = {
            "domestic": [k.value for k in s.domestic_vars],
            "foreign": [k.value for k in s.foreign_vars],
            "intercept": p.intercept.tolist(), "phi": p.phi.tolist(), "lam": p.lam.tolist(),
            "psi": p.psi.tolist(), "a_tilde": p.ident.a_tilde.tolist(),
            "vol_intercept": v.intercept.tolist(), "ups": v.ups.tolist(), "xi": v.xi.tolist(),
            "q_diag": v.q_diag.tolist(),
        }
    return tree


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=REPO / "data" / "desk_world")
    ap.add_argument("--seed", type=int, default=oracle.CANONICAL_SEED)
    args = ap.parse_args()
    world = oracle.canonical_world(seed=args.seed)
    files = oracle.write_world_inputs(world, args.out)
    doc = {"seed": args.seed, "T": world.T, "n_training": world.n_training,
           "level_radius": oracle.level_radius(world), "weights": world.weights.w.tolist(),
           "countries": _params_tree(world)}
    (args.out / "truth.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {files['panel']}, {files['weights']} and {args.out / 'truth.json'}")


if __name__ == "__main__":
    main()
