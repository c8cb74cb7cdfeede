"""Baseline vs full preset on the moving-object held-out subset, averaged over seeds.

Writes results/ablation.json. Runs already trained by run_convergence.py are reused.
"""
from __future__ import annotations

import argparse
import json

import numpy as np

from protocol import RESULTS, fingerprint, run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args()
    per_seed = {p: {} for p in ("baseline", "full")}
    for seed in args.seeds:
        for preset in per_seed:
            r = run(preset, seed, verbose=not args.quiet)
            per_seed[preset][seed] = r["heldout_moving"]["abs_rel"]
    mean = {p: float(np.mean(list(v.values()))) for p, v in per_seed.items()}
    summary = {
        "fingerprint": fingerprint(),
        "seeds": args.seeds,
        "moving_abs_rel": {p: {str(s): v for s, v in d.items()} for p, d in per_seed.items()},
        "mean_moving_abs_rel": mean,
        "full_not_worse": mean["full"] <= mean["baseline"],
    }
    RESULTS.mkdir(exist_ok=True)
    (RESULTS / "ablation.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
