"""Toy convergence run: full preset, 2000 iterations, held-out depth and trajectory error.

Writes results/convergence.json. Re-running is cheap when the sources are unchanged.
"""
from __future__ import annotations

import argparse
import json

from protocol import PROTOCOL, RESULTS, fingerprint, run

ABS_REL_LIMIT = 0.25
CPU_LIMIT_SECONDS = 30 * 60


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args()
    r = run("full", args.seed, verbose=not args.quiet)
    held = r["heldout"]
    summary = {
        "fingerprint": fingerprint(),
        "iterations": PROTOCOL.iterations,
        "seed": args.seed,
        "abs_rel": held["abs_rel"],
        "a1": held["a1"],
        "ate": held["ate_mean"],
        "identity_ate": held["identity_ate_mean"],
        "train_cpu_seconds": r["train_cpu_seconds"],
        "total_at_50": r["total_at_50"],
        "total_final": r["total_final"],
    }
    summary["checks"] = {
        "abs_rel_below_limit": summary["abs_rel"] < ABS_REL_LIMIT,
        "ate_below_identity": summary["ate"] < summary["identity_ate"],
        "cpu_within_budget": summary["train_cpu_seconds"] <= CPU_LIMIT_SECONDS,
        "loss_halved_after_50": summary["total_final"] <= 0.5 * summary["total_at_50"],
    }
    RESULTS.mkdir(exist_ok=True)
    (RESULTS / "convergence.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
