"""Numerical checks of the inequalities the certificates rest on, plus the ARX CLT rate.

    python scripts/inequality_checks.py [--seed 0] [--out results/inequality_checks.json]
"""

import argparse
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from pacb.experiments import (
    chi2_mgf_check,
    clt_rate,
    denominator_inequality_check,
    dv_markov_check,
    hoeffding_mgf_check,
)
from pacb.model import ARX


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/inequality_checks.json")
    args = ap.parse_args()

    arx = ARX((0.5,), (0.3,), 0.5, 1.0)
    reports = [
        dv_markov_check(seed=args.seed),
        hoeffding_mgf_check(1.0, 10.0, 100, seed=args.seed),
        denominator_inequality_check(seed=args.seed),
        chi2_mgf_check(6, [-0.05, -0.1, -0.25, -0.5, -1.0], seed=args.seed, model=arx, w=[0.8, 0.1]),
    ]
    out = {r.name: asdict(r) for r in reports}
    rate = clt_rate(arx, np.asarray(arx.w_star) + 0.1, seed=args.seed)
    out["clt_rate"] = rate
    for r in reports:
        print(f"{r.name:18s} {'ok' if r.passed else 'FAILED'}  worst={r.worst:.3g}")
    print(f"{'clt_rate':18s} shrink per doubling {rate['shrink_per_doubling']:.3f} (1/sqrt 2 = 0.707)")
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, indent=2, sort_keys=True, default=float) + "\n")


if __name__ == "__main__":
    main()
