"""Full-vs-truncated benchmark on one synthetic family, over several seeds.

    python scripts/run_benchmark.py --family gmm --seeds 0 1 2 --out runs/gmm
"""

import argparse
import json
from pathlib import Path

from trajtrunc.harness import SamplerConfig, ScheduleConfig, SyntheticSpec, TruncationConfig, run_pipeline
from trajtrunc.io import write_rows_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--family", default="gmm")
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--n-samples", type=int, default=10_000)
    ap.add_argument("--ks-only", action="store_true", help="KS-only T* rule (no covariance gate)")
    ap.add_argument("--timing-repeats", type=int, default=5)
    ap.add_argument("--out", default="runs/benchmark")
    args = ap.parse_args()

    out = Path(args.out)
    rows = []
    for seed in args.seeds:
        spec = SyntheticSpec(family=args.family, n=args.n, d=args.d, seed=seed)
        rep = run_pipeline(
            spec,
            ScheduleConfig(),
            TruncationConfig(covariance_gate=not args.ks_only),
            SamplerConfig(n_samples=args.n_samples, timing_repeats=args.timing_repeats),
            out_dir=out / f"seed{seed}",
        )
        c = rep.comparison
        row = {
            "seed": seed,
            "t_star": rep.decision.t_star,
            "fallback": rep.decision.fallback,
            "violations": len(rep.decision.violations),
            "ks_max": c.ks_max,
            "mean_gap": c.mean_gap,
            "var_gap": c.var_gap,
            "time_ratio": c.time_ratio,
            "expected_ratio": rep.decision.t_star / rep.decision.T,
            "speedup": c.speedup,
        }
        rows.append(row)
        print(json.dumps(row))
    write_rows_csv(out / "summary.csv", rows, list(rows[0]))


if __name__ == "__main__":
    main()
