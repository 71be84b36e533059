"""Gaussianity of x_t along the noising trajectory for every modality family,
written as one long-form CSV for plotting, plus T* per family.

    python scripts/gaussianity_curves.py --d 24 --out runs/curves
"""

import argparse
from pathlib import Path

from trajtrunc.gaussianity import CURVE_COLUMNS
from trajtrunc.harness import Family, SyntheticSpec, TruncationConfig, family_curve, modality_t_stars
from trajtrunc.io import write_json, write_rows_csv
from trajtrunc.schedule import make_linear_schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--d", type=int, default=24)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--probe-stride", type=int, default=20)
    ap.add_argument("--no-mi", action="store_true")
    ap.add_argument("--out", default="runs/curves")
    args = ap.parse_args()

    schedule = make_linear_schedule()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    families = [Family.ONEHOT, Family.POINT_CLOUD, Family.SMOOTH_FIELD]
    probes = range(args.probe_stride, schedule.T + 1, args.probe_stride)

    rows = []
    for fam in families:
        spec = SyntheticSpec(family=fam, n=args.n, d=args.d, seed=args.seed)
        rep = family_curve(spec, schedule, probes, with_mi=not args.no_mi)
        rows += [{"family": fam.value, **r} for r in rep.rows()]
        print(f"{fam.value}: curve over {len(rep.steps)} probes")
    write_rows_csv(out / "curves.csv", rows, ("family",) + CURVE_COLUMNS)

    decisions = modality_t_stars(families, args.d, schedule, TruncationConfig(), n=args.n, seed=args.seed)
    summary = {k: {"t_star": v.t_star, "fallback": v.fallback} for k, v in decisions.items()}
    write_json(out / "t_star.json", summary)
    for k, v in summary.items():
        print(f"{k}: t_star={v['t_star']} fallback={v['fallback']}")


if __name__ == "__main__":
    main()
