"""Command-line entry point: ``trajtrunc <subcommand> ...``.

Exit codes: 0 success, 2 parameter error, 3 data/contract error, 4 fallback
decision under ``tstar --strict``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ParameterError, TrajTruncError
from .gaussianity import CURVE_COLUMNS, gaussianity_curve
from .harness import (
    SamplerConfig,
    ScheduleConfig,
    SyntheticSpec,
    TruncationConfig,
    build_denoiser,
    flatten_config,
    generate,
    run_pipeline,
    split_config,
)
from .sampler import ancestral_sample
from .schedule import NoiseSchedule
from .stats import Dataset, Modality, center, compute_stats, propagate_variance
from .truncation import TruncationDecision, select_t_star, truncated_prior
from . import rng as _rng

EXIT_FALLBACK = 4


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=default, help="root RNG seed")
    p.add_argument("--config", default=default, help="flat JSON file of parameters")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--format", choices=("csv", "json", "bin"), default=default, help="tabular/dataset output format")
    return p


def _param(p, *names, **kw):
    kw.setdefault("default", None)
    p.add_argument(*names, **kw)


def _data_args(p):
    p.add_argument("data", help="dataset file (CSV or TDFD binary)")
    _param(p, "--modality", dest="modality", choices=[m.value for m in Modality])


def _schedule_args(p):
    _param(p, "--T", dest="T", type=int)
    _param(p, "--beta-start", dest="beta_start", type=float)
    _param(p, "--beta-end", dest="beta_end", type=float)
    _param(p, "--schedule", dest="schedule", choices=("linear", "cosine"))


def _trunc_args(p):
    _param(p, "--tau", type=int)
    _param(p, "--significance", type=float)
    _param(p, "--pass-threshold", dest="pass_threshold", type=float)
    _param(p, "--stride", type=int)
    _param(p, "--max-samples", dest="max_samples", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--covariance-gate", dest="covariance_gate", action="store_true", default=None)
    g.add_argument("--ks-only", dest="covariance_gate", action="store_false", default=None)


def _family_args(p):
    _param(p, "--family", choices=("gmm", "point-cloud", "onehot-categorical", "smooth-field"))
    _param(p, "--n", type=int)
    _param(p, "--d", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajtrunc",
        parents=[_global_flags(False)],
        description="Gaussianity analysis and analytic truncation of VP noising trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    flags = _global_flags(True)

    p = sub.add_parser("gen-data", parents=[flags], help="generate a synthetic dataset")
    _family_args(p)

    p = sub.add_parser("stats", parents=[flags], help="center a dataset and report per-sample moments")
    _data_args(p)
    p.add_argument("--no-center", action="store_true", help="report statistics of the data as given")

    p = sub.add_parser("analyze", parents=[flags], help="Gaussianity curve along probe steps")
    _data_args(p)
    _schedule_args(p)
    _param(p, "--probe-stride", dest="probe_stride", type=int, help="probe every k steps (default 25)")
    _param(p, "--probe-steps", dest="probe_steps", help="comma-separated explicit probe steps")
    _param(p, "--significance", type=float)
    _param(p, "--max-samples", dest="max_samples", type=int)
    p.add_argument("--no-mi", action="store_true", help="skip mutual information")

    p = sub.add_parser("tstar", parents=[flags], help="select the truncation step")
    _data_args(p)
    _schedule_args(p)
    _trunc_args(p)
    p.add_argument("--strict", action="store_true", help="exit with code 4 on a fallback decision")

    p = sub.add_parser("sample", parents=[flags], help="ancestral sampling, full or truncated")
    _param(p, "--data", help="dataset used for statistics / the linear denoiser (default: generate from config)")
    _param(p, "--modality", choices=[m.value for m in Modality])
    _param(p, "--decision", help="decision JSON from `tstar`; start from its t_star")
    _param(p, "--denoiser", choices=("auto", "gmm-analytic", "linear", "zero"))
    _param(p, "--n-samples", dest="n_samples", type=int)
    _schedule_args(p)
    _family_args(p)

    p = sub.add_parser("bench", parents=[flags], help="end-to-end truncation benchmark")
    _family_args(p)
    _schedule_args(p)
    _trunc_args(p)
    _param(p, "--n-samples", dest="n_samples", type=int)
    _param(p, "--denoiser", choices=("auto", "gmm-analytic", "linear", "zero"))
    _param(p, "--timing-repeats", dest="timing_repeats", type=int)
    return parser


_CLI_ONLY = {"command", "config", "out", "format", "data", "modality", "probe_stride", "probe_steps", "no_mi",
             "strict", "decision", "no_center"}


def effective_config(args) -> dict:
    """Defaults < config file < explicit flags."""
    flat = flatten_config(SyntheticSpec(), ScheduleConfig(), TruncationConfig(), SamplerConfig())
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            doc = io.read_json(cfg_path)
        except (OSError, json.JSONDecodeError) as exc:
            raise ParameterError(f"cannot read config {cfg_path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ParameterError("config file must hold a flat JSON object")
        flat.update(doc)
    for k, v in vars(args).items():
        if k in _CLI_ONLY or v is None:
            continue
        flat[k] = v
    if getattr(args, "seed", None) is not None:
        flat["seed"] = args.seed
    split_config(flat)  # validates keys and values
    return flat


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(args) -> str:
    return getattr(args, "format", None) or "csv"


def _load_dataset(path, modality) -> Dataset:
    return Dataset(io.read_matrix(path), Modality(modality or Modality.GENERIC))


def _print(doc: dict) -> None:
    print(json.dumps(io._jsonable(doc), indent=2))


def cmd_gen_data(args, cfg):
    spec, *_ = split_config(cfg)
    ds = generate(spec)
    out = _out_dir(args)
    fmt = _fmt(args)
    path = out / f"dataset.{fmt}"
    io.write_matrix(path, ds.data, fmt)
    io.write_json(out / "dataset.sidecar.json", {"modality": ds.modality.value, "n": ds.n, "d": ds.d, "config": cfg})
    _print({"written": str(path), "n": ds.n, "d": ds.d, "modality": ds.modality.value})
    return 0


def cmd_stats(args, cfg):
    ds = _load_dataset(args.data, args.modality)
    raw = compute_stats(ds)
    st = raw if args.no_center else compute_stats(center(ds))
    doc = {**st.to_dict(), "raw_mean_residual": raw.mean_residual, "modality": ds.modality.value, "config": cfg}
    io.write_json(_out_dir(args) / "stats.json", doc)
    _print(doc)
    return 0


def _prepared(args, cfg):
    _, sched_cfg, _, _ = split_config(cfg)
    schedule = sched_cfg.build()
    data = center(_load_dataset(args.data, args.modality))
    vpath = propagate_variance(compute_stats(data), schedule)
    return schedule, data, vpath


def cmd_analyze(args, cfg):
    schedule, data, vpath = _prepared(args, cfg)
    if args.probe_steps:
        try:
            steps = [int(s) for s in args.probe_steps.split(",") if s.strip()]
        except ValueError:
            raise ParameterError(f"bad --probe-steps {args.probe_steps!r}") from None
    else:
        k = args.probe_stride or 25
        steps = list(range(k, schedule.T + 1, k))
    rep = gaussianity_curve(
        data, schedule, vpath, steps, seed=cfg["seed"],
        significance=cfg["significance"], max_samples=cfg["max_samples"], with_mi=not args.no_mi,
    )
    out = _out_dir(args)
    io.write_rows_csv(out / "gaussianity.csv", rep.rows(), CURVE_COLUMNS)
    io.write_json(out / "gaussianity.json", {**rep.to_dict(), "schedule": schedule.to_dict(), "config": cfg})
    _print({"written": [str(out / "gaussianity.csv"), str(out / "gaussianity.json")], "probes": len(rep.steps)})
    return 0


def cmd_tstar(args, cfg):
    schedule, data, vpath = _prepared(args, cfg)
    _, _, tc, _ = split_config(cfg)
    dec = select_t_star(
        data, schedule, vpath, tau=tc.tau, significance=tc.significance, pass_threshold=tc.pass_threshold,
        stride=tc.stride, seed=cfg["seed"] if tc.scan_seed is None else tc.scan_seed,
        max_samples=tc.max_samples, covariance_gate=tc.covariance_gate,
    )
    doc = {**dec.to_dict(), "avg_var": vpath.avg_var, "schedule": schedule.to_dict(), "config": cfg}
    io.write_json(_out_dir(args) / "decision.json", doc)
    _print({k: doc[k] for k in ("t_star", "T", "fallback", "tau", "violations", "schedule_fingerprint")})
    if dec.fallback and args.strict:
        return EXIT_FALLBACK
    return 0


def cmd_sample(args, cfg):
    spec, sched_cfg, _, sc = split_config(cfg)
    schedule = sched_cfg.build()
    if args.data:
        data = center(_load_dataset(args.data, args.modality))
    else:
        data = center(generate(spec))
    vpath = propagate_variance(compute_stats(data), schedule)
    seed = cfg["seed"] if sc.sample_seed is None else sc.sample_seed
    denoiser = build_denoiser(spec, sc.denoiser, data, schedule, seed, sc.fit_pairs)
    n, d = sc.n_samples, data.d
    if args.decision:
        doc = io.read_json(args.decision)
        dec = TruncationDecision.from_dict(doc)
        if dec.schedule_fingerprint != schedule.fingerprint():
            raise ParameterError(
                f"decision schedule {dec.schedule_fingerprint} does not match {schedule.fingerprint()}"
            )
        start = dec.t_star
        init = truncated_prior(vpath, start, (n, d), seed)
    else:
        start = schedule.T
        init = _rng.make_rng(seed, _rng.PRIOR).standard_normal((n, d))
    batch = ancestral_sample(denoiser, schedule, start, init, seed)
    out = _out_dir(args)
    fmt = _fmt(args)
    path = out / f"samples.{fmt}"
    io.write_matrix(path, batch.data, fmt)
    io.write_json(out / "samples.sidecar.json", {**batch.provenance, "config": cfg})
    _print({"written": str(path), **batch.provenance})
    return 0


def cmd_bench(args, cfg):
    spec, sched_cfg, tc, sc = split_config(cfg)
    out = _out_dir(args)
    rep = run_pipeline(spec, sched_cfg, tc, sc, out_dir=out)
    doc = rep.to_dict()
    summary = {
        "t_star": doc["decision"]["t_star"],
        "T": doc["decision"]["T"],
        "fallback": doc["decision"]["fallback"],
        "ks_max": doc["quality"]["ks_max"],
        "time_ratio": doc["quality"].get("time_ratio"),
        "speedup": doc["quality"].get("speedup"),
        "weight_recovery": doc["weight_recovery"],
        "out": str(out),
    }
    io.write_rows_csv(out / "quality.csv", [{"dim": j, "ks": v} for j, v in enumerate(doc["quality"]["ks_per_dim"])], ("dim", "ks"))
    _print(summary)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "stats": cmd_stats,
    "analyze": cmd_analyze,
    "tstar": cmd_tstar,
    "sample": cmd_sample,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](args, cfg)
    except TrajTruncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
