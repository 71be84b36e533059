"""Synthetic modality families, the end-to-end truncation benchmark, and its
configuration objects."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cholesky
from scipy.stats import special_ortho_group

from . import io
from . import rng as _rng
from .errors import ParameterError, StageError
from .gaussianity import GaussianityReport, gaussianity_curve
from .sampler import (
    ComparisonReport,
    Denoiser,
    GmmDenoiser,
    GmmSpec,
    ZeroDenoiser,
    compare_full_vs_truncated,
    fit_linear_denoiser,
)
from .schedule import NoiseSchedule, make_cosine_schedule, make_linear_schedule
from .stats import Dataset, DatasetStats, Modality, VariancePath, center, compute_stats, propagate_variance
from .truncation import TruncationDecision, select_t_star


class Family(str, enum.Enum):
    GMM = "gmm"
    POINT_CLOUD = "point-cloud"
    ONEHOT = "onehot-categorical"
    SMOOTH_FIELD = "smooth-field"


@dataclass(frozen=True)
class SyntheticSpec:
    family: Family = Family.GMM
    n: int = 10_000
    d: int = 8
    seed: int = 0
    # gmm: weights, mean scale along an alternating +/- pattern, component variance
    weights: tuple[float, ...] = (0.6, 0.4)
    mean_scale: float = 0.7
    component_var: float = 0.3
    # point-cloud: d // 3 points per cloud drawn from a library of Gaussian templates
    n_shapes: int = 4
    shape_scale: float = 0.5
    jitter: float = 0.1
    # onehot: class frequencies (None -> Zipf-like over d classes)
    frequencies: tuple[float, ...] | None = None
    # smooth-field: squared-exponential process on a 1-D grid of d points
    corr_length: float | None = None
    nonlinearity: str = "tanh"
    gain: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.n < 2 or self.d < 2:
            raise ParameterError(f"need n >= 2 and d >= 2, got n={self.n}, d={self.d}")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.frequencies is not None:
            object.__setattr__(self, "frequencies", tuple(float(f) for f in self.frequencies))

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["family"] = self.family.value
        return doc


def gmm_spec_for(spec: SyntheticSpec) -> GmmSpec:
    """Mixture whose coordinate means vanish.

    A single component sits at the origin. Otherwise component 0 has mean
    ``mean_scale * (+1, -1, +1, ...)`` and the others share a multiple of it
    chosen so that ``sum_k w_k mu_k = 0``. ``d`` must be even so that each
    mean also sums to zero across coordinates.
    """
    w = np.asarray(spec.weights, dtype=np.float64)
    if w.size < 1 or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
        raise ParameterError(f"gmm weights must be positive numbers summing to 1, got {spec.weights}")
    if spec.component_var < 0:
        raise ParameterError("component_var must be non-negative")
    if w.size == 1:
        return GmmSpec(w, np.zeros((1, spec.d)), np.array([spec.component_var]))
    if spec.d % 2:
        raise ParameterError(f"gmm family needs even d, got {spec.d}")
    pattern = np.tile([1.0, -1.0], spec.d // 2)
    # split the +/- direction: component 0 on one side, the rest balancing it
    signs = np.array([1.0] + [-1.0] * (w.size - 1))
    scale = np.where(signs > 0, 1.0, w[0] / (1.0 - w[0]))
    means = (signs * scale)[:, None] * spec.mean_scale * pattern[None, :]
    return GmmSpec(w, means, np.full(w.size, spec.component_var))


def _onehot_frequencies(spec: SyntheticSpec) -> np.ndarray:
    if spec.frequencies is None:
        f = 1.0 / np.arange(1, spec.d + 1)
        return f / f.sum()
    f = np.asarray(spec.frequencies, dtype=np.float64)
    if f.size != spec.d or np.any(f < 0) or abs(f.sum() - 1) > 1e-9:
        raise ParameterError(f"onehot frequencies must be {spec.d} non-negative numbers summing to 1")
    return f


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw a raw (not yet centered) dataset for ``spec``."""
    gen = _rng.make_rng(spec.seed, _rng.DATA, list(Family).index(spec.family))
    n, d = spec.n, spec.d

    if spec.family is Family.GMM:
        return Dataset(gmm_spec_for(spec).sample(n, spec.seed), Modality.GENERIC)

    if spec.family is Family.ONEHOT:
        labels = gen.choice(d, size=n, p=_onehot_frequencies(spec))
        x = np.zeros((n, d))
        x[np.arange(n), labels] = 1.0
        return Dataset(x, Modality.ONEHOT)

    if spec.family is Family.POINT_CLOUD:
        if d % 3:
            raise ParameterError(f"point-cloud family needs d divisible by 3, got {d}")
        if spec.n_shapes < 1 or spec.jitter < 0:
            raise ParameterError("need n_shapes >= 1 and jitter >= 0")
        m = d // 3
        library = spec.shape_scale * gen.standard_normal((spec.n_shapes, m, 3))
        library -= library.mean(axis=1, keepdims=True)
        shape_idx = gen.integers(0, spec.n_shapes, size=n)
        rot = special_ortho_group(dim=3, seed=gen).rvs(size=n).reshape(n, 3, 3)
        clouds = np.einsum("nij,nmj->nmi", rot, library[shape_idx])
        clouds += spec.jitter * gen.standard_normal(clouds.shape)
        clouds += gen.standard_normal((n, 1, 3))  # arbitrary placement, removed by centering
        return Dataset(clouds.reshape(n, d), Modality.EUCLIDEAN_POINTS)

    if spec.family is Family.SMOOTH_FIELD:
        ell = spec.corr_length if spec.corr_length is not None else d / 4.0
        if ell <= 0:
            raise ParameterError("corr_length must be positive")
        grid = np.arange(d, dtype=np.float64)
        K = np.exp(-0.5 * ((grid[:, None] - grid[None, :]) / ell) ** 2) + 1e-8 * np.eye(d)
        L = cholesky(K, lower=True)
        g = gen.standard_normal((n, d)) @ L.T
        if spec.nonlinearity == "tanh":
            g = np.tanh(spec.gain * g)
        elif spec.nonlinearity == "none":
            g = spec.gain * g
        else:
            raise ParameterError(f"unknown nonlinearity {spec.nonlinearity!r}")
        return Dataset(g, Modality.GENERIC)

    raise ParameterError(f"unknown family {spec.family!r}")


# ---------------------------------------------------------------- configs


@dataclass(frozen=True)
class ScheduleConfig:
    schedule: str = "linear"
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def build(self) -> NoiseSchedule:
        if self.schedule == "linear":
            return make_linear_schedule(self.T, self.beta_start, self.beta_end)
        if self.schedule == "cosine":
            return make_cosine_schedule(self.T)
        raise ParameterError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class TruncationConfig:
    tau: int = 25
    significance: float = 0.05
    pass_threshold: float = 0.95
    stride: int = 10
    max_samples: int | None = 10_000
    covariance_gate: bool = True
    scan_seed: int | None = None


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 10_000
    denoiser: str = "auto"
    fit_pairs: int = 100_000
    timing_repeats: int = 5
    timing_batch: int | None = None
    sample_seed: int | None = None


_SECTIONS = (SyntheticSpec, ScheduleConfig, TruncationConfig, SamplerConfig)


def split_config(flat: dict) -> tuple[SyntheticSpec, ScheduleConfig, TruncationConfig, SamplerConfig]:
    """Build the four config objects from one flat key/value mapping."""
    owners = {f.name: cls for cls in _SECTIONS for f in dataclasses.fields(cls)}
    unknown = sorted(set(flat) - set(owners))
    if unknown:
        raise ParameterError(f"unknown configuration keys: {', '.join(unknown)}")
    parts = {cls: {} for cls in _SECTIONS}
    for k, v in flat.items():
        if isinstance(v, list):
            v = tuple(v)
        parts[owners[k]][k] = v
    try:
        return tuple(cls(**parts[cls]) for cls in _SECTIONS)
    except (TypeError, ValueError) as exc:
        raise ParameterError(str(exc)) from None


def flatten_config(*configs) -> dict:
    out = {}
    for c in configs:
        d = dataclasses.asdict(c)
        if isinstance(c, SyntheticSpec):
            d["family"] = c.family.value
        out.update(d)
    return out


# ---------------------------------------------------------------- pipeline


@dataclass
class BenchmarkReport:
    spec: SyntheticSpec
    stats: DatasetStats
    decision: TruncationDecision
    comparison: ComparisonReport
    denoiser_id: str
    provenance: dict
    weight_recovery: dict | None = None
    variance_path: VariancePath | None = field(default=None, repr=False)

    @property
    def speedup(self) -> float:
        return self.comparison.speedup

    def to_dict(self, include_timing: bool = True) -> dict:
        comp = self.comparison.to_dict()
        if not include_timing:
            for k in ("time_per_sample_full", "time_per_sample_truncated", "time_ratio", "speedup"):
                comp.pop(k)
        return {
            "spec": self.spec.to_dict(),
            "stats": self.stats.to_dict(),
            "decision": self.decision.to_dict(),
            "quality": comp,
            "weight_recovery": self.weight_recovery,
            "denoiser": self.denoiser_id,
            "steps": {"full": self.decision.T, "truncated": self.decision.t_star},
            "provenance": self.provenance,
        }


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError(name, exc) from exc


def build_denoiser(spec: SyntheticSpec, kind: str, dataset: Dataset, schedule: NoiseSchedule, seed: int, fit_pairs: int) -> Denoiser:
    if kind == "auto":
        kind = "gmm-analytic" if spec.family is Family.GMM else "linear"
    if kind == "gmm-analytic":
        if spec.family is not Family.GMM:
            raise ParameterError("the analytic denoiser is only available for the gmm family")
        return GmmDenoiser(gmm_spec_for(spec))
    if kind == "linear":
        return fit_linear_denoiser(dataset, schedule, range(1, schedule.T + 1), seed=seed, n_pairs=fit_pairs)
    if kind == "zero":
        return ZeroDenoiser()
    raise ParameterError(f"unknown denoiser {kind!r}")


def run_pipeline(
    spec: SyntheticSpec,
    schedule_cfg: ScheduleConfig = ScheduleConfig(),
    trunc_cfg: TruncationConfig = TruncationConfig(),
    sampler_cfg: SamplerConfig = SamplerConfig(),
    out_dir: str | Path | None = None,
) -> BenchmarkReport:
    """center -> stats -> variance path -> T* scan -> denoiser -> paired sampling.

    Any failure is re-raised as :class:`StageError` naming the stage. With
    ``out_dir`` every intermediate artefact is written there.
    """
    scan_seed = spec.seed if trunc_cfg.scan_seed is None else trunc_cfg.scan_seed
    sample_seed = spec.seed if sampler_cfg.sample_seed is None else sampler_cfg.sample_seed

    schedule = _stage("schedule", schedule_cfg.build)
    raw = _stage("generate", generate, spec)
    data = _stage("center", center, raw)
    stats = _stage("stats", compute_stats, data)
    vpath = _stage("variance", propagate_variance, stats, schedule)
    decision = _stage(
        "tstar", select_t_star, data, schedule, vpath,
        tau=trunc_cfg.tau, significance=trunc_cfg.significance, pass_threshold=trunc_cfg.pass_threshold,
        stride=trunc_cfg.stride, seed=scan_seed, max_samples=trunc_cfg.max_samples,
        covariance_gate=trunc_cfg.covariance_gate,
    )
    denoiser = _stage("denoiser", build_denoiser, spec, sampler_cfg.denoiser, data, schedule, sample_seed, sampler_cfg.fit_pairs)
    comparison = _stage(
        "sample", compare_full_vs_truncated, denoiser, schedule, decision, vpath, sampler_cfg.n_samples,
        seed=sample_seed, timing_repeats=sampler_cfg.timing_repeats, timing_batch=sampler_cfg.timing_batch, d=spec.d,
    )

    weight_recovery = None
    if isinstance(denoiser, GmmDenoiser) and comparison.status == "ok":
        gmm = denoiser.gmm
        weight_recovery = {
            "weights": gmm.weights.tolist(),
            "full": (np.bincount(gmm.nearest_component(comparison.full.data), minlength=gmm.K) / comparison.n).tolist(),
            "truncated": (np.bincount(gmm.nearest_component(comparison.truncated.data), minlength=gmm.K) / comparison.n).tolist(),
        }

    provenance = {
        "config": flatten_config(spec, schedule_cfg, trunc_cfg, sampler_cfg),
        "data_seed": spec.seed,
        "scan_seed": scan_seed,
        "sample_seed": sample_seed,
        "schedule_fingerprint": schedule.fingerprint(),
        "decision_fingerprint": decision.schedule_fingerprint,
    }
    report = BenchmarkReport(spec, stats, decision, comparison, denoiser.id, provenance, weight_recovery, vpath)
    if out_dir is not None:
        write_pipeline_outputs(Path(out_dir), report, data, schedule)
    return report


def write_pipeline_outputs(out: Path, report: BenchmarkReport, data: Dataset, schedule: NoiseSchedule) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = report.provenance["config"]
    io.write_binary_matrix(out / "dataset_centered.bin", data.data)
    io.write_json(out / "schedule.json", schedule.to_dict())
    io.write_json(out / "stats.json", {**report.stats.to_dict(), "config": cfg})
    io.write_json(out / "variance_path.json", {"v_tilde": report.variance_path.v_tilde, "config": cfg})
    io.write_json(out / "decision.json", {**report.decision.to_dict(), "config": cfg})
    for name in ("full", "truncated"):
        batch = getattr(report.comparison, name)
        if batch is not None:
            io.write_binary_matrix(out / f"samples_{name}.bin", batch.data)
            io.write_json(out / f"samples_{name}.json", {**batch.provenance, "config": cfg})
    io.write_json(out / "report.json", report.to_dict())


def family_curve(
    spec: SyntheticSpec, schedule: NoiseSchedule, probe_steps, seed: int | None = None, **kwargs
) -> GaussianityReport:
    """Gaussianity diagnostics along ``probe_steps`` for one synthetic family."""
    data = center(generate(spec))
    vpath = propagate_variance(compute_stats(data), schedule)
    return gaussianity_curve(data, schedule, vpath, probe_steps, seed=spec.seed if seed is None else seed, **kwargs)


def modality_t_stars(
    families, d: int, schedule: NoiseSchedule, trunc_cfg: TruncationConfig = TruncationConfig(), n: int = 10_000, seed: int = 0, **overrides
) -> dict[str, TruncationDecision]:
    """T* for several families at matched ``d`` under one schedule."""
    out = {}
    for fam in families:
        spec = SyntheticSpec(family=fam, n=n, d=d, seed=seed, **overrides.get(Family(fam).value, {}))
        data = center(generate(spec))
        vpath = propagate_variance(compute_stats(data), schedule)
        out[Family(fam).value] = select_t_star(
            data, schedule, vpath, tau=trunc_cfg.tau, significance=trunc_cfg.significance,
            pass_threshold=trunc_cfg.pass_threshold, stride=trunc_cfg.stride, seed=seed,
            max_samples=trunc_cfg.max_samples, covariance_gate=trunc_cfg.covariance_gate,
        )
    return out
