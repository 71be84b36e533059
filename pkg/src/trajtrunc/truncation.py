"""Choosing the truncation step and drawing from the reference Gaussian."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import ParameterError, StepRangeError
from .gaussianity import (
    CovarianceResult,
    KsResult,
    covariance_test,
    ks_statistic,
    probe_sample,
    require_centered,
)
from .schedule import NoiseSchedule, forward_marginal
from .stats import Dataset, VariancePath

DEFAULT_TAU = 25
DEFAULT_SIGNIFICANCE = 0.05
DEFAULT_PASS_THRESHOLD = 0.95
DEFAULT_STRIDE = 10
DEFAULT_MAX_SAMPLES = 10_000


@dataclass(frozen=True)
class ScanPoint:
    t: int
    mean_D: float
    pass_fraction: float
    cov_deviation: float | None = None
    cov_critical: float | None = None


@dataclass(frozen=True)
class TruncationDecision:
    t_star: int
    T: int
    tau: int
    significance: float
    pass_threshold: float
    stride: int
    fallback: bool
    evidence: tuple[KsResult, KsResult] | None
    schedule_fingerprint: str
    seed: int
    max_samples: int | None
    scan: tuple[ScanPoint, ...] = ()
    # probed steps after t_star that fail the criterion (a non-monotone pass)
    violations: tuple[int, ...] = field(default=())
    covariance_gate: bool = False
    cov_evidence: tuple[CovarianceResult, CovarianceResult] | None = None

    @property
    def steps_saved(self) -> int:
        return self.T - self.t_star

    def pass_fraction_at(self, t: int) -> float:
        for p in self.scan:
            if p.t == t:
                return p.pass_fraction
        raise KeyError(t)

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "T": self.T,
            "tau": self.tau,
            "significance": self.significance,
            "pass_threshold": self.pass_threshold,
            "stride": self.stride,
            "fallback": self.fallback,
            "seed": self.seed,
            "max_samples": self.max_samples,
            "schedule_fingerprint": self.schedule_fingerprint,
            "violations": list(self.violations),
            "covariance_gate": self.covariance_gate,
            "cov_evidence": [c.to_dict() for c in self.cov_evidence] if self.cov_evidence else None,
            "evidence": [k.to_dict() for k in self.evidence] if self.evidence else None,
            "scan": [
                {
                    "t": p.t,
                    "mean_D": p.mean_D,
                    "pass_fraction": p.pass_fraction,
                    "cov_deviation": p.cov_deviation,
                    "cov_critical": p.cov_critical,
                }
                for p in self.scan
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TruncationDecision:
        evidence = None
        if doc.get("evidence"):
            evidence = tuple(
                KsResult(
                    per_dim_D=np.asarray(e["per_dim_D"]),
                    mean_D=e["mean_D"],
                    pass_fraction=e["pass_fraction"],
                    critical_value=e["critical_value"],
                    n_used=e["n_used"],
                    significance=e.get("significance", doc["significance"]),
                )
                for e in doc["evidence"]
            )
        cov_evidence = None
        if doc.get("cov_evidence"):
            cov_evidence = tuple(
                CovarianceResult(c["deviation"], c["critical_value"], c["significance"], c["n_used"])
                for c in doc["cov_evidence"]
            )

        def _f(v):
            return None if v is None else float(v)

        return cls(
            t_star=int(doc["t_star"]),
            T=int(doc["T"]),
            tau=int(doc["tau"]),
            significance=float(doc["significance"]),
            pass_threshold=float(doc["pass_threshold"]),
            stride=int(doc["stride"]),
            fallback=bool(doc["fallback"]),
            evidence=evidence,
            schedule_fingerprint=doc["schedule_fingerprint"],
            seed=int(doc["seed"]),
            max_samples=doc.get("max_samples"),
            scan=tuple(
                ScanPoint(int(p["t"]), p["mean_D"], p["pass_fraction"], _f(p.get("cov_deviation")), _f(p.get("cov_critical")))
                for p in doc.get("scan", [])
            ),
            violations=tuple(doc.get("violations", [])),
            covariance_gate=bool(doc.get("covariance_gate", False)),
            cov_evidence=cov_evidence,
        )


def select_t_star(
    dataset: Dataset,
    schedule: NoiseSchedule,
    variance_path: VariancePath,
    tau: int = DEFAULT_TAU,
    significance: float = DEFAULT_SIGNIFICANCE,
    pass_threshold: float = DEFAULT_PASS_THRESHOLD,
    stride: int = DEFAULT_STRIDE,
    seed: int = 0,
    max_samples: int | None = DEFAULT_MAX_SAMPLES,
    covariance_gate: bool = False,
) -> TruncationDecision:
    """Earliest probed ``t`` at which the Gaussianity criterion holds at both
    ``t`` and ``t + tau``; ``t_star = T`` (fallback) when no probe qualifies.

    The criterion is that at least ``pass_threshold`` of the coordinates pass
    a one-sample KS test against ``N(0, v_tilde_t)``. With
    ``covariance_gate`` the second-moment matrix must in addition be
    indistinguishable from ``v_tilde_t I`` at the same significance; the
    coordinate-wise KS test alone cannot see cross-coordinate structure.

    Probes are ``stride, 2 stride, ...`` up to ``T - tau``. All probes share
    one subsample and one noise draw, so the scan follows a single forward
    path and refining ``stride`` can only move ``t_star`` earlier.
    """
    T = schedule.T
    if int(tau) != tau or tau < 1:
        raise ParameterError(f"tau must be a positive integer, got {tau}")
    if tau >= T:
        raise ParameterError(f"tau={tau} must be smaller than T={T}")
    if int(stride) != stride or stride < 1:
        raise ParameterError(f"stride must be a positive integer, got {stride}")
    if not 0 < pass_threshold <= 1:
        raise ParameterError(f"pass threshold must lie in (0, 1], got {pass_threshold}")
    if variance_path.T != T:
        raise ParameterError("variance path and schedule disagree on T")
    require_centered(dataset)

    x0, eps = probe_sample(dataset, max_samples, seed)
    cache: dict[int, tuple[KsResult, CovarianceResult | None]] = {}

    def probe(t: int):
        if t not in cache:
            xt = forward_marginal(schedule, x0, t, seed, noise=eps)
            ks = ks_statistic(xt, variance_path[t], significance)
            cov = covariance_test(xt, variance_path[t], significance) if covariance_gate else None
            cache[t] = (ks, cov)
        return cache[t]

    def ok(t: int) -> bool:
        ks, cov = probe(t)
        return ks.passes(pass_threshold) and (cov is None or cov.passes)

    grid = list(range(stride, T - tau + 1, stride))
    t_star = next((t for t in grid if ok(t) and ok(t + tau)), None)

    scan = []
    for t in grid:
        ks, cov = probe(t)
        scan.append(ScanPoint(
            t, ks.mean_D, ks.pass_fraction,
            cov.deviation if cov else None, cov.critical_value if cov else None,
        ))
    common = dict(
        T=T, tau=tau, significance=significance, pass_threshold=pass_threshold, stride=stride,
        schedule_fingerprint=schedule.fingerprint(), seed=seed, max_samples=max_samples,
        scan=tuple(scan), covariance_gate=covariance_gate,
    )
    if t_star is None:
        return TruncationDecision(t_star=T, fallback=True, evidence=None, **common)
    first, second = probe(t_star), probe(t_star + tau)
    return TruncationDecision(
        t_star=t_star,
        fallback=False,
        evidence=(first[0], second[0]),
        cov_evidence=(first[1], second[1]) if covariance_gate else None,
        violations=tuple(t for t in grid if t > t_star and not ok(t)),
        **common,
    )


def truncated_prior(variance_path: VariancePath, t_star: int, shape: tuple[int, int], seed: int) -> np.ndarray:
    """iid draws from ``N(0, v_tilde[t_star] I)``."""
    if isinstance(t_star, bool) or int(t_star) != t_star or not 1 <= t_star <= variance_path.T:
        raise StepRangeError(f"t_star {t_star!r} outside 1..{variance_path.T}")
    scale = math.sqrt(variance_path[t_star])
    return scale * _rng.make_rng(seed, _rng.PRIOR).standard_normal(shape)
