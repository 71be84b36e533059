"""Reverse-time generation: exact Gaussian posteriors, plug-in denoisers and
ancestral sampling from either the full or the truncated start."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import rng as _rng
from .errors import ParameterError
from .gaussianity import ks_two_sample
from .schedule import NoiseSchedule
from .stats import Dataset
from .truncation import TruncationDecision, truncated_prior


@dataclass(frozen=True)
class ReverseStepParams:
    """``q(x_{t-1} | x_t, x_0) = N(coeff_x0 x_0 + coeff_xt x_t, posterior_var I)``."""

    t: int
    posterior_mean_coeff_x0: float
    posterior_mean_coeff_xt: float
    posterior_var: float


def posterior_params(schedule: NoiseSchedule, t: int) -> ReverseStepParams:
    t = schedule.check_step(t)
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t - 1]
    beta = schedule.beta[t - 1]
    denom = 1.0 - ab_t
    return ReverseStepParams(
        t=t,
        posterior_mean_coeff_x0=math.sqrt(ab_prev) * beta / denom,
        posterior_mean_coeff_xt=math.sqrt(1.0 - beta) * (1.0 - ab_prev) / denom,
        posterior_var=max((1.0 - ab_prev) * beta / denom, 0.0),
    )


@dataclass(frozen=True)
class SampleBatch:
    data: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.data.shape


# ---------------------------------------------------------------- denoisers


@dataclass(frozen=True)
class GmmSpec:
    """Isotropic Gaussian mixture ``sum_k w_k N(mu_k, v_k I)``.

    Each mean row sums to zero, so every component (and the mixture) is
    invariant under per-sample centering in expectation. ``v_k = 0`` gives a
    point mass.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        v = np.asarray(self.variances, dtype=np.float64).ravel()
        if not (w.size == mu.shape[0] == v.size):
            raise ParameterError("weights, means and variances disagree on the number of components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError(f"weights must be a probability vector, sum={w.sum()!r}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ParameterError("component variances must be finite and non-negative")
        if np.any(np.abs(mu.sum(axis=1)) > 1e-9 * max(1.0, np.abs(mu).max())):
            raise ParameterError("each component mean must sum to zero across coordinates")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", v)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def K(self) -> int:
        return self.weights.size

    def sample(self, n: int, seed: int, return_labels: bool = False):
        gen = _rng.make_rng(seed, _rng.DATA)
        labels = gen.choice(self.K, size=n, p=self.weights)
        x = self.means[labels] + np.sqrt(self.variances[labels])[:, None] * gen.standard_normal((n, self.d))
        return (x, labels) if return_labels else x

    def nearest_component(self, x: np.ndarray) -> np.ndarray:
        d2 = ((x[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=-1)
        return d2.argmin(axis=1)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "variances": self.variances.tolist()}


class Denoiser:
    """Maps ``(x_t, t)`` to an estimate of ``x_0``."""

    variant = "base"

    def predict(self, x_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        raise NotImplementedError

    @property
    def id(self) -> str:
        return self.variant


class ZeroDenoiser(Denoiser):
    variant = "zero"

    def predict(self, x_t, t, schedule):
        return np.zeros_like(x_t)


class GmmDenoiser(Denoiser):
    """Exact ``E[x_0 | x_t]`` when ``x_0`` follows a :class:`GmmSpec`."""

    variant = "gmm-analytic"

    def __init__(self, gmm: GmmSpec):
        self.gmm = gmm

    def predict(self, x_t, t, schedule):
        ab = schedule.alpha_bar[t]
        sab = math.sqrt(ab)
        mu, v, w = self.gmm.means, self.gmm.variances, self.gmm.weights
        s2 = ab * v + (1.0 - ab)  # marginal variance of x_t within component k
        d = x_t.shape[1]
        resid = x_t[:, None, :] - sab * mu[None, :, :]  # (n, K, d)
        sq = np.einsum("nkd,nkd->nk", resid, resid)
        log_r = np.log(np.where(w > 0, w, 1e-300)) - 0.5 * d * np.log(s2) - 0.5 * sq / s2
        log_r -= logsumexp(log_r, axis=1, keepdims=True)
        r = np.exp(log_r)
        gain = sab * v / s2
        comp_mean = mu[None, :, :] + gain[None, :, None] * resid
        return np.einsum("nk,nkd->nd", r, comp_mean)

    @property
    def id(self) -> str:
        return f"gmm-analytic(K={self.gmm.K},d={self.gmm.d})"


class LinearDenoiser(Denoiser):
    """``x0_hat = c_t x_t`` with one scalar per fitted step."""

    variant = "linear-per-step"

    def __init__(self, coefficients: dict[int, float]):
        if not coefficients:
            raise ParameterError("linear denoiser needs at least one coefficient")
        self.coefficients = {int(t): float(c) for t, c in coefficients.items()}

    def predict(self, x_t, t, schedule):
        try:
            return self.coefficients[t] * x_t
        except KeyError:
            raise ParameterError(f"linear denoiser was not fitted at step {t}") from None

    @property
    def steps(self) -> list[int]:
        return sorted(self.coefficients)

    @property
    def id(self) -> str:
        s = self.steps
        return f"linear-per-step({s[0]}..{s[-1]},{len(s)} steps)"


def denoise(denoiser: Denoiser, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
    t = schedule.check_step(t)
    x = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    return denoiser.predict(x, t, schedule)


def fit_linear_denoiser(
    dataset: Dataset, schedule: NoiseSchedule, steps, seed: int = 0, n_pairs: int = 100_000
) -> LinearDenoiser:
    """Closed-form minimiser of ``E||x_0 - c_t x_t||^2`` at every step.

    Each step draws its own ``n_pairs`` (row, noise) pairs from a stream keyed
    by the step, so the coefficient at ``t`` does not depend on which other
    steps are fitted.
    """
    steps = sorted({schedule.check_step(t) for t in steps})
    if not steps:
        raise ParameterError("no steps to fit")
    x = dataset.data
    coeffs = {}
    for t in steps:
        gen = _rng.make_rng(seed, _rng.FIT, t)
        x0 = x[gen.integers(0, x.shape[0], size=n_pairs)]
        ab = schedule.alpha_bar[t]
        xt = math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * gen.standard_normal(x0.shape)
        coeffs[t] = float(np.sum(x0 * xt) / np.sum(xt * xt))
    return LinearDenoiser(coeffs)


# ---------------------------------------------------------------- sampling


def ancestral_sample(
    denoiser: Denoiser, schedule: NoiseSchedule, start_step: int, initial, seed: int
) -> SampleBatch:
    """Run ``x_{t-1} ~ N(mu_t(x_t, x0_hat), var_t I)`` from ``start_step`` to 0.

    Noise at step ``t`` comes from a stream keyed by ``(seed, t)``; a run that
    starts lower shares its per-step noise with one that starts higher.
    """
    start_step = schedule.check_step(start_step)
    x = np.array(initial, dtype=np.float64, copy=True)
    if x.ndim != 2:
        raise ParameterError(f"initial batch must be n x d, got shape {x.shape}")
    if isinstance(denoiser, GmmDenoiser) and x.shape[1] != denoiser.gmm.d:
        raise ParameterError(f"batch has d={x.shape[1]} but the mixture has d={denoiser.gmm.d}")
    for t in range(start_step, 0, -1):
        p = posterior_params(schedule, t)
        if x.shape[0]:
            x0_hat = denoiser.predict(x, t, schedule)
            x = p.posterior_mean_coeff_x0 * x0_hat + p.posterior_mean_coeff_xt * x
        if t > 1 and p.posterior_var > 0:
            z = _rng.make_rng(seed, _rng.REVERSE, t).standard_normal(x.shape)
            x += math.sqrt(p.posterior_var) * z
    return SampleBatch(
        data=x,
        provenance={
            "seed": seed,
            "schedule_fingerprint": schedule.fingerprint(),
            "start_step": start_step,
            "denoiser": denoiser.id,
            "n_steps": start_step,
        },
    )


def reverse_variance_chain(schedule: NoiseSchedule, start_step: int, initial_var: float) -> float:
    """Per-coordinate output variance of the ancestral chain under the zero
    denoiser: ``Var_{t-1} = coeff_xt^2 Var_t + var_t``."""
    v = float(initial_var)
    for t in range(schedule.check_step(start_step), 0, -1):
        p = posterior_params(schedule, t)
        v = p.posterior_mean_coeff_xt**2 * v + (p.posterior_var if t > 1 else 0.0)
    return v


@dataclass
class ComparisonReport:
    status: str
    reason: str = ""
    n: int = 0
    t_star: int = 0
    T: int = 0
    ks_per_dim: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_gap: float = 0.0
    var_gap: float = 0.0
    time_full: float = float("nan")
    time_truncated: float = float("nan")
    full: SampleBatch | None = None
    truncated: SampleBatch | None = None

    @property
    def ks_max(self) -> float:
        return float(self.ks_per_dim.max()) if self.ks_per_dim.size else 0.0

    @property
    def time_ratio(self) -> float:
        return self.time_truncated / self.time_full if self.time_full > 0 else float("nan")

    @property
    def speedup(self) -> float:
        return self.time_full / self.time_truncated if self.time_truncated > 0 else float("nan")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "reason": self.reason,
            "n": self.n,
            "t_star": self.t_star,
            "T": self.T,
            "ks_per_dim": self.ks_per_dim.tolist(),
            "ks_max": self.ks_max,
            "mean_gap": self.mean_gap,
            "var_gap": self.var_gap,
            "time_per_sample_full": self.time_full,
            "time_per_sample_truncated": self.time_truncated,
            "time_ratio": self.time_ratio,
            "expected_time_ratio": self.t_star / self.T if self.T else float("nan"),
            "speedup": self.speedup,
        }


def _timed_per_sample(fn, n: int, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) / n


def compare_full_vs_truncated(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    decision: TruncationDecision,
    variance_path,
    n: int,
    seed: int = 0,
    timing_repeats: int = 5,
    timing_batch: int | None = None,
    d: int | None = None,
) -> ComparisonReport:
    """Generate ``n`` samples from the full chain (start ``T``, ``N(0, I)``) and
    from the truncated chain (start ``t_star``, reference Gaussian), sharing
    per-step noise, then compare them and time both runs."""
    T = schedule.T
    if decision.fallback:
        return ComparisonReport(status="no-op", reason="fallback decision: no truncation to compare", T=T, t_star=T)
    if decision.schedule_fingerprint != schedule.fingerprint():
        raise ParameterError("decision was made under a different schedule")
    if d is None:
        d = denoiser.gmm.d if isinstance(denoiser, GmmDenoiser) else len(decision.evidence[0].per_dim_D)
    if n == 0:
        return ComparisonReport(status="empty", reason="n = 0", t_star=decision.t_star, T=T)
    t_star = decision.t_star
    init = _rng.make_rng(seed, _rng.PRIOR).standard_normal((n, d))

    def run_full(m=n):
        return ancestral_sample(denoiser, schedule, T, init[:m], seed)

    def run_trunc(m=n):
        return ancestral_sample(denoiser, schedule, t_star, truncated_prior(variance_path, t_star, (m, d), seed), seed)

    full, trunc = run_full(), run_trunc()
    m = min(n, timing_batch or n)
    time_full = _timed_per_sample(lambda: run_full(m), m, timing_repeats)
    time_trunc = _timed_per_sample(lambda: run_trunc(m), m, timing_repeats)
    a, b = full.data, trunc.data
    return ComparisonReport(
        status="ok",
        n=n,
        t_star=t_star,
        T=T,
        ks_per_dim=ks_two_sample(a, b),
        mean_gap=float(np.max(np.abs(a.mean(axis=0) - b.mean(axis=0)))),
        var_gap=float(np.max(np.abs(a.var(axis=0) - b.var(axis=0)))),
        time_full=time_full,
        time_truncated=time_trunc,
        full=full,
        truncated=trunc,
    )
