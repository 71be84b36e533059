"""How Gaussian is ``x_t``?

Three diagnostics, all dimension-wise or pairwise:

* one-sample Kolmogorov-Smirnov distance of every coordinate against
  ``N(0, v_tilde_t)`` (this one gates truncation);
* binned mutual information between coordinates and between samples;
* standardized third and fourth k-statistics.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import wishart

from . import rng as _rng
from .errors import ContractError, DataError, ParameterError
from .schedule import NoiseSchedule, forward_marginal
from .stats import CENTERED_TOL, Dataset, VariancePath

MIN_KS_SAMPLES = 50
MI_MAX_PAIRS = 256
MI_NOISE_FLOOR = 0.01


def _as_matrix(samples) -> np.ndarray:
    x = np.asarray(getattr(samples, "data", samples), dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ParameterError(f"expected an n x d batch, got shape {x.shape}")
    return x


# ---------------------------------------------------------------- KS


@dataclass(frozen=True)
class KsResult:
    per_dim_D: np.ndarray
    mean_D: float
    pass_fraction: float
    critical_value: float
    n_used: int
    significance: float = 0.05

    def passes(self, threshold: float) -> bool:
        return self.pass_fraction >= threshold

    def to_dict(self) -> dict:
        return {
            "mean_D": self.mean_D,
            "pass_fraction": self.pass_fraction,
            "critical_value": self.critical_value,
            "n_used": self.n_used,
            "significance": self.significance,
            "per_dim_D": self.per_dim_D.tolist(),
        }


def ks_critical_value(n: int, significance: float) -> float:
    """Asymptotic one-sample KS critical value ``sqrt(-ln(alpha/2) / 2n)``."""
    if not 0 < significance < 1:
        raise ParameterError(f"significance must lie in (0, 1), got {significance}")
    return math.sqrt(-math.log(significance / 2.0) / (2.0 * n))


def ks_distances(x: np.ndarray, cdf) -> np.ndarray:
    """Column-wise ``sup_x |F_n(x) - cdf(x)|`` for a right-continuous ECDF.

    The supremum is attained at a sample point, either just at it or just
    before it, so it is evaluated exactly from the sorted columns.
    """
    xs = np.sort(x, axis=0)
    n = xs.shape[0]
    F = cdf(xs)
    i = np.arange(1, n + 1, dtype=np.float64)[:, None]
    upper = np.max(i / n - F, axis=0)
    lower = np.max(F - (i - 1) / n, axis=0)
    return np.maximum(upper, lower)


def ks_statistic(samples, target_variance: float, significance: float = 0.05) -> KsResult:
    x = _as_matrix(samples)
    if not target_variance > 0:
        raise ParameterError(f"target variance must be positive, got {target_variance}")
    n = x.shape[0]
    if n < MIN_KS_SAMPLES:
        raise ContractError(f"KS test needs at least {MIN_KS_SAMPLES} samples per dimension, got {n}")
    scale = math.sqrt(target_variance)
    D = ks_distances(x, lambda v: ndtr(v / scale))
    crit = ks_critical_value(n, significance)
    return KsResult(
        per_dim_D=D,
        mean_D=float(D.mean()),
        pass_fraction=float(np.mean(D <= crit)),
        critical_value=crit,
        n_used=n,
        significance=significance,
    )


def ks_two_sample(a, b) -> np.ndarray:
    """Per-dimension two-sample KS distance between batches ``a`` and ``b``."""
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ParameterError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros(a.shape[1])
    out = np.empty(a.shape[1])
    na, nb = a.shape[0], b.shape[0]
    for j in range(a.shape[1]):
        sa, sb = np.sort(a[:, j]), np.sort(b[:, j])
        grid = np.concatenate([sa, sb])
        Fa = np.searchsorted(sa, grid, side="right") / na
        Fb = np.searchsorted(sb, grid, side="right") / nb
        out[j] = np.max(np.abs(Fa - Fb))
    return out


# ---------------------------------------------------------------- covariance


@dataclass(frozen=True)
class CovarianceResult:
    """Spectral-norm distance between the second-moment matrix of ``x_t``
    (about the known mean 0) and ``target_variance * I``, in units of the
    target variance, with its null critical value."""

    deviation: float
    critical_value: float
    significance: float
    n_used: int

    @property
    def passes(self) -> bool:
        return self.deviation <= self.critical_value

    def to_dict(self) -> dict:
        return {**asdict(self), "passes": self.passes}


_COV_NULL_CACHE: dict[tuple[int, int, float, int], float] = {}
COV_NULL_DRAWS = 2000


def covariance_critical_value(n: int, d: int, significance: float, draws: int = COV_NULL_DRAWS) -> float:
    """Upper ``significance`` quantile of ``||W/n - I||_2`` for ``W ~ Wishart(n, I_d)``.

    Estimated by simulation from a fixed stream and cached per ``(n, d)``.
    """
    key = (n, d, significance, draws)
    if key not in _COV_NULL_CACHE:
        gen = _rng.make_rng(n, d, draws)
        W = wishart(df=n, scale=np.eye(d)).rvs(size=draws, random_state=gen).reshape(draws, d, d)
        eig = np.linalg.eigvalsh(W / n - np.eye(d))
        dev = np.max(np.abs(eig), axis=1)
        _COV_NULL_CACHE[key] = float(np.quantile(dev, 1.0 - significance))
    return _COV_NULL_CACHE[key]


def covariance_test(samples, target_variance: float, significance: float = 0.05) -> CovarianceResult:
    x = _as_matrix(samples)
    if not target_variance > 0:
        raise ParameterError(f"target variance must be positive, got {target_variance}")
    n, d = x.shape
    if n < MIN_KS_SAMPLES:
        raise ContractError(f"covariance test needs at least {MIN_KS_SAMPLES} samples, got {n}")
    S = (x.T @ x) / (n * target_variance)
    dev = float(np.max(np.abs(np.linalg.eigvalsh(S - np.eye(d)))))
    return CovarianceResult(dev, covariance_critical_value(n, d, significance), significance, n)


# ---------------------------------------------------------------- MI


@dataclass(frozen=True)
class MiResult:
    mi_rows: float
    mi_cols: float
    estimator_tag: str = "equal-frequency-plugin-mm"
    skipped_pairs: int = 0
    n_pairs: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _n_bins(n: int) -> int:
    return max(2, math.ceil(n ** (1.0 / 3.0) - 1e-9))


def _quantile_bins(v: np.ndarray, n_bins: int, tiebreak: np.ndarray) -> np.ndarray:
    # random tie-breaking keeps discrete columns from borrowing structure
    # from the row order
    order = np.lexsort((tiebreak, v))
    ranks = np.empty(v.size, dtype=np.int64)
    ranks[order] = np.arange(v.size)
    return ranks * n_bins // v.size


def binned_mi(x: np.ndarray, y: np.ndarray, n_bins: int | None = None, seed: int = 0) -> float:
    """Plug-in mutual information (nats) on an equal-frequency grid, with the
    Miller-Madow correction applied to each of the three entropies."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n = x.size
    if y.size != n:
        raise ParameterError("x and y must have the same length")
    if n_bins is None:
        n_bins = _n_bins(n)
    gen = _rng.make_rng(seed, _rng.MI_PAIRS)
    bx = _quantile_bins(x, n_bins, gen.random(n))
    by = _quantile_bins(y, n_bins, gen.random(n))
    joint = np.bincount(bx * n_bins + by, minlength=n_bins * n_bins).astype(np.float64)

    def entropy(counts):
        c = counts[counts > 0]
        p = c / n
        return -np.sum(p * np.log(p)) + (c.size - 1) / (2.0 * n)

    hx = entropy(np.bincount(bx, minlength=n_bins).astype(np.float64))
    hy = entropy(np.bincount(by, minlength=n_bins).astype(np.float64))
    return float(hx + hy - entropy(joint))


def mutual_information(samples, seed: int = 0, max_pairs: int = MI_MAX_PAIRS) -> MiResult:
    """Average pairwise MI within samples (between coordinates) and across
    samples (between disjoint halves of each coordinate's column).

    Constant coordinates carry no dependence information; pairs touching one
    are skipped and counted in ``skipped_pairs``.
    """
    x = _as_matrix(samples)
    n, d = x.shape
    if d < 2:
        raise ContractError("mutual information needs at least two coordinates")
    gen = _rng.make_rng(seed, _rng.MI_PAIRS)
    const = np.ptp(x, axis=0) == 0

    all_pairs = d * (d - 1) // 2
    if all_pairs <= max_pairs:
        jj, kk = np.triu_indices(d, k=1)
    else:
        jj = gen.integers(0, d, size=max_pairs)
        kk = (jj + gen.integers(1, d, size=max_pairs)) % d
    skipped = 0
    row_vals = []
    for i, (j, k) in enumerate(zip(jj, kk)):
        if const[j] or const[k]:
            skipped += 1
            continue
        row_vals.append(binned_mi(x[:, j], x[:, k], seed=seed + 1 + i))

    col_vals = []
    half = n // 2
    if half >= 2:
        dims = np.arange(d) if d <= max_pairs else gen.choice(d, size=max_pairs, replace=False)
        for i, j in enumerate(dims):
            if const[j]:
                skipped += 1
                continue
            perm = gen.permutation(n)
            col_vals.append(binned_mi(x[perm[:half], j], x[perm[half : 2 * half], j], seed=seed + 7919 + i))

    return MiResult(
        mi_rows=float(np.mean(row_vals)) if row_vals else 0.0,
        mi_cols=float(np.mean(col_vals)) if col_vals else 0.0,
        skipped_pairs=skipped,
        n_pairs=len(row_vals) + len(col_vals),
    )


# ---------------------------------------------------------------- cumulants


@dataclass(frozen=True)
class CumulantTrace:
    k3: float
    k4: float

    def to_dict(self) -> dict:
        return asdict(self)


def k_statistics(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unbiased cumulant estimates ``(k2, k3, k4)`` for every column."""
    x = _as_matrix(x)
    n = x.shape[0]
    if n < 4:
        raise ContractError(f"fourth k-statistic needs n >= 4, got {n}")
    c = x - x.mean(axis=0)
    c2 = c * c
    m2 = c2.mean(axis=0)
    m3 = (c2 * c).mean(axis=0)
    m4 = (c2 * c2).mean(axis=0)
    k2 = n * m2 / (n - 1)
    k3 = n * n * m3 / ((n - 1) * (n - 2))
    k4 = n * n * ((n + 1) * m4 - 3 * (n - 1) * m2 * m2) / ((n - 1) * (n - 2) * (n - 3))
    return k2, k3, k4


def standardized_cumulants(samples) -> tuple[np.ndarray, np.ndarray]:
    """Per-column ``k3 / k2^1.5`` and ``k4 / k2^2`` (signed)."""
    k2, k3, k4 = k_statistics(samples)
    if np.any(k2 <= 0):
        raise DataError("cumulants undefined for a zero-variance coordinate")
    return k3 / k2**1.5, k4 / k2**2


def cumulants(samples) -> CumulantTrace:
    g3, g4 = standardized_cumulants(samples)
    # absolute values first so opposite-signed coordinates do not cancel
    return CumulantTrace(k3=float(np.mean(np.abs(g3))), k4=float(np.mean(np.abs(g4))))


# ---------------------------------------------------------------- curves


@dataclass(frozen=True)
class StepGaussianity:
    t: int
    v_tilde: float
    ks: KsResult
    mi: MiResult | None
    cumulants: CumulantTrace | None

    def row(self) -> dict:
        return {
            "t": self.t,
            "mean_D": self.ks.mean_D,
            "pass_fraction": self.ks.pass_fraction,
            "mi_rows": self.mi.mi_rows if self.mi else float("nan"),
            "mi_cols": self.mi.mi_cols if self.mi else float("nan"),
            "k3": self.cumulants.k3 if self.cumulants else float("nan"),
            "k4": self.cumulants.k4 if self.cumulants else float("nan"),
            "v_tilde": self.v_tilde,
        }


CURVE_COLUMNS = ("t", "mean_D", "pass_fraction", "mi_rows", "mi_cols", "k3", "k4", "v_tilde")


@dataclass(frozen=True)
class GaussianityReport:
    steps: tuple[StepGaussianity, ...]
    seed: int
    schedule_fingerprint: str
    n_used: int

    def rows(self) -> list[dict]:
        return [s.row() for s in self.steps]

    def at(self, t: int) -> StepGaussianity:
        for s in self.steps:
            if s.t == t:
                return s
        raise KeyError(t)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "schedule_fingerprint": self.schedule_fingerprint,
            "n_used": self.n_used,
            "steps": [
                {
                    **s.row(),
                    "ks": s.ks.to_dict(),
                    "mi": s.mi.to_dict() if s.mi else None,
                    "cumulants": s.cumulants.to_dict() if s.cumulants else None,
                }
                for s in self.steps
            ],
        }


def probe_sample(dataset: Dataset, max_samples: int | None, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded subsample of the dataset plus the single noise draw that every
    probe step reuses, so that probes lie on one forward path."""
    x = dataset.data
    if max_samples is not None and x.shape[0] > max_samples:
        idx = _rng.make_rng(seed, _rng.SUBSAMPLE).choice(x.shape[0], size=max_samples, replace=False)
        x = x[np.sort(idx)]
    eps = _rng.make_rng(seed, _rng.FORWARD).standard_normal(x.shape)
    return x, eps


def require_centered(dataset: Dataset) -> None:
    resid = float(np.max(np.abs(dataset.data.mean(axis=1))))
    if resid > CENTERED_TOL:
        raise ContractError(f"dataset must be centered first (max |sample mean| = {resid:.3g})")


def gaussianity_curve(
    dataset: Dataset,
    schedule: NoiseSchedule,
    variance_path: VariancePath,
    probe_steps,
    seed: int = 0,
    significance: float = 0.05,
    max_samples: int | None = 10_000,
    with_mi: bool = True,
    with_cumulants: bool = True,
    workers: int = 1,
) -> GaussianityReport:
    require_centered(dataset)
    steps = sorted({schedule.check_step(t) for t in probe_steps})
    if variance_path.T != schedule.T:
        raise ParameterError("variance path and schedule disagree on T")
    x0, eps = probe_sample(dataset, max_samples, seed)

    def probe(t: int) -> StepGaussianity:
        xt = forward_marginal(schedule, x0, t, seed, noise=eps)
        return StepGaussianity(
            t=t,
            v_tilde=variance_path[t],
            ks=ks_statistic(xt, variance_path[t], significance),
            mi=mutual_information(xt, seed=seed + t) if with_mi else None,
            cumulants=cumulants(xt) if with_cumulants else None,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = tuple(pool.map(probe, steps))
    else:
        results = tuple(probe(t) for t in steps)
    return GaussianityReport(results, seed, schedule.fingerprint(), x0.shape[0])
