"""Zero-mean preprocessing, per-sample moment estimates, and the analytic
reference variance of the noised data."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import pdist

from .errors import ContractError, DataError, ParameterError
from .schedule import NoiseSchedule

CENTERED_TOL = 1e-10


class Modality(str, enum.Enum):
    EUCLIDEAN_POINTS = "euclidean-points"
    ONEHOT = "one-hot-categorical"
    GENERIC = "generic"


@dataclass(frozen=True)
class Dataset:
    """``n x d`` data matrix, one sample per row.

    For ``euclidean-points`` each row is a flattened cloud of ``d // point_dim``
    points laid out as ``(x1, y1, z1, x2, ...)``.
    """

    data: np.ndarray
    modality: Modality = Modality.GENERIC
    point_dim: int = 3

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DataError(f"dataset must be 2-D, got shape {data.shape}")
        n, d = data.shape
        if n < 2 or d < 2:
            raise DataError(f"dataset needs n >= 2 and d >= 2, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("dataset contains non-finite entries")
        modality = Modality(self.modality)
        if modality is Modality.EUCLIDEAN_POINTS and d % self.point_dim:
            raise DataError(f"d={d} is not a multiple of point_dim={self.point_dim}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "modality", modality)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> Dataset:
        return replace(self, data=data)


@dataclass(frozen=True)
class DatasetStats:
    per_sample_mean: np.ndarray
    per_sample_var: np.ndarray
    avg_var: float
    mean_residual: float
    centered: bool
    n: int = 0
    d: int = 0

    def to_dict(self, include_per_sample: bool = False) -> dict:
        doc = {
            "n": self.n,
            "d": self.d,
            "avg_var": self.avg_var,
            "mean_residual": self.mean_residual,
            "centered": self.centered,
        }
        if include_per_sample:
            doc["per_sample_mean"] = self.per_sample_mean.tolist()
            doc["per_sample_var"] = self.per_sample_var.tolist()
        return doc


@dataclass(frozen=True)
class VariancePath:
    """Reference variances ``v_tilde[t]`` for ``t = 0..T``."""

    v_tilde: np.ndarray
    avg_var: float = field(default=float("nan"))

    def __getitem__(self, t: int) -> float:
        return float(self.v_tilde[t])

    @property
    def T(self) -> int:
        return self.v_tilde.size - 1


def center(dataset: Dataset) -> Dataset:
    """Remove the mean in the way that suits the dataset's modality.

    * generic: subtract each sample's own component mean;
    * one-hot: subtract the batch mean vector (the active index stays the
      row's largest entry unless the class frequencies are uniform);
    * euclidean points: subtract each cloud's centroid, axis by axis.

    Every branch leaves each row summing to zero.
    """
    x = dataset.data
    if dataset.modality is Modality.ONEHOT:
        out = x - x.mean(axis=0, keepdims=True)
    elif dataset.modality is Modality.EUCLIDEAN_POINTS:
        k = dataset.point_dim
        clouds = x.reshape(x.shape[0], -1, k)
        out = (clouds - clouds.mean(axis=1, keepdims=True)).reshape(x.shape)
    else:
        out = x - x.mean(axis=1, keepdims=True)
    # a second generic pass strips the O(eps) residue left by the first
    out = out - out.mean(axis=1, keepdims=True)
    return dataset.with_data(out)


def compute_stats(dataset: Dataset) -> DatasetStats:
    x = dataset.data
    mu = x.mean(axis=1)
    v = ((x - mu[:, None]) ** 2).mean(axis=1)
    resid = float(np.max(np.abs(mu)))
    return DatasetStats(
        per_sample_mean=mu,
        per_sample_var=v,
        avg_var=float(v.mean()),
        mean_residual=resid,
        centered=resid <= CENTERED_TOL,
        n=dataset.n,
        d=dataset.d,
    )


def propagate_variance(stats: DatasetStats, schedule: NoiseSchedule) -> VariancePath:
    if not stats.centered:
        raise ContractError(
            f"variance propagation needs centered data (max |sample mean| = {stats.mean_residual:.3g})"
        )
    v_hat = stats.avg_var
    v_tilde = 1.0 - schedule.alpha_bar * (1.0 - v_hat)
    # alpha_bar[0] is exactly 1, but keep the endpoint bit-exact regardless
    v_tilde[0] = v_hat
    v_tilde.setflags(write=False)
    return VariancePath(v_tilde=v_tilde, avg_var=v_hat)


def check_distance_invariance(points_before, points_after) -> float:
    a = np.asarray(getattr(points_before, "data", points_before), dtype=np.float64)
    b = np.asarray(getattr(points_after, "data", points_after), dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ParameterError(f"point sets must share a 2-D shape, got {a.shape} and {b.shape}")
    if a.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(pdist(a) - pdist(b))))


@dataclass(frozen=True)
class ArgmaxCheck:
    fraction: float
    degenerate: bool


def check_argmax_preservation(onehot) -> ArgmaxCheck:
    """Fraction of one-hot rows whose active index is still a maximal entry
    after subtracting the batch mean.

    ``degenerate`` is set when the batch frequencies are exactly uniform, in
    which case every centered row ties at ``1 - 1/k`` and argmax carries no
    information by itself.
    """
    h = np.asarray(getattr(onehot, "data", onehot), dtype=np.float64)
    if h.ndim != 2:
        raise DataError("one-hot batch must be 2-D")
    is_binary = np.all((h == 0) | (h == 1))
    if not is_binary or not np.all(h.sum(axis=1) == 1):
        raise DataError("every row must be one-hot (a single 1, all other entries 0)")
    freq = h.mean(axis=0)
    present = freq > 0
    degenerate = bool(present.sum() > 1 and np.all(freq[present] == freq[present][0]))
    centered = h - freq
    rows = np.arange(h.shape[0])
    # ties count as preserved: with a single class present every entry is 0
    kept = centered[rows, h.argmax(axis=1)] >= centered.max(axis=1)
    return ArgmaxCheck(fraction=float(kept.mean()), degenerate=degenerate)
