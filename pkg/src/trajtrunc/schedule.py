"""Variance-preserving noise schedules and the forward noising process."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import ParameterError, StepRangeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete VP schedule with ``T`` steps.

    ``beta`` has length ``T`` and ``beta[t - 1]`` is the rate of step ``t``.
    ``alpha_bar`` and ``sigma_bar_sq`` have length ``T + 1`` and are indexed by
    step, with ``alpha_bar[0] == 1``.
    """

    beta: np.ndarray
    alpha_bar: np.ndarray = field(init=False)
    sigma_bar_sq: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64).copy()
        if beta.ndim != 1 or beta.size < 1:
            raise ParameterError("beta must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(beta)) or np.any(beta <= 0) or np.any(beta >= 1):
            raise ParameterError("every beta must lie strictly inside (0, 1)")
        alpha_bar = np.empty(beta.size + 1)
        alpha_bar[0] = 1.0
        alpha_bar[1:] = np.cumprod(1.0 - beta)
        for name, arr in (("beta", beta), ("alpha_bar", alpha_bar), ("sigma_bar_sq", 1.0 - alpha_bar)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    @property
    def alpha(self) -> np.ndarray:
        """Per-step retention factors ``1 - beta``, indexed 1..T at ``[t - 1]``."""
        return 1.0 - self.beta

    def check_step(self, t: int, allow_zero: bool = False) -> int:
        lo = 0 if allow_zero else 1
        if isinstance(t, bool) or int(t) != t or not lo <= t <= self.T:
            raise StepRangeError(f"step {t!r} outside {lo}..{self.T}")
        return int(t)

    def alpha_bar_between(self, s: int, t: int) -> float:
        """Signal coefficient carrying ``x_t`` to ``x_s`` for ``s >= t``."""
        s, t = self.check_step(s, True), self.check_step(t, True)
        if s < t:
            raise ParameterError(f"need s >= t, got s={s}, t={t}")
        return float(self.alpha_bar[s] / self.alpha_bar[t])

    def to_dict(self) -> dict:
        return {"T": self.T, "beta": self.beta.tolist(), "alpha_bar": self.alpha_bar.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> NoiseSchedule:
        sched = cls(np.asarray(doc["beta"], dtype=np.float64))
        if "T" in doc and int(doc["T"]) != sched.T:
            raise ParameterError(f"T={doc['T']} disagrees with len(beta)={sched.T}")
        if "alpha_bar" in doc and not np.allclose(doc["alpha_bar"], sched.alpha_bar, rtol=1e-12, atol=0):
            raise ParameterError("stored alpha_bar does not match the product of (1 - beta)")
        return sched

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def fingerprint(self) -> str:
        """Short hash identifying the schedule (used as a provenance stamp)."""
        digest = hashlib.sha256(self.beta.tobytes()).hexdigest()
        return f"vp-T{self.T}-{digest[:16]}"

    def __eq__(self, other):
        return isinstance(other, NoiseSchedule) and np.array_equal(self.beta, other.beta)

    def __hash__(self):
        return hash(self.fingerprint())


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if isinstance(T, bool) or int(T) != T or T < 2:
        raise ParameterError(f"T must be an integer >= 2, got {T!r}")
    if not 0 < beta_start <= beta_end < 1:
        raise ParameterError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule(np.linspace(beta_start, beta_end, int(T), dtype=np.float64))


def make_cosine_schedule(T: int = 1000, offset: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Cosine schedule of Nichol & Dhariwal, betas clipped at ``max_beta``."""
    if isinstance(T, bool) or int(T) != T or T < 2:
        raise ParameterError(f"T must be an integer >= 2, got {T!r}")
    if offset <= 0 or not 0 < max_beta < 1:
        raise ParameterError("offset must be positive and max_beta inside (0, 1)")

    def f(t):
        return math.cos((t / T + offset) / (1 + offset) * math.pi / 2) ** 2

    betas = [min(1 - f(t) / f(t - 1), max_beta) for t in range(1, T + 1)]
    return NoiseSchedule(np.asarray(betas))


def _as_batch(x0) -> np.ndarray:
    x = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ParameterError("input batch contains non-finite values")
    return x


def forward_marginal(schedule: NoiseSchedule, x0, t: int, seed: int, noise: np.ndarray | None = None) -> np.ndarray:
    """Draw ``x_t ~ q(x_t | x_0)``: ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``noise`` may be supplied to reuse one standard-normal draw across several
    steps (the Gaussianity scans do this so that successive probe steps lie on
    a single noising path); otherwise it is drawn from ``seed``.
    """
    t = schedule.check_step(t)
    x = _as_batch(x0)
    if noise is None:
        noise = _rng.make_rng(seed, _rng.FORWARD, t).standard_normal(x.shape)
    elif noise.shape != x.shape:
        raise ParameterError(f"noise shape {noise.shape} != batch shape {x.shape}")
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * x + math.sqrt(1.0 - ab) * noise


def forward_step(schedule: NoiseSchedule, x_prev, t: int, seed: int) -> np.ndarray:
    """One Markov step ``x_{t-1} -> x_t``.

    The mean coefficient is ``sqrt(abar_t / abar_{t-1})`` so that composing
    steps 1..t reproduces :func:`forward_marginal` exactly in law.
    """
    t = schedule.check_step(t)
    x = _as_batch(x_prev)
    ratio = schedule.alpha_bar[t] / schedule.alpha_bar[t - 1]
    if ratio == 1.0:
        return x.copy()
    eps = _rng.make_rng(seed, _rng.FORWARD, t).standard_normal(x.shape)
    return math.sqrt(ratio) * x + math.sqrt(1.0 - ratio) * eps
