"""Relevance-interval w-event DP sanitization of count series.

A :class:`NoiseSchedule` holds one entry per slot: either ``NO_NOISE``
(``None``, the raw count is released) or a per-slot budget ``eps_t`` with
Laplace scale ``sensitivity / eps_t``. Budgets are kept as exact fractions.
The number of days ``n`` is tracked as a sequential-composition factor and
is not folded into the per-slot scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cep import CountSeries
from .exceptions import HorizonMismatch, InfeasibleSchedule, InvalidScale
from .rng import as_generator, seed_of

NO_NOISE = None
TAPER_MODES = ("table", "strict", "none")
EPSILON_SWEEP = (0.1, 10.0)


def exact(value) -> Fraction:
    """Exact rational view of a user-supplied number (floats by their decimal repr)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {value}")
        return Fraction(repr(value))
    if isinstance(value, (str, Real)):
        return Fraction(str(value))
    raise TypeError(f"cannot interpret {value!r} as a number")


@dataclass(frozen=True)
class ScheduleConfig:
    epsilon: Fraction
    w: int = 3
    sensitivity: Fraction = Fraction(1)
    relevance_intervals: tuple[tuple[int, int], ...] = ()
    n_days: int = 1
    taper_mode: str = "table"

    def __post_init__(self):
        object.__setattr__(self, "epsilon", exact(self.epsilon))
        object.__setattr__(self, "sensitivity", exact(self.sensitivity))
        intervals = tuple((int(a), int(b)) for a, b in self.relevance_intervals)
        object.__setattr__(self, "relevance_intervals", intervals)
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.sensitivity <= 0:
            raise ValueError("sensitivity must be > 0")
        if self.w < 1:
            raise ValueError("w must be >= 1")
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")
        if self.taper_mode not in TAPER_MODES:
            raise ValueError(f"taper_mode must be one of {TAPER_MODES}")
        prev_end = 0
        for start, end in intervals:
            if start < 1 or end < start:
                raise ValueError(f"invalid relevance interval [{start}, {end}]")
            if start <= prev_end:
                raise ValueError("relevance intervals must be sorted and non-overlapping")
            prev_end = end


@dataclass(frozen=True)
class NoiseSchedule:
    entries: tuple[Fraction | None, ...]
    sensitivity: Fraction = Fraction(1)
    composition_factor: int = 1

    @property
    def horizon(self) -> int:
        return len(self.entries)

    def scale(self, slot: int) -> float | None:
        """Laplace scale at 1-based ``slot``; ``None`` where no noise is added."""
        eps_t = self.entries[slot - 1]
        return None if eps_t is None else float(self.sensitivity / eps_t)

    def scales(self) -> list[float | None]:
        return [self.scale(t) for t in range(1, self.horizon + 1)]

    def is_silent(self) -> bool:
        return all(e is None for e in self.entries)

    def total_budget(self) -> Fraction:
        """Budget spent over ``composition_factor`` days of this schedule."""
        return self.composition_factor * sum((e for e in self.entries if e is not None), Fraction(0))


@dataclass(frozen=True)
class SanitizedSeries:
    values: tuple[float | None, ...]
    schedule: NoiseSchedule
    seed: int | None = None


@dataclass(frozen=True)
class WindowViolation:
    start: int
    end: int
    spent: Fraction | float


def _windows(horizon: int, w: int) -> list[tuple[int, int]]:
    if horizon == 0:
        return []
    if horizon <= w:
        return [(1, horizon)]
    return [(a, a + w - 1) for a in range(1, horizon - w + 2)]


def allocate_budget(config: ScheduleConfig, horizon: int) -> NoiseSchedule:
    """Per-slot budgets for ``horizon`` slots under ``config.taper_mode``.

    ``table``: ``eps/w`` inside each interval, then ``eps/2`` and ``eps`` on
    the next two slots, then no noise. ``strict``: ``eps/w`` inside; the
    ``w - 1`` slots after each interval receive the largest fair share that
    keeps every sliding ``w``-window at or below ``eps``. ``none``: ``eps/w``
    inside, no noise elsewhere.
    """
    if any(end > horizon for _, end in config.relevance_intervals):
        raise ValueError(f"horizon {horizon} ends before a relevance interval")
    eps, w = config.epsilon, config.w
    entries: list[Fraction | None] = [NO_NOISE] * horizon
    inside = set()
    for start, end in config.relevance_intervals:
        for t in range(start, end + 1):
            entries[t - 1] = eps / w
            inside.add(t)

    if config.taper_mode == "table":
        for _, end in config.relevance_intervals:
            for t, budget in ((end + 1, eps / 2), (end + 2, eps)):
                if t > horizon or t in inside:
                    continue
                current = entries[t - 1]
                entries[t - 1] = budget if current is None else min(current, budget)
    elif config.taper_mode == "strict":
        _strict_taper(entries, inside, config, horizon)

    return NoiseSchedule(tuple(entries), config.sensitivity, config.n_days)


def _strict_taper(entries, inside, config: ScheduleConfig, horizon: int) -> None:
    eps, w = config.epsilon, config.w
    windows = _windows(horizon, w)
    for a, b in windows:
        spent = sum((entries[t - 1] for t in range(a, b + 1) if entries[t - 1] is not None), Fraction(0))
        if spent > eps:
            raise InfeasibleSchedule(f"window [{a}, {b}] needs {spent} > {eps}")
    taper = sorted(
        {t for _, end in config.relevance_intervals for t in range(end + 1, end + w) if t <= horizon} - inside
    )
    pending = set(taper)
    for t in taper:
        budget = eps
        for a, b in windows:
            if not a <= t <= b:
                continue
            spent = sum(
                (entries[s - 1] for s in range(a, b + 1) if s not in pending and entries[s - 1] is not None),
                Fraction(0),
            )
            share = (eps - spent) / sum(1 for s in range(a, b + 1) if s in pending)
            budget = min(budget, share)
        if budget <= 0:
            raise InfeasibleSchedule(f"no budget left for taper slot {t}")
        entries[t - 1] = budget
        pending.discard(t)


def laplace_from_uniform(u, scale):
    """Inverse-CDF transform of ``u`` in [0, 1) to a Laplace(0, scale) draw."""
    u = np.asarray(u, dtype=float)
    centered = u - 0.5
    tail = np.maximum(1.0 - 2.0 * np.abs(centered), np.finfo(float).tiny)
    out = -scale * np.sign(centered) * np.log(tail)
    return float(out) if out.ndim == 0 else out


def sample_laplace(scale: float, rng, size=None):
    """One (or ``size``) Laplace(0, scale) samples, one uniform draw each."""
    if not scale > 0 or not math.isfinite(scale):
        raise InvalidScale(f"Laplace scale must be a positive finite number, got {scale}")
    gen = as_generator(rng)
    return laplace_from_uniform(gen.random(size), scale)


def sanitize(q: CountSeries | Sequence, schedule: NoiseSchedule, rng) -> SanitizedSeries:
    """``M[t] = Q[t] + Lap(sensitivity / eps_t)`` at noisy slots, ``Q[t]`` elsewhere."""
    values = q.values if isinstance(q, CountSeries) else tuple(q)
    if schedule.horizon < len(values):
        raise HorizonMismatch(f"schedule covers {schedule.horizon} slots, series has {len(values)}")
    gen = as_generator(rng)
    out = []
    for t, v in enumerate(values, 1):
        scale = schedule.scale(t)
        if v is None:
            out.append(None)
        elif scale is None:
            out.append(v)
        else:
            out.append(float(v) + sample_laplace(scale, gen))
    return SanitizedSeries(tuple(out), schedule, seed_of(rng))


def sanitize_many(q: CountSeries | Sequence, schedule: NoiseSchedule, rng, draws: int) -> np.ndarray:
    """``draws`` independent sanitizations as a ``(draws, len(q))`` array, NaN where undefined."""
    values = q.values if isinstance(q, CountSeries) else tuple(q)
    if schedule.horizon < len(values):
        raise HorizonMismatch(f"schedule covers {schedule.horizon} slots, series has {len(values)}")
    gen = as_generator(rng)
    out = np.array([[np.nan if v is None else float(v) for v in values]] * draws, dtype=float).reshape(draws, len(values))
    for t, v in enumerate(values, 1):
        scale = schedule.scale(t)
        if v is not None and scale is not None:
            out[:, t - 1] += sample_laplace(scale, gen, size=draws)
    return out


def window_budget_check(
    schedule: NoiseSchedule, w: int, epsilon, no_noise: str = "zero"
) -> list[WindowViolation]:
    """Every ``w``-slot window whose spent budget exceeds ``epsilon``.

    ``no_noise="zero"`` counts raw-release slots as spending nothing;
    ``no_noise="infinite"`` treats any raw release as unbounded spending.
    """
    if no_noise not in ("zero", "infinite"):
        raise ValueError("no_noise must be 'zero' or 'infinite'")
    epsilon = exact(epsilon)
    violations = []
    for a, b in _windows(schedule.horizon, w):
        window = schedule.entries[a - 1 : b]
        if no_noise == "infinite" and any(e is None for e in window):
            violations.append(WindowViolation(a, b, math.inf))
            continue
        spent = sum((e for e in window if e is not None), Fraction(0))
        if spent > epsilon:
            violations.append(WindowViolation(a, b, spent))
    return violations


def write_schedule_csv(schedule: NoiseSchedule, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slot", "epsilon_t", "scale"])
        for t, eps_t in enumerate(schedule.entries, 1):
            if eps_t is None:
                writer.writerow([t, "", ""])
            else:
                writer.writerow([t, f"{float(eps_t):.6f}", f"{schedule.scale(t):.6f}"])


def read_schedule_csv(path, sensitivity=1, composition_factor: int = 1) -> NoiseSchedule:
    """Inverse of :func:`write_schedule_csv` up to 6-decimal rounding."""
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            entries.append(exact(row["epsilon_t"]) if row["epsilon_t"] else None)
    return NoiseSchedule(tuple(entries), exact(sensitivity), composition_factor)


class SwellfishSanitizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`allocate_budget` and :func:`sanitize`.

    ``fit`` derives the noise schedule for the horizon of ``X`` (one count
    series per row, ``NaN`` for undefined slots); ``transform`` adds noise.
    """

    def __init__(
        self,
        epsilon=1.0,
        w=3,
        sensitivity=1,
        relevance_intervals=(),
        n_days=1,
        taper_mode="table",
        random_state=None,
    ):
        self.epsilon = epsilon
        self.w = w
        self.sensitivity = sensitivity
        self.relevance_intervals = relevance_intervals
        self.n_days = n_days
        self.taper_mode = taper_mode
        self.random_state = random_state

    def _config(self) -> ScheduleConfig:
        return ScheduleConfig(
            self.epsilon, self.w, self.sensitivity, tuple(self.relevance_intervals), self.n_days, self.taper_mode
        )

    def fit(self, X, y=None):
        X = _check_counts(X)
        self.schedule_ = allocate_budget(self._config(), X.shape[1])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "schedule_")
        X = _check_counts(X)
        if X.shape[1] != self.n_features_in_:
            raise HorizonMismatch(f"fitted on {self.n_features_in_} slots, got {X.shape[1]}")
        if self.random_state is None:
            raise ValueError("SwellfishSanitizer needs an explicit random_state")
        gen = as_generator(self.random_state)
        out = X.copy()
        for row in out:
            for t in range(row.shape[0]):
                scale = self.schedule_.scale(t + 1)
                if scale is not None and not np.isnan(row[t]):
                    row[t] += sample_laplace(scale, gen)
        return out


def _check_counts(X) -> np.ndarray:
    X = np.array(X, dtype=float, ndmin=2)
    if X.ndim != 2:
        raise ValueError(f"expected a 2D array of count series, got shape {X.shape}")
    finite = X[~np.isnan(X)]
    if finite.size and (finite < 0).any():
        raise ValueError("counts must be non-negative")
    return X


def epsilon_from_knob(put_knob: float, sweep: tuple[float, float] = EPSILON_SWEEP) -> Fraction:
    """Linear map from a privacy-utility knob in [0, 1] onto the epsilon sweep."""
    if not 0 <= put_knob <= 1:
        raise ValueError("put_knob must lie in [0, 1]")
    lo, hi = exact(sweep[0]), exact(sweep[1])
    return lo + exact(put_knob) * (hi - lo)


__all__ = [
    "EPSILON_SWEEP",
    "NO_NOISE",
    "NoiseSchedule",
    "SanitizedSeries",
    "ScheduleConfig",
    "SwellfishSanitizer",
    "WindowViolation",
    "allocate_budget",
    "epsilon_from_knob",
    "exact",
    "laplace_from_uniform",
    "read_schedule_csv",
    "sample_laplace",
    "sanitize",
    "sanitize_many",
    "window_budget_check",
    "write_schedule_csv",
]
