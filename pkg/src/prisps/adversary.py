"""Honest-but-curious adversaries, privacy-utility metrics and PPM ranking.

Three attack surfaces are modelled:

* a data consumer distinguishing "pattern present" from "pattern absent"
  on a target day from sanitized counts (optimal threshold test);
* a consumer crafting invasive queries by appending filters;
* a node inferring a sensitive attribute from feature windows
  (nearest-centroid attacker), with a moment-alignment obfuscator as the
  stand-in defence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.neighbors import NearestCentroid
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .cep import CountSeries
from .dp import NoiseSchedule, exact, laplace_from_uniform
from .exceptions import (
    DegenerateWorlds,
    InsufficientData,
    MissingBaseline,
    NoCandidateForThreat,
    SemanticError,
    SingleGroup,
    UnknownField,
)
from .query.ast import Predicate, QueryAst
from .query.parser import check_semantics
from .rng import as_generator

THREATS = ("sensitive_attributes", "private_patterns", "invasive_queries")
CRITERIA = ("privacy_guarantees", "runtime", "utility", "resources", "scalability", "setup")


# ------------------------------------------------------------ pattern presence


def laplace_tv_distance(eps_t: float, shift: float = 1.0, sensitivity: float = 1.0) -> float:
    """Total variation between Laplace(0, b) and Laplace(shift, b), b = sensitivity / eps_t."""
    b = sensitivity / eps_t
    return 1.0 - math.exp(-abs(shift) / (2.0 * b))


def _values(series) -> tuple:
    if isinstance(series, CountSeries):
        return series.values
    if hasattr(series, "values") and not isinstance(series, (list, tuple, np.ndarray)):
        return tuple(series.values)
    return tuple(series)


def _best_threshold(low: np.ndarray, high: np.ndarray) -> float:
    """Threshold maximising P(high >= thr) - P(low >= thr) on the given samples."""
    grid = np.unique(np.concatenate([low, high]))
    low_s, high_s = np.sort(low), np.sort(high)
    frac_high = 1.0 - np.searchsorted(high_s, grid, side="left") / high_s.size
    frac_low = 1.0 - np.searchsorted(low_s, grid, side="left") / low_s.size
    return float(grid[int(np.argmax(frac_high - frac_low))])


def detect_pattern_from_sanitized(
    world_present,
    world_absent,
    schedule: NoiseSchedule,
    trials: int = 10_000,
    rng=None,
) -> float:
    """Empirical advantage of the optimal threshold attacker.

    The two worlds are count series differing at a single slot. A threshold
    is fitted on ``trials`` noisy releases per world and the advantage
    ``TPR - FPR`` is then measured on ``trials`` fresh releases per world.
    """
    present, absent = _values(world_present), _values(world_absent)
    if len(present) != len(absent):
        raise ValueError("worlds must have the same length")
    diff = [t for t, (a, b) in enumerate(zip(present, absent), 1) if a != b]
    if not diff:
        raise DegenerateWorlds("the two worlds are identical")
    if len(diff) > 1:
        raise ValueError(f"worlds must differ at exactly one slot, they differ at {diff}")
    slot = diff[0]
    if present[slot - 1] is None or absent[slot - 1] is None:
        raise ValueError("worlds differ at an undefined slot")
    hi_val, lo_val = sorted((float(present[slot - 1]), float(absent[slot - 1])), reverse=True)
    scale = schedule.scale(slot) if slot <= schedule.horizon else None
    if scale is None:
        return 1.0
    gen = as_generator(rng)

    def draw():
        u = gen.random((2, trials))
        return lo_val + laplace_from_uniform(u[0], scale), hi_val + laplace_from_uniform(u[1], scale)

    thr = _best_threshold(*draw())
    low, high = draw()
    advantage = float(np.mean(high >= thr) - np.mean(low >= thr))
    return min(1.0, max(0.0, advantage))


def pattern_absent_world(series: CountSeries, slot: int) -> CountSeries:
    """Neighbouring world in which the target day's completion at ``slot`` is missing."""
    values = list(series.values)
    if values[slot - 1] is None or values[slot - 1] < 1:
        raise DegenerateWorlds(f"no completion at slot {slot} to remove")
    values[slot - 1] -= 1
    return replace(series, values=tuple(values))


# ------------------------------------------------------------ invasive queries


def craft_invasive_query(base: QueryAst, filter: Predicate) -> QueryAst:
    """Append ``filter`` as a conjunct of the first binding's predicate."""
    if not isinstance(filter, Predicate):
        raise TypeError("filter must be a Predicate")
    first, *rest = base.bindings
    existing = first.predicate.comparisons if first.predicate else ()
    crafted = replace(base, bindings=(replace(first, predicate=Predicate(existing + filter.comparisons)), *rest))
    try:
        return check_semantics(crafted)
    except SemanticError as exc:
        raise UnknownField(str(exc)) from exc


# ------------------------------------------------------------ attribute inference


@dataclass
class FeatureWindows:
    """Fixed-length feature vectors with the sensitive group and activity labels."""

    X: np.ndarray
    groups: np.ndarray
    activities: np.ndarray
    window_ids: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.groups = np.asarray(self.groups)
        self.activities = np.asarray(self.activities)
        if self.window_ids is None:
            self.window_ids = np.arange(len(self.X))
        n = len(self.X)
        if self.X.ndim != 2 or len(self.groups) != n or len(self.activities) != n:
            raise ValueError("X must be 2D and labels must match its row count")

    def __len__(self):
        return len(self.X)


def write_windows_jsonl(path, windows: FeatureWindows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for wid, x, g, a in zip(windows.window_ids, windows.X, windows.groups, windows.activities):
            record = {"window_id": _plain(wid), "features": [float(v) for v in x], "group": _plain(g), "activity": _plain(a)}
            fh.write(json.dumps(record) + "\n")


def read_windows_jsonl(path) -> FeatureWindows:
    ids, X, groups, acts = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            unknown = set(rec) - {"window_id", "features", "group", "activity"}
            if unknown:
                raise ValueError(f"unknown keys in window record: {sorted(unknown)}")
            ids.append(rec["window_id"])
            X.append(rec["features"])
            groups.append(rec["group"])
            acts.append(rec["activity"])
    return FeatureWindows(np.array(X, dtype=float), np.array(groups), np.array(acts), np.array(ids))


def _plain(value):
    return value.item() if isinstance(value, np.generic) else value


class MomentAlignmentObfuscator(TransformerMixin, BaseEstimator):
    """Shift each group's per-feature mean and spread toward pooled values.

    ``strength=1`` makes all groups share first and second moments;
    ``strength=0`` is the identity. The group label is required at
    transform time.
    """

    def __init__(self, strength=1.0):
        self.strength = strength

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        labels = np.unique(y)
        if labels.size < 2:
            raise SingleGroup("obfuscation needs at least two groups")
        self.groups_ = labels
        self.means_ = np.array([X[y == g].mean(axis=0) for g in labels])
        self.stds_ = np.array([X[y == g].std(axis=0) for g in labels])
        counts = np.array([(y == g).sum() for g in labels], dtype=float)
        self.pooled_mean_ = X.mean(axis=0)
        self.pooled_std_ = np.sqrt((counts[:, None] * self.stds_**2).sum(axis=0) / counts.sum())
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, groups=None):
        check_is_fitted(self, "means_")
        X = check_array(X, dtype=float)
        if not 0 <= self.strength <= 1:
            raise ValueError("strength must lie in [0, 1]")
        if self.strength == 0:
            return X.copy()
        if groups is None:
            raise ValueError("transform needs the group label of every row")
        groups = np.asarray(groups)
        s = self.strength
        out = np.empty_like(X)
        for i, g in enumerate(self.groups_):
            rows = groups == g
            mu, sd = self.means_[i], self.stds_[i]
            target_mu = mu + s * (self.pooled_mean_ - mu)
            target_sd = sd + s * (self.pooled_std_ - sd)
            ratio = np.divide(target_sd, sd, out=np.ones_like(sd), where=sd > 0)
            out[rows] = target_mu + (X[rows] - mu) * ratio
        unknown = ~np.isin(groups, self.groups_)
        if unknown.any():
            raise ValueError("transform received groups unseen during fit")
        return out

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X, groups=y)


@dataclass(frozen=True)
class ObfuscationConfig:
    concealed_attribute: str
    strength: float = 1.0


def obfuscate_features(windows: FeatureWindows, cfg: ObfuscationConfig) -> FeatureWindows:
    """Apply group-conditional moment alignment to ``windows``."""
    obf = MomentAlignmentObfuscator(cfg.strength)
    X = obf.fit_transform(windows.X, windows.groups)
    return FeatureWindows(X, windows.groups.copy(), windows.activities.copy(), windows.window_ids.copy())


def _split_seed(rng) -> int:
    if isinstance(rng, (int, np.integer)) and not isinstance(rng, bool):
        return int(rng)
    return int(as_generator(rng).integers(2**31 - 1))


def infer_attribute(
    windows: FeatureWindows,
    rng=0,
    target: str = "group",
    test_size: float = 0.3,
    attacker=None,
) -> float:
    """Held-out accuracy of a classifier predicting ``target`` from features.

    ``target="group"`` is the attribute-inference attack; ``"activity"``
    measures the utility left for activity recognition.
    """
    y = windows.groups if target == "group" else windows.activities
    labels, counts = np.unique(y, return_counts=True)
    if labels.size < 2:
        raise InsufficientData(f"need at least two {target} classes")
    if counts.min() < 10:
        raise InsufficientData(f"need at least 10 windows per {target} class")
    X_train, X_test, y_train, y_test = train_test_split(
        windows.X, y, test_size=test_size, random_state=_split_seed(rng), stratify=y
    )
    model = NearestCentroid() if attacker is None else attacker
    model.fit(X_train, y_train)
    return float(np.mean(model.predict(X_test) == y_test))


# ------------------------------------------------------------ PUT


@dataclass(frozen=True)
class Metric:
    name: str
    value: float


@dataclass(frozen=True)
class PutReport:
    ppm_id: str
    privacy_metric: Metric
    utility_metrics: tuple[Metric, ...]
    config: Mapping = field(default_factory=dict)

    def utility(self, name: str) -> float:
        return next(m.value for m in self.utility_metrics if m.name == name)

    def to_dict(self) -> dict:
        return {
            "ppm_id": self.ppm_id,
            "privacy_metric": {"name": self.privacy_metric.name, "value": self.privacy_metric.value},
            "utility_metrics": [{"name": m.name, "value": m.value} for m in self.utility_metrics],
            "config": dict(self.config),
        }


def count_utility(reference: CountSeries, releases: Sequence[Sequence[float | None]]) -> tuple[float, float]:
    """(public-event detection accuracy, count MAE) of ``releases`` against ``reference``."""
    truth = [(t, v) for t, v in reference.defined()]
    if len(releases) == 0:
        raise ValueError("at least one release is needed")
    errors, hits, events = [], 0, 0
    for rel in releases:
        for t, q in truth:
            m = rel[t - 1]
            errors.append(abs(float(m) - q))
            if q > 0:
                events += 1
                hits += int(round(float(m)) == q)
    mae = float(np.mean(errors)) if errors else 0.0
    accuracy = hits / events if events else 1.0
    return accuracy, mae


def compute_put(
    ppm_id: str,
    reference: CountSeries | None,
    releases: Sequence[Sequence[float | None]],
    privacy: Metric,
    latency_ms: float = 0.0,
    config: Mapping | None = None,
) -> PutReport:
    """Bundle the privacy metric with count utility and latency."""
    if reference is None:
        raise MissingBaseline("utility needs the unprotected reference series")
    if not 0 <= privacy.value <= 1:
        raise ValueError("privacy metric must lie in [0, 1]")
    accuracy, mae = count_utility(reference, releases)
    utility = (
        Metric("public_event_accuracy", accuracy),
        Metric("count_mae", mae),
        Metric("latency_ms", float(latency_ms)),
    )
    return PutReport(ppm_id, privacy, utility, dict(config or {}))


# ------------------------------------------------------------ PPM evaluator


@dataclass(frozen=True)
class PpmCandidate:
    id: str
    threat: str
    scores: Mapping[str, float]

    def __post_init__(self):
        if self.threat not in THREATS:
            raise ValueError(f"unknown threat {self.threat!r}")
        missing = set(CRITERIA) - set(self.scores)
        if missing:
            raise ValueError(f"candidate {self.id}: missing scores for {sorted(missing)}")
        for c in CRITERIA:
            if not 0 <= self.scores[c] <= 1:
                raise ValueError(f"candidate {self.id}: score {c} outside [0, 1]")


def weighted_score(candidate: PpmCandidate, weights: Mapping[str, float]) -> float:
    total = sum(weights.get(c, 0) for c in CRITERIA)
    return sum(weights.get(c, 0) * candidate.scores[c] for c in CRITERIA) / total


def select_ppm(
    candidates: Sequence[PpmCandidate],
    weights: Mapping[str, float],
    threat: str | None = None,
) -> list[PpmCandidate]:
    """Candidates for ``threat`` ranked by descending weighted score, ties by id."""
    unknown = set(weights) - set(CRITERIA)
    if unknown:
        raise ValueError(f"unknown criteria {sorted(unknown)}")
    if any(v < 0 for v in weights.values()) or not any(v > 0 for v in weights.values()):
        raise ValueError("weights must be non-negative and not all zero")
    pool = [c for c in candidates if threat is None or c.threat == threat]
    if not pool:
        raise NoCandidateForThreat(f"no candidate addresses {threat!r}")
    # exact arithmetic keeps the order invariant under rescaling of the weights
    w = {c: exact(weights.get(c, 0)) for c in CRITERIA}

    def key(cand: PpmCandidate):
        score = sum((w[c] * exact(cand.scores[c]) for c in CRITERIA), Fraction(0))
        return (-score, cand.id)

    return sorted(pool, key=key)


DEFAULT_CANDIDATES = (
    PpmCandidate(
        "dp_relevance_interval",
        "private_patterns",
        {"privacy_guarantees": 0.9, "runtime": 0.9, "utility": 0.6, "resources": 0.9, "scalability": 0.8, "setup": 0.6},
    ),
    PpmCandidate(
        "ac_query_rewrite",
        "private_patterns",
        {"privacy_guarantees": 0.6, "runtime": 0.95, "utility": 0.9, "resources": 0.95, "scalability": 0.9, "setup": 0.7},
    ),
    PpmCandidate(
        "trusted_placement",
        "invasive_queries",
        {"privacy_guarantees": 0.5, "runtime": 0.7, "utility": 0.9, "resources": 0.6, "scalability": 0.6, "setup": 0.5},
    ),
    PpmCandidate(
        "moment_alignment_obfuscator",
        "sensitive_attributes",
        {"privacy_guarantees": 0.4, "runtime": 0.9, "utility": 0.8, "resources": 0.8, "scalability": 0.9, "setup": 0.8},
    ),
)
