from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from prisps.adversary import (
    CRITERIA,
    DEFAULT_CANDIDATES,
    FeatureWindows,
    Metric,
    MomentAlignmentObfuscator,
    ObfuscationConfig,
    PpmCandidate,
    compute_put,
    count_utility,
    craft_invasive_query,
    detect_pattern_from_sanitized,
    infer_attribute,
    laplace_tv_distance,
    obfuscate_features,
    pattern_absent_world,
    read_windows_jsonl,
    select_ppm,
    write_windows_jsonl,
)
from prisps.cep import CountSeries
from prisps.dp import NoiseSchedule
from prisps.exceptions import (
    DegenerateWorlds,
    InsufficientData,
    MissingBaseline,
    NoCandidateForThreat,
    SingleGroup,
    UnknownField,
)
from prisps.fixtures import BOB_QUERY, SyntheticAttributeSpec, generate_synthetic_attributes
from prisps.query import parse_query
from prisps.query.ast import Comparison, Predicate

Q = CountSeries((None, None, 2, 1, 0, 0, 1), 3)


def test_tv_distance_closed_form():
    assert laplace_tv_distance(1.0) == pytest.approx(1 - np.exp(-0.5))
    assert laplace_tv_distance(2.0, shift=2) == pytest.approx(1 - np.exp(-2))


def test_unnoised_slot_gives_full_advantage():
    sched = NoiseSchedule((Fraction(1),) * 6 + (None,))
    absent = pattern_absent_world(Q, 7)
    assert absent.values[6] == 0
    assert detect_pattern_from_sanitized(Q, absent, sched, 100, 0) == 1.0


def test_world_validation():
    sched = NoiseSchedule((Fraction(1),) * 7)
    with pytest.raises(DegenerateWorlds):
        detect_pattern_from_sanitized(Q, Q, sched, 10, 0)
    with pytest.raises(ValueError):
        detect_pattern_from_sanitized(Q, (None, None, 0, 0, 0, 0, 1), sched, 10, 0)
    with pytest.raises(DegenerateWorlds):
        pattern_absent_world(Q, 5)


def test_advantage_is_seeded():
    sched = NoiseSchedule((Fraction(1),) * 7)
    absent = pattern_absent_world(Q, 3)
    assert detect_pattern_from_sanitized(Q, absent, sched, 1000, 9) == detect_pattern_from_sanitized(Q, absent, sched, 1000, 9)


def test_invasive_query_appends_filter():
    base = parse_query(BOB_QUERY)
    crafted = craft_invasive_query(base, Predicate((Comparison("slot", "<=", 3),)))
    assert crafted.bindings[0].predicate.comparisons[-1] == Comparison("slot", "<=", 3)
    assert crafted.bindings[1:] == base.bindings[1:]
    with pytest.raises(UnknownField):
        craft_invasive_query(base, Predicate((Comparison("location", "==", "home"),)))


def test_obfuscator_estimator_contract():
    w = generate_synthetic_attributes(SyntheticAttributeSpec(windows_per_group=50), 1)
    est = MomentAlignmentObfuscator(strength=1.0)
    assert clone(est).get_params() == {"strength": 1.0}
    out = est.fit_transform(w.X, w.groups)
    for g in (0, 1):
        assert out[w.groups == g].mean(axis=0) == pytest.approx(est.pooled_mean_)
        assert out[w.groups == g].std(axis=0) == pytest.approx(est.pooled_std_)
    assert np.array_equal(MomentAlignmentObfuscator(0).fit_transform(w.X, w.groups), w.X)
    with pytest.raises(SingleGroup):
        est.fit(w.X, np.zeros(len(w.X)))
    with pytest.raises(ValueError):
        est.transform(w.X)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(0, 1000))
def test_partial_strength_interpolates_group_means(strength, seed):
    w = generate_synthetic_attributes(SyntheticAttributeSpec(windows_per_group=30), seed)
    out = obfuscate_features(w, ObfuscationConfig("group", strength))
    gap_before = np.abs(w.X[w.groups == 0].mean(0) - w.X[w.groups == 1].mean(0))
    gap_after = np.abs(out.X[out.groups == 0].mean(0) - out.X[out.groups == 1].mean(0))
    assert gap_after == pytest.approx((1 - strength) * gap_before, abs=1e-9)


def test_infer_attribute_guards_and_determinism():
    w = generate_synthetic_attributes(SyntheticAttributeSpec(), 42)
    assert infer_attribute(w, 42) == infer_attribute(w, 42)
    tiny = FeatureWindows(w.X[:10], w.groups[:10], w.activities[:10])
    with pytest.raises(InsufficientData):
        infer_attribute(tiny, 0)


def test_windows_jsonl_round_trip(tmp_path):
    w = generate_synthetic_attributes(SyntheticAttributeSpec(windows_per_group=5), 0)
    write_windows_jsonl(tmp_path / "w.jsonl", w)
    back = read_windows_jsonl(tmp_path / "w.jsonl")
    assert np.array_equal(back.X, w.X) and np.array_equal(back.groups, w.groups)


def test_count_utility_and_put():
    acc, mae = count_utility(Q, [Q.values])
    assert (acc, mae) == (1.0, 0.0)
    acc, mae = count_utility(Q, [(None, None, 2.4, 0.2, 0.3, -0.1, 1.0)])
    assert acc == pytest.approx(2 / 3)
    assert mae == pytest.approx((0.4 + 0.8 + 0.3 + 0.1 + 0) / 5)
    with pytest.raises(MissingBaseline):
        compute_put("x", None, [Q.values], Metric("m", 0.5))
    with pytest.raises(ValueError):
        compute_put("x", Q, [Q.values], Metric("m", 1.5))
    report = compute_put("x", Q, [Q.values], Metric("m", 0.5), 12.0)
    assert report.utility("latency_ms") == 12.0
    assert report.to_dict()["privacy_metric"] == {"name": "m", "value": 0.5}


def test_select_ppm_ranking():
    ranked = select_ppm(DEFAULT_CANDIDATES, {"privacy_guarantees": 1}, "private_patterns")
    assert [c.id for c in ranked] == ["dp_relevance_interval", "ac_query_rewrite"]
    ranked = select_ppm(DEFAULT_CANDIDATES, {"utility": 1}, "private_patterns")
    assert ranked[0].id == "ac_query_rewrite"
    with pytest.raises(NoCandidateForThreat):
        select_ppm(DEFAULT_CANDIDATES[:1], {"utility": 1}, "invasive_queries")
    with pytest.raises(ValueError):
        select_ppm(DEFAULT_CANDIDATES, {"utility": 0})
    with pytest.raises(ValueError):
        select_ppm(DEFAULT_CANDIDATES, {"beauty": 1})
    with pytest.raises(ValueError):
        PpmCandidate("x", "private_patterns", {c: 2 for c in CRITERIA})


scores = st.fixed_dictionaries({c: st.sampled_from([0, 0.25, 0.5, 0.75, 1]) for c in CRITERIA})


@settings(max_examples=200)
@given(
    st.lists(scores, min_size=1, max_size=6),
    st.fixed_dictionaries({c: st.integers(0, 5) for c in CRITERIA}).filter(lambda w: any(w.values())),
    st.integers(1, 1000),
)
def test_ranking_invariant_under_weight_scaling(cands, weights, factor):
    pool = [PpmCandidate(f"c{i}", "private_patterns", s) for i, s in enumerate(cands)]
    scaled = {c: v * factor for c, v in weights.items()}
    assert [c.id for c in select_ppm(pool, weights)] == [c.id for c in select_ppm(pool, scaled)]
