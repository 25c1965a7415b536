import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskpipe.errors import ValidationError
from riskpipe.pipeline import SensorSample
from riskpipe.risk import (
    DEFAULT_SCORING,
    RiskLabel,
    ScoringConfig,
    assess_window,
    assign_label,
    cognitive_score,
    labels_for,
    overall_score,
    overall_scores,
    sample_scores,
    score_light,
    score_sound,
    score_temperature,
    stress_score,
)

unit = st.floats(0.0, 1.0)


# Written out independently of the band tables in the package.
def ref_temp(t):
    if t < 18:
        return 0.3
    if t < 20:
        return 0.6
    if t < 24:
        return 1.0
    if t < 26:
        return 0.8
    if t < 28:
        return 0.5
    return 0.2


def ref_sound(db):
    return 1.0 if db < 30 else 0.9 if db < 50 else 0.7 if db < 60 else 0.4 if db < 75 else 0.2


def ref_light(lux):
    return 0.2 if lux < 500 else 0.4 if lux < 2000 else 1.0 if lux < 10000 else 0.7 if lux < 20000 else 0.3


@pytest.mark.parametrize(
    "value, expected",
    [(17.999, 0.3), (18.0, 0.6), (20.0, 1.0), (23.99, 1.0), (24.0, 0.8), (26.0, 0.5), (28.0, 0.2), (-40.0, 0.3)],
)
def test_temperature_band_edges(value, expected):
    assert score_temperature(value) == expected


@pytest.mark.parametrize("value, expected", [(0, 1.0), (30, 0.9), (50, 0.7), (60, 0.4), (75, 0.2), (140, 0.2)])
def test_sound_band_edges(value, expected):
    assert score_sound(value) == expected


@pytest.mark.parametrize("value, expected", [(0, 0.2), (500, 0.4), (2000, 1.0), (10000, 0.7), (20000, 0.3)])
def test_light_band_edges(value, expected):
    assert score_light(value) == expected


def test_label_thresholds_are_lower_inclusive():
    assert assign_label(0.0) is RiskLabel.RunAsUsual
    assert assign_label(0.2499999) is RiskLabel.RunAsUsual
    assert assign_label(0.25) is RiskLabel.ShowWarning
    assert assign_label(0.5) is RiskLabel.LimitAccess
    assert assign_label(0.75) is RiskLabel.InformBackupPerson
    assert assign_label(1.0) is RiskLabel.InformBackupPerson


def test_worked_example():
    cog = cognitive_score(1.0, 0.9, 1.0)
    assert math.isclose(cog, 2.9 / 3)
    st_ = stress_score(0.8, 0.5)
    assert math.isclose(st_, 0.71)
    assert math.isclose(overall_score(st_, cog), 0.7 * 0.71 + 0.3 * (1 - 2.9 / 3))
    assert assign_label(overall_score(st_, cog)) is RiskLabel.LimitAccess  # 0.507


@pytest.mark.parametrize(
    "call",
    [
        lambda: score_temperature(math.nan),
        lambda: score_sound(-1),
        lambda: score_light(-0.5),
        lambda: stress_score(1.2, 0.0),
        lambda: overall_score(0.5, -0.1),
        lambda: assign_label(1.5),
        lambda: cognitive_score(0.5, 0.5, math.inf),
    ],
)
def test_invalid_inputs_raise(call):
    with pytest.raises(ValidationError):
        call()


@given(st.floats(-50, 60), st.floats(0, 140), st.floats(0, 120000), unit, unit)
def test_scalar_path_matches_reference(t, s, lux, hr, gsr):
    *_, overall = sample_scores(t, s, lux, hr, gsr)
    cog = (ref_temp(t) + ref_sound(s) + ref_light(lux)) / 3
    ref = 0.7 * (0.7 * hr + 0.3 * gsr) + 0.3 * (1 - cog)
    assert overall == pytest.approx(ref, abs=1e-15)
    assert 0.0 <= overall <= 1.0


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-50, 60), st.floats(0, 140), st.floats(0, 120000), unit, unit), min_size=1, max_size=40))
def test_vectorized_path_is_bitwise_scalar(rows):
    arr = np.array(rows)
    vec = overall_scores(*arr.T)
    scalar = np.array([sample_scores(*r)[-1] for r in rows])
    assert np.array_equal(vec, scalar)
    assert np.array_equal(labels_for(vec), [assign_label(v) for v in scalar])


@given(unit, unit, unit)
def test_stress_monotone_in_each_argument(a, b, c):
    lo, hi = sorted((a, b))
    assert stress_score(lo, c) <= stress_score(hi, c)
    assert stress_score(c, lo) <= stress_score(c, hi)


def test_assess_window_uses_mean_of_sample_scores():
    samples = [SensorSample("s", i, 80.0, 3.0, 22.0 + (i % 10), 5000.0, 40.0 + i) for i in range(30)]
    hr = np.linspace(0, 1, 30)
    gsr = np.linspace(1, 0, 30)
    out = assess_window(samples, hr, gsr)
    per = [sample_scores(s.temperature_c, s.sound_db, s.light_lux, h, g)[-1] for s, h, g in zip(samples, hr, gsr)]
    assert out.overall_score == pytest.approx(sum(per) / 30, abs=1e-15)
    assert out.label is assign_label(out.overall_score)


def test_assess_window_rejects_mismatched_lengths():
    samples = [SensorSample("s", 0, 80.0, 3.0, 22.0, 5000.0, 40.0)]
    with pytest.raises(ValidationError):
        assess_window(samples, [0.5, 0.5], [0.5])
    with pytest.raises(ValidationError):
        assess_window([], [], [])


def test_scoring_config_round_trip_and_validation():
    cfg = ScoringConfig(label_thresholds=(0.2, 0.4, 0.6))
    again = ScoringConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert ScoringConfig.from_dict({}) == DEFAULT_SCORING
    with pytest.raises(ValidationError):
        ScoringConfig(label_thresholds=(0.5, 0.4, 0.6))
    with pytest.raises(ValidationError):
        ScoringConfig(w_hr=0.6, w_gsr=0.3)
    with pytest.raises(ValidationError):
        ScoringConfig.from_dict({"bogus": 1})


def test_custom_thresholds_shift_labels():
    cfg = ScoringConfig(label_thresholds=(0.1, 0.2, 0.3))
    assert assign_label(0.35, cfg) is RiskLabel.InformBackupPerson
    assert assign_label(0.35) is RiskLabel.ShowWarning


def test_label_parse():
    assert RiskLabel.parse("Limit access") is RiskLabel.LimitAccess
    assert RiskLabel.parse("ShowWarning") is RiskLabel.ShowWarning
    assert RiskLabel.parse(3) is RiskLabel.InformBackupPerson
    with pytest.raises(ValidationError):
        RiskLabel.parse("panic")
