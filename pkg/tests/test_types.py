"""Record invariants and serialization round trips."""

import math

from hypothesis import given, settings
from hypothesis import strategies as st

from cfdebias.types import (
    FeatureSequence,
    PredictionRecord,
    SessionRecord,
    argmax_label,
    read_jsonl,
    validate_prediction,
    validate_session,
    write_jsonl,
)


def make_record(**overrides) -> SessionRecord:
    fields = dict(
        session_id="s1",
        gender=1,
        label=0,
        features=FeatureSequence(data=[[0.1, 0.2], [0.3, 0.4]]),
    )
    fields.update(overrides)
    return SessionRecord(**fields)


class TestValidateSession:
    def test_well_formed_record_passes(self):
        assert validate_session(make_record()) == []

    def test_gender_out_of_range(self):
        assert "gender not in {0,1}" in validate_session(make_record(gender=2))

    def test_label_out_of_range(self):
        assert "label not in {0,1}" in validate_session(make_record(label=-1))

    def test_missing_audio_and_features(self):
        violations = validate_session(make_record(features=None, audio_path=None))
        assert any("neither audio_path nor features" in v for v in violations)

    def test_non_finite_features_flagged(self):
        rec = make_record(features=FeatureSequence(data=[[0.0, math.nan]]))
        violations = validate_session(rec)
        assert any("non-finite" in v for v in violations), violations

    def test_audio_only_record_passes(self):
        assert validate_session(make_record(features=None, audio_path="a.wav")) == []


class TestValidatePrediction:
    def test_argmax_consistency_enforced(self):
        rec = PredictionRecord(session_id="s", gender=0, true_label=1,
                               predicted_label=0, tie_scores=[-0.2, 0.4])
        assert any("argmax" in v for v in validate_prediction(rec))

    def test_tie_break_goes_to_nondepressed(self):
        assert argmax_label([0.5, 0.5]) == 0
        rec = PredictionRecord(session_id="s", gender=0, true_label=1,
                               predicted_label=0, tie_scores=[0.5, 0.5])
        assert validate_prediction(rec) == []

    def test_valid_prediction_passes(self):
        rec = PredictionRecord(session_id="s", gender=1, true_label=1,
                               predicted_label=1, tie_scores=[-0.2, 0.4])
        assert validate_prediction(rec) == []


finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(
    sid=st.text(min_size=1, max_size=12),
    gender=st.integers(0, 1),
    label=st.integers(0, 1),
    rows=st.lists(st.lists(finite_floats, min_size=2, max_size=2), min_size=1, max_size=4),
)
def test_session_record_roundtrip(tmp_path_factory, sid, gender, label, rows):
    """Encode-then-decode yields a field-equal record, floats included."""
    rec = SessionRecord(session_id=sid, gender=gender, label=label,
                        features=FeatureSequence(data=rows))
    path = tmp_path_factory.mktemp("jsonl") / "records.jsonl"
    write_jsonl([rec], path)
    (loaded,) = list(read_jsonl(path, SessionRecord))
    assert loaded == rec


def test_prediction_record_roundtrip(tmp_path):
    recs = [
        PredictionRecord(session_id="a", gender=0, true_label=1, predicted_label=1,
                         tie_scores=[0.078341, 0.0]),
        PredictionRecord(session_id="b", gender=1, true_label=0, predicted_label=0),
    ]
    path = tmp_path / "preds.jsonl"
    write_jsonl(recs, path)
    assert list(read_jsonl(path, PredictionRecord)) == recs
