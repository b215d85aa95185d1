"""Vote protocols and confusion metrics against hand-computed oracles."""
import numpy as np
import pytest

from mssda.errors import InputError
from mssda.metrics import (
    Metrics,
    compute_metrics,
    confusion_counts,
    metrics_from_counts,
    segment_vote,
    vote_subject,
)


# -- subject vote ---------------------------------------------------------------------


def test_vote_six_of_ten_positive_at_half():
    labels = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0]
    assert vote_subject(labels, 0.5) == 1


def test_vote_exact_tie_is_positive():
    labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
    assert vote_subject(labels, 0.5) == 1


def test_vote_six_of_ten_negative_at_higher_threshold():
    labels = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0]
    assert vote_subject(labels, 0.7) == 0


def test_vote_all_positive_and_all_negative():
    assert vote_subject([1, 1, 1]) == 1
    assert vote_subject([0, 0, 0]) == 0
    assert vote_subject([0]) == 0
    assert vote_subject([1]) == 1


def test_vote_threshold_one_requires_unanimity():
    assert vote_subject([1, 1, 1, 0], 1.0) == 0
    assert vote_subject([1, 1, 1, 1], 1.0) == 1


def test_vote_monotone_in_theta():
    rng = np.random.default_rng(0)
    labels = (rng.random(47) < 0.55).astype(int)
    votes = [vote_subject(labels, t) for t in np.linspace(0.05, 1.0, 20)]
    assert all(a >= b for a, b in zip(votes, votes[1:]))


def test_vote_rejects_empty_and_non_binary():
    with pytest.raises(InputError):
        vote_subject([])
    with pytest.raises(InputError):
        vote_subject([0, 2, 1])


# -- segment vote ---------------------------------------------------------------------


def test_segment_count_22_samples():
    votes = segment_vote([1] * 22, segment_len=11)
    assert votes == [1, 1]


def test_segment_remainder_kept():
    # 25 samples -> windows of 11, 11, and a final short window of 3.
    labels = [1] * 11 + [0] * 11 + [1, 0, 0]
    votes = segment_vote(labels, segment_len=11)
    assert votes == [1, 0, 0]
    assert len(segment_vote([0] * 25, segment_len=11)) == 3


def test_segment_six_of_eleven_positive():
    labels = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
    assert segment_vote(labels, segment_len=11) == [1]


def test_segment_len_one_is_identity():
    labels = [1, 0, 1, 1, 0]
    assert segment_vote(labels, segment_len=1) == labels


def test_segment_shorter_than_window_single_vote():
    assert segment_vote([1, 1, 0], segment_len=11) == [1]


def test_segment_rejects_bad_inputs():
    with pytest.raises(InputError):
        segment_vote([])
    with pytest.raises(InputError):
        segment_vote([1, 0], segment_len=0)
    with pytest.raises(InputError):
        segment_vote([1, 3], segment_len=2)


# -- confusion metrics ----------------------------------------------------------------


def test_counts_hand_example():
    # pred vs true over ten units: TP=3, FP=1, FN=1, TN=5.
    pred = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]
    true = [1, 1, 1, 0, 1, 0, 0, 0, 0, 0]
    assert confusion_counts(pred, true) == (3, 1, 1, 5)
    m = compute_metrics(pred, true)
    assert m.precision == pytest.approx(0.75)
    assert m.recall == pytest.approx(0.75)
    assert m.f1 == pytest.approx(0.75)
    assert m.accuracy == pytest.approx(0.8)
    assert m.specificity == pytest.approx(5 / 6)
    assert m.degenerate == []
    assert m.total == 10


def test_perfect_prediction_all_ones():
    pred = true = [1, 0, 1, 0, 1, 0]
    m = compute_metrics(pred, true)
    for name in ("precision", "recall", "specificity", "accuracy", "f1"):
        assert getattr(m, name) == 1.0
    assert m.degenerate == []


def test_all_positive_on_balanced_truth():
    pred = [1] * 8
    true = [1, 0] * 4
    m = compute_metrics(pred, true)
    assert m.precision == pytest.approx(0.5)
    assert m.recall == 1.0
    assert m.specificity == 0.0
    assert m.accuracy == pytest.approx(0.5)
    assert m.f1 == pytest.approx(2 * 0.5 * 1.0 / 1.5)


def test_degenerate_no_positive_predictions():
    # No positive predictions at all: precision has a zero denominator.
    m = compute_metrics([0, 0, 0, 0], [1, 1, 0, 0])
    assert m.precision == 0.0
    assert m.recall == 0.0
    assert m.f1 == 0.0
    assert "precision" in m.degenerate
    assert "f1" in m.degenerate


def test_degenerate_no_positive_truth():
    m = compute_metrics([0, 0, 0], [0, 0, 0])
    assert m.recall == 0.0
    assert "recall" in m.degenerate
    assert m.specificity == 1.0
    assert m.accuracy == 1.0


def test_degenerate_no_negative_truth():
    m = compute_metrics([1, 1], [1, 1])
    assert m.specificity == 0.0
    assert "specificity" in m.degenerate
    assert m.recall == 1.0


def test_metrics_from_counts_matches_compute():
    m1 = metrics_from_counts(3, 1, 1, 5)
    pred = [1] * 4 + [0] * 6
    true = [1, 1, 1, 0] + [1, 0, 0, 0, 0, 0]
    m2 = compute_metrics(pred, true)
    assert m1.to_dict() == m2.to_dict()


def test_metrics_rejects_negative_counts_and_mismatch():
    with pytest.raises(InputError):
        metrics_from_counts(-1, 0, 0, 0)
    with pytest.raises(InputError):
        confusion_counts([1, 0], [1])
    with pytest.raises(InputError):
        compute_metrics([1, 2], [1, 0])


def test_to_dict_roundtrip_fields():
    m = metrics_from_counts(2, 1, 0, 3)
    d = m.to_dict()
    assert d["tp"] == 2 and d["tn"] == 3
    assert isinstance(d["degenerate"], list)
    assert set(d) >= {"tp", "fp", "fn", "tn", "precision", "recall",
                      "specificity", "accuracy", "f1", "degenerate"}
    assert isinstance(m, Metrics)
