import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stealbench.metrics import MetricsReport, accuracy, agreement, compare, cosine_avg, kl_avg, mae_per_class

COS_EXAMPLE = 0.8574929257125441869
KL_EXAMPLE = 0.5108256237659906832
# exact value; the rounded per-component figures give 0.10101
MAE_EXAMPLE = 0.1009755792735102086
RS_VECTOR = (0.5485366310897346872, 0.2706130379977013565, 0.1808503309125639564)


def test_agreement_examples():
    a = np.array([[0.6, 0.4], [0.3, 0.7]])
    assert agreement(a, a) == 1.0
    assert agreement(a, a[:, ::-1]) == 0.0
    assert agreement(a, [[0.9, 0.1], [0.6, 0.4]]) == 0.5


def test_cosine_examples():
    assert cosine_avg([[0.3, 0.7]], [[0.3, 0.7]]) == pytest.approx(1.0)
    assert cosine_avg([[1.0, 0.0]], [[0.0, 1.0]]) == 0.0
    assert cosine_avg([[0.8, 0.2]], [[0.5, 0.5]]) == pytest.approx(COS_EXAMPLE, abs=1e-12)
    assert cosine_avg([[0.8, 0.2]], [[0.5, 0.5]]) == pytest.approx(0.85749, abs=1e-5)


def test_mae_examples():
    assert mae_per_class([[0.2, 0.8]], [[0.2, 0.8]]) == 0.0
    assert mae_per_class([[1.0, 0.0]], [[0.5, 0.5]]) == 0.5
    got = mae_per_class([[0.7, 0.2, 0.1]], [RS_VECTOR])
    assert got == pytest.approx(MAE_EXAMPLE, abs=1e-12)
    assert got == pytest.approx(0.10101, abs=1e-4)


def test_kl_examples():
    p = np.array([[0.2, 0.3, 0.5]])
    assert kl_avg(p, p) == 0.0
    assert kl_avg([[0.5, 0.5]], [[0.9, 0.1]]) == pytest.approx(KL_EXAMPLE, abs=1e-12)


def test_kl_handles_zeros():
    assert np.isfinite(kl_avg([[1.0, 0.0]], [[0.0, 1.0]]))


def test_accuracy_examples():
    p = np.eye(3)
    assert accuracy(p, [0, 1, 2]) == 1.0
    assert accuracy(p, [1, 2, 0]) == 0.0


def test_uniform_predictions_tie_break_to_class_zero():
    preds = np.full((100, 10), 0.1)
    labels = np.arange(100) % 10
    assert accuracy(preds, labels) == pytest.approx(0.1)
    assert np.all(preds.argmax(axis=1) == 0)


def test_length_mismatch():
    with pytest.raises(ValueError):
        agreement(np.ones((2, 2)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        accuracy(np.ones((2, 2)), [0])


probs = arrays(np.float64, (5, 4), elements=st.floats(0.01, 1.0)).map(lambda a: a / a.sum(axis=1, keepdims=True))


@given(probs, probs)
def test_metric_ranges(a, b):
    assert 0.0 <= agreement(a, b) <= 1.0
    assert 0.0 < cosine_avg(a, b) <= 1.0 + 1e-12
    assert 0.0 <= mae_per_class(a, b) <= 1.0
    assert kl_avg(a, b) >= -1e-12
    assert agreement(a, b) == agreement(b, a)
    assert cosine_avg(a, b) == pytest.approx(cosine_avg(b, a))


def test_report_round_trip():
    ref = np.array([[0.7, 0.3], [0.4, 0.6]])
    rep = compare(ref, ref[:, ::-1], [0, 1])
    assert MetricsReport.from_dict(rep.to_dict()) == rep
    assert rep.agreement == 0.0 and rep.n_eval == 2
