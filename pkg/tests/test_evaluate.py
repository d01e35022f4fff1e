"""Metrics: correlations with ties, outlier ratio, CI RMSE, report assembly."""

import math

import numpy as np
import pytest

from gml import evaluate as ev
from gml.errors import DegenerateInputError, IdMismatchError, LengthMismatchError
from gml.prob import ScoreDistribution, confidence_interval, mushra_stats

# ---------------------------------------------------------------------------
# Brute-force oracles (independent of the implementation path)
# ---------------------------------------------------------------------------


def bf_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def bf_rank(x):
    # rank_i = (#smaller) + (#equal + 1) / 2, counting the element itself
    out = []
    for xi in x:
        less = sum(1 for xj in x if xj < xi)
        eq = sum(1 for xj in x if xj == xi)
        out.append(less + (eq + 1) / 2)
    return out


def bf_spearman(x, y):
    return bf_pearson(bf_rank(x), bf_rank(y))


# ---------------------------------------------------------------------------
# Pearson
# ---------------------------------------------------------------------------


def test_pearson_affine():
    x = [1.0, 2.0, 5.0, 9.0]
    assert ev.pearson(x, [2 * v + 1 for v in x]) == pytest.approx(1.0, abs=1e-12)
    assert ev.pearson(x, [-v for v in x]) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.uniform(-5, 5, 20)
        y = rng.uniform(-5, 5, 20)
        assert ev.pearson(x, y) == pytest.approx(bf_pearson(x, y), abs=1e-12)


def test_pearson_affine_invariance():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, 30)
    y = rng.uniform(0, 1, 30)
    base = ev.pearson(x, y)
    assert ev.pearson(3.0 * x + 11.0, y) == pytest.approx(base, abs=1e-12)
    assert ev.pearson(x, 0.25 * y - 4.0) == pytest.approx(base, abs=1e-12)


def test_pearson_errors():
    with pytest.raises(LengthMismatchError):
        ev.pearson([1.0, 2.0], [1.0])
    with pytest.raises(DegenerateInputError):
        ev.pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


# ---------------------------------------------------------------------------
# Spearman
# ---------------------------------------------------------------------------


def test_spearman_monotone_transform():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 10, 25)
    y = np.exp(0.3 * x) + 5.0  # strictly increasing transform
    assert ev.spearman(x, y) == pytest.approx(1.0, abs=1e-12)
    assert ev.spearman(x, -y) == pytest.approx(-1.0, abs=1e-12)


def test_spearman_hand_ranked_ties():
    x = [1.0, 2.0, 3.0, 4.0]
    y = [10.0, 10.0, 5.0, 1.0]
    want = bf_pearson([1, 2, 3, 4], [3.5, 3.5, 2.0, 1.0])
    assert ev.spearman(x, y) == pytest.approx(want, abs=1e-12)


def test_spearman_brute_force_with_ties():
    rng = np.random.default_rng(3)
    for _ in range(100):
        x = rng.integers(0, 8, 15).astype(float)  # integer grid forces ties
        y = rng.integers(0, 8, 15).astype(float)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        assert ev.spearman(x, y) == pytest.approx(bf_spearman(x, y), abs=1e-12)


def test_spearman_tie_free_closed_form():
    rng = np.random.default_rng(4)
    x = rng.permutation(12).astype(float)
    y = rng.permutation(12).astype(float)
    d = np.asarray(bf_rank(x)) - np.asarray(bf_rank(y))
    n = 12
    closed = 1 - 6 * np.sum(d * d) / (n * (n * n - 1))
    assert ev.spearman(x, y) == pytest.approx(closed, abs=1e-12)


def test_rank_average_matches_counting_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = rng.integers(0, 5, 12).astype(float)
        np.testing.assert_allclose(ev.rank_average(x), bf_rank(x), atol=1e-12)


# ---------------------------------------------------------------------------
# Outlier ratio and CI RMSE
# ---------------------------------------------------------------------------


def _cond(pred_mean, subj_mean, subj_half, pred_half=2.0, n=20, cid="c"):
    return ev.ConditionResult(
        excerpt_id="e",
        condition_id=cid,
        subjective_mean=subj_mean,
        subjective_ci=confidence_interval(1.0, n, subj_mean)
        if subj_half is None
        else _interval(subj_mean, subj_half, n),
        predicted_mean=pred_mean,
        predicted_ci=_interval(pred_mean, pred_half, n),
        n_listeners=n,
    )


def _interval(center, half, n):
    from gml.prob import ConfidenceInterval

    return ConfidenceInterval(center - half, center + half, 0.95, n - 1)


def test_outlier_ratio_center_predictions():
    results = [_cond(50.0, 50.0, 5.0, cid=f"c{i}") for i in range(4)]
    assert ev.outlier_ratio(results) == 0.0


def test_outlier_ratio_counting():
    results = [
        _cond(50.0, 50.0, 5.0, cid="a"),
        _cond(54.0, 50.0, 5.0, cid="b"),
        _cond(56.0, 50.0, 5.0, cid="c"),  # outside
        _cond(45.0, 50.0, 5.0, cid="d"),  # boundary counts as inside
    ]
    assert ev.outlier_ratio(results) == 0.25


def test_outlier_ratio_brute_force_and_shift():
    rng = np.random.default_rng(6)
    for _ in range(100):
        results = [
            _cond(
                float(rng.uniform(0, 100)),
                float(rng.uniform(0, 100)),
                float(rng.uniform(0.5, 15)),
                cid=f"c{i}",
            )
            for i in range(12)
        ]
        manual = sum(
            1
            for r in results
            if r.predicted_mean < r.subjective_ci.lo or r.predicted_mean > r.subjective_ci.hi
        ) / len(results)
        assert ev.outlier_ratio(results) == manual
        shifted = [
            _cond(
                r.predicted_mean + 7.0,
                r.subjective_mean + 7.0,
                r.subjective_ci.half_width,
                cid=r.condition_id,
            )
            for r in results
        ]
        assert ev.outlier_ratio(shifted) == manual


def test_ci_rmse_exact_and_offset():
    results = [_cond(50.0, 50.0, 4.0, pred_half=4.0, cid=f"c{i}") for i in range(5)]
    assert ev.ci_rmse(results) == 0.0
    off = [_cond(50.0, 50.0, 4.0, pred_half=6.5, cid=f"c{i}") for i in range(5)]
    assert ev.ci_rmse(off) == pytest.approx(2.5, abs=1e-12)


def test_ci_rmse_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(100):
        results = [
            _cond(50.0, 50.0, float(rng.uniform(1, 10)), pred_half=float(rng.uniform(1, 10)), cid=f"c{i}")
            for i in range(9)
        ]
        manual = math.sqrt(
            sum((r.predicted_ci.half_width - r.subjective_ci.half_width) ** 2 for r in results)
            / len(results)
        )
        assert ev.ci_rmse(results) == pytest.approx(manual, abs=1e-12)


# ---------------------------------------------------------------------------
# evaluate()
# ---------------------------------------------------------------------------


def _panel(rng, mu, n=12):
    return list(np.clip(rng.normal(mu, 6.0, n), 0.0, 100.0))


def test_evaluate_self_predictions_are_perfect():
    rng = np.random.default_rng(8)
    subjective = {}
    predictions = {}
    for i, mu in enumerate([97.0, 70.0, 55.0, 40.0, 25.0]):  # includes near-ceiling ref
        key = f"e0:c{i}"
        panel = _panel(rng, mu)
        subjective[key] = panel
        mean, _ci = mushra_stats(panel)
        std = float(np.std(panel, ddof=1))
        predictions[key] = ScoreDistribution("gaussian", mean, math.log(max(std, 1e-6)))
    report = ev.evaluate(predictions, subjective, name="self")
    assert report.mean_block["pearson"] == pytest.approx(1.0, abs=1e-12)
    assert report.mean_block["spearman"] == pytest.approx(1.0, abs=1e-12)
    assert report.mean_block["outlier_ratio"] == 0.0
    assert report.ci_block["rmse"] == pytest.approx(0.0, abs=1e-9)
    assert report.n_conditions == 5


def test_evaluate_id_mismatch():
    preds = {"a": ScoreDistribution("gaussian", 50.0, 1.0)}
    with pytest.raises(IdMismatchError) as exc:
        ev.evaluate(preds, {"a": [50.0, 60.0], "b": [10.0, 20.0]})
    assert "b" in str(exc.value)
    with pytest.raises(IdMismatchError):
        ev.evaluate({"a": preds["a"], "c": preds["a"]}, {"a": [50.0, 60.0]})


def test_evaluate_permutation_invariant():
    rng = np.random.default_rng(9)
    keys = [f"e{i}:c" for i in range(8)]
    subj = {k: _panel(rng, 20.0 + 8 * i) for i, k in enumerate(keys)}
    preds = {k: ScoreDistribution("logistic", 18.0 + 8.5 * i, 1.5) for i, k in enumerate(keys)}
    r1 = ev.evaluate(preds, subj)
    shuffled = {k: preds[k] for k in reversed(keys)}
    r2 = ev.evaluate(shuffled, {k: subj[k] for k in reversed(keys)})
    assert r1.mean_block == r2.mean_block
    assert r1.ci_block == r2.ci_block


def test_evaluate_degenerate_means_reported_undefined():
    rng = np.random.default_rng(10)
    subj = {f"k{i}": _panel(rng, 50.0) for i in range(4)}
    preds = {k: ScoreDistribution("gaussian", 50.0, 1.0) for k in subj}  # constant mu
    report = ev.evaluate(preds, subj)
    assert report.mean_block["pearson"] is None
    assert any("undefined" in n for n in report.notes)


def test_evaluate_against_truth_blocks():
    preds = {
        "e0:ref": ScoreDistribution("logistic", 95.0, math.log(6.0)),
        "e0:bad": ScoreDistribution("logistic", 30.0, math.log(6.0)),
    }
    truth = {
        "e0:ref": (98.0, 10.88, 20),
        "e0:bad": (35.0, 10.88, 20),
    }
    report = ev.evaluate_against_truth(preds, truth)
    assert report.mean_block["pearson"] == pytest.approx(1.0, abs=1e-9)
    assert report.mean_block["outlier_ratio"] == 0.0
    assert report.ci_block["rmse"] < 0.6


def test_report_invariants():
    rng = np.random.default_rng(11)
    subj = {f"k{i}": _panel(rng, 20.0 + 10 * i) for i in range(6)}
    preds = {
        k: ScoreDistribution("logistic", 15.0 + 11 * i + rng.uniform(-4, 4), 1.4)
        for i, k in enumerate(subj)
    }
    report = ev.evaluate(preds, subj)
    for block in (report.mean_block, report.ci_block):
        for name, val in block.items():
            if name in ("pearson", "spearman") and val is not None:
                assert -1.0 <= val <= 1.0
    assert 0.0 <= report.mean_block["outlier_ratio"] <= 1.0
    assert report.ci_block["rmse"] >= 0.0


# ---------------------------------------------------------------------------
# CSV round trips
# ---------------------------------------------------------------------------


def test_predictions_csv_round_trip(tmp_path):
    rows = [
        ("e0:ref", ScoreDistribution("logistic", 97.25, 1.7918)),
        ("e0:lp35", ScoreDistribution("gaussian", 34.125, 2.25)),
    ]
    p = tmp_path / "preds.csv"
    ev.write_predictions_csv(p, rows)
    back = ev.read_predictions_csv(p)
    assert back["e0:ref"] == rows[0][1]
    assert back["e0:lp35"] == rows[1][1]
    assert p.read_text().splitlines()[0] == "condition_id,mu,log_scale,family"


def test_subjective_csv_round_trip(tmp_path):
    rows = [("a", "L001", 50.5), ("a", "L002", 60.25), ("b", "L001", 10.0)]
    p = tmp_path / "subj.csv"
    ev.write_subjective_csv(p, rows)
    back = ev.read_subjective_csv(p)
    assert back == {"a": [50.5, 60.25], "b": [10.0]}


def test_truth_csv_round_trip(tmp_path):
    rows = [("a", 98.0, 10.8828, 20), ("b", 35.0, 10.8828, 20)]
    p = tmp_path / "truth.csv"
    ev.write_truth_csv(p, rows)
    assert ev.read_truth_csv(p) == {"a": (98.0, 10.8828, 20), "b": (35.0, 10.8828, 20)}
