"""Benchmark metrics: correlations, outlier ratio, CI error, report assembly.

Mean-score quality is summarized by Pearson/Spearman correlation between
predicted and subjective means plus the outlier ratio (fraction of
conditions whose predicted mean falls outside the subjective 95% CI,
two-sided, boundary counts as inside). CI quality compares interval
half-widths: correlations plus RMSE.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    IdMismatchError,
    LengthMismatchError,
    MissingCiError,
    ToolkitError,
)
from .prob import ConfidenceInterval, ScoreDistribution, confidence_interval, mushra_stats
from .util import atomic_write_text, fmt_float


def rank_average(x) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank range."""
    arr = np.asarray(x, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        avg = 0.5 * (i + j) + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatchError(f"need equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise LengthMismatchError("need at least two points")
    return x, y


def pearson(x, y) -> float:
    """Product-moment correlation; undefined (raises) for constant input."""
    x, y = _check_pair(x, y)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInputError("correlation undefined: constant input vector")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError("correlation undefined: constant input vector")
    return float(np.sum(dx * dy) / (sx * sy))


def spearman(x, y) -> float:
    """Pearson correlation of average-tie ranks."""
    x, y = _check_pair(x, y)
    return pearson(rank_average(x), rank_average(y))


@dataclass
class ConditionResult:
    excerpt_id: str
    condition_id: str
    subjective_mean: float
    subjective_ci: ConfidenceInterval
    predicted_mean: float
    predicted_ci: ConfidenceInterval
    n_listeners: int


def outlier_ratio(results) -> float:
    """Fraction of conditions whose predicted mean is outside the subjective CI."""
    if not results:
        raise ToolkitError("outlier ratio needs at least one condition")
    n_out = 0
    for r in results:
        if r.subjective_ci is None:
            raise MissingCiError(f"{r.condition_id}: subjective CI missing")
        if not r.subjective_ci.contains(r.predicted_mean):
            n_out += 1
    return n_out / len(results)


def ci_rmse(results) -> float:
    """RMSE between predicted and subjective CI half-widths."""
    if not results:
        raise ToolkitError("CI RMSE needs at least one condition")
    total = 0.0
    for r in results:
        if r.subjective_ci is None or r.predicted_ci is None:
            raise MissingCiError(f"{r.condition_id}: CI missing")
        d = r.predicted_ci.half_width - r.subjective_ci.half_width
        total += d * d
    return float(np.sqrt(total / len(results)))


@dataclass
class EvalReport:
    name: str
    n_conditions: int
    mean_block: dict
    ci_block: dict
    notes: list = field(default_factory=list)
    conditions: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_conditions": self.n_conditions,
            "mean_block": self.mean_block,
            "ci_block": self.ci_block,
            "notes": self.notes,
            "conditions": [
                {
                    "condition_id": c.condition_id,
                    "excerpt_id": c.excerpt_id,
                    "subjective_mean": c.subjective_mean,
                    "subjective_lo": c.subjective_ci.lo,
                    "subjective_hi": c.subjective_ci.hi,
                    "predicted_mean": c.predicted_mean,
                    "predicted_lo": c.predicted_ci.lo,
                    "predicted_hi": c.predicted_ci.hi,
                    "n_listeners": c.n_listeners,
                }
                for c in self.conditions
            ],
        }


def _corr_or_note(fn, x, y, label, notes):
    try:
        return fn(x, y)
    except DegenerateInputError as exc:
        notes.append(f"{label}: undefined ({exc})")
        return None


def summarize(results, name: str = "") -> EvalReport:
    """Metric blocks over a list of ConditionResult rows (any order)."""
    results = sorted(results, key=lambda r: (r.excerpt_id, r.condition_id))
    pm = [r.predicted_mean for r in results]
    sm = [r.subjective_mean for r in results]
    phw = [r.predicted_ci.half_width for r in results]
    shw = [r.subjective_ci.half_width for r in results]
    notes = []
    mean_block = {
        "pearson": _corr_or_note(pearson, sm, pm, "mean pearson", notes),
        "spearman": _corr_or_note(spearman, sm, pm, "mean spearman", notes),
        "outlier_ratio": outlier_ratio(results),
    }
    ci_block = {
        "pearson": _corr_or_note(pearson, shw, phw, "ci pearson", notes),
        "spearman": _corr_or_note(spearman, shw, phw, "ci spearman", notes),
        "rmse": ci_rmse(results),
    }
    return EvalReport(
        name=name,
        n_conditions=len(results),
        mean_block=mean_block,
        ci_block=ci_block,
        notes=notes,
        conditions=results,
    )


def _split_key(key: str) -> tuple[str, str]:
    if ":" in key:
        e, c = key.split(":", 1)
        return e, c
    return "", key


def evaluate(predictions, subjective, level: float = 0.95, name: str = "") -> EvalReport:
    """Score predicted distributions against per-listener subjective data.

    predictions: mapping condition key -> ScoreDistribution.
    subjective:  mapping condition key -> sequence of listener scores.
    The predicted CI uses the panel size N of each condition.
    """
    missing = sorted(set(predictions) - set(subjective))
    if missing:
        raise IdMismatchError(f"no subjective scores for condition {missing[0]!r}")
    missing = sorted(set(subjective) - set(predictions))
    if missing:
        raise IdMismatchError(f"no prediction for condition {missing[0]!r}")
    results = []
    for key in sorted(predictions):
        dist = predictions[key]
        scores = subjective[key]
        s_mean, s_ci = mushra_stats(scores)
        n = len(scores)
        p_ci = confidence_interval(dist.std, n, dist.mu, level)
        excerpt_id, cond = _split_key(key)
        results.append(
            ConditionResult(
                excerpt_id=excerpt_id,
                condition_id=cond,
                subjective_mean=s_mean,
                subjective_ci=s_ci,
                predicted_mean=dist.mu,
                predicted_ci=p_ci,
                n_listeners=n,
            )
        )
    return summarize(results, name=name)


def evaluate_against_truth(predictions, truth, level: float = 0.95, name: str = "") -> EvalReport:
    """Like evaluate(), but the subjective side is a known ground truth.

    truth: mapping condition key -> (mean, std, n_listeners). Used for the
    synthetic closed loop where the generating distribution is available.
    """
    missing = sorted(set(predictions) - set(truth))
    if missing:
        raise IdMismatchError(f"no truth entry for condition {missing[0]!r}")
    missing = sorted(set(truth) - set(predictions))
    if missing:
        raise IdMismatchError(f"no prediction for condition {missing[0]!r}")
    results = []
    for key in sorted(predictions):
        dist = predictions[key]
        t_mean, t_std, n = truth[key]
        s_ci = confidence_interval(t_std, n, t_mean, level)
        p_ci = confidence_interval(dist.std, n, dist.mu, level)
        excerpt_id, cond = _split_key(key)
        results.append(
            ConditionResult(
                excerpt_id=excerpt_id,
                condition_id=cond,
                subjective_mean=t_mean,
                subjective_ci=s_ci,
                predicted_mean=dist.mu,
                predicted_ci=p_ci,
                n_listeners=n,
            )
        )
    return summarize(results, name=name)


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

PREDICTIONS_HEADER = ["condition_id", "mu", "log_scale", "family"]
SUBJECTIVE_HEADER = ["condition_id", "listener_id", "score"]
TRUTH_HEADER = ["condition_id", "mu_true", "std_true", "n_listeners"]


def write_predictions_csv(path, rows) -> None:
    """rows: iterable of (condition key, ScoreDistribution)."""
    lines = [",".join(PREDICTIONS_HEADER)]
    for key, dist in rows:
        lines.append(f"{key},{fmt_float(dist.mu)},{fmt_float(dist.log_scale)},{dist.family}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_predictions_csv(path) -> dict:
    preds = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTIONS_HEADER:
            raise ToolkitError(f"{path}: expected header {','.join(PREDICTIONS_HEADER)}")
        for row in reader:
            if len(row) != 4:
                raise ToolkitError(f"{path}: bad row {row!r}")
            key, mu, ls, family = row
            preds[key] = ScoreDistribution(family, float(mu), float(ls))
    return preds


def write_subjective_csv(path, rows) -> None:
    """rows: iterable of (condition key, listener_id, score)."""
    lines = [",".join(SUBJECTIVE_HEADER)]
    for key, listener, score in rows:
        lines.append(f"{key},{listener},{fmt_float(score)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_subjective_csv(path) -> dict:
    scores = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SUBJECTIVE_HEADER:
            raise ToolkitError(f"{path}: expected header {','.join(SUBJECTIVE_HEADER)}")
        for row in reader:
            if len(row) != 3:
                raise ToolkitError(f"{path}: bad row {row!r}")
            scores.setdefault(row[0], []).append(float(row[2]))
    return scores


def write_truth_csv(path, rows) -> None:
    """rows: iterable of (condition key, mu_true, std_true, n_listeners)."""
    lines = [",".join(TRUTH_HEADER)]
    for key, mu, std, n in rows:
        lines.append(f"{key},{fmt_float(mu)},{fmt_float(std)},{n}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_truth_csv(path) -> dict:
    truth = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRUTH_HEADER:
            raise ToolkitError(f"{path}: expected header {','.join(TRUTH_HEADER)}")
        for row in reader:
            if len(row) != 4:
                raise ToolkitError(f"{path}: bad row {row!r}")
            truth[row[0]] = (float(row[1]), float(row[2]), int(row[3]))
    return truth
