"""Report rendering: aligned text table, JSON, and an SVG scatter plot."""

from __future__ import annotations

import json

from .evaluate import ConditionResult, EvalReport
from .prob import ConfidenceInterval
from .util import atomic_write_text, canonical_json


def _fmt(value) -> str:
    if value is None:
        return "undefined"
    return f"{value:.4f}"


def format_table(report: EvalReport) -> str:
    rows = [
        ("mean.pearson", report.mean_block["pearson"]),
        ("mean.spearman", report.mean_block["spearman"]),
        ("mean.outlier_ratio", report.mean_block["outlier_ratio"]),
        ("ci.pearson", report.ci_block["pearson"]),
        ("ci.spearman", report.ci_block["spearman"]),
        ("ci.rmse", report.ci_block["rmse"]),
    ]
    title = report.name or "evaluation"
    width = max(len(name) for name, _ in rows)
    lines = [
        f"{title}  ({report.n_conditions} conditions)",
        "-" * (width + 12),
    ]
    for name, value in rows:
        lines.append(f"{name.ljust(width)}  {_fmt(value)}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def write_report_json(path, report: EvalReport) -> None:
    atomic_write_text(path, canonical_json(report.to_dict()) + "\n")


def read_report_json(path) -> EvalReport:
    with open(path) as fh:
        d = json.load(fh)
    conditions = [
        ConditionResult(
            excerpt_id=c["excerpt_id"],
            condition_id=c["condition_id"],
            subjective_mean=c["subjective_mean"],
            subjective_ci=ConfidenceInterval(
                c["subjective_lo"], c["subjective_hi"], 0.95, max(c["n_listeners"] - 1, 1)
            ),
            predicted_mean=c["predicted_mean"],
            predicted_ci=ConfidenceInterval(
                c["predicted_lo"], c["predicted_hi"], 0.95, max(c["n_listeners"] - 1, 1)
            ),
            n_listeners=c["n_listeners"],
        )
        for c in d["conditions"]
    ]
    return EvalReport(
        name=d["name"],
        n_conditions=d["n_conditions"],
        mean_block=d["mean_block"],
        ci_block=d["ci_block"],
        notes=d["notes"],
        conditions=conditions,
    )


# ---------------------------------------------------------------------------
# SVG scatter: predicted vs subjective means with 95% CI bars, axes 0..100
# ---------------------------------------------------------------------------

_SIZE = 560
_MARGIN = 60


def _to_px(v: float) -> float:
    # score 0..100 -> plot coordinates (y handled by caller flip)
    return _MARGIN + (_SIZE - 2 * _MARGIN) * v / 100.0


def _px(v: float) -> str:
    return f"{v:.2f}"


def render_scatter_svg(report: EvalReport) -> str:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect x="0" y="0" width="{_SIZE}" height="{_SIZE}" fill="white"/>',
    ]
    x0, x1 = _MARGIN, _SIZE - _MARGIN
    parts.append(
        f'<rect x="{x0}" y="{x0}" width="{x1 - x0}" height="{x1 - x0}" '
        'fill="none" stroke="black" stroke-width="1"/>'
    )
    for tick in range(0, 101, 20):
        px = _to_px(tick)
        py = _SIZE - px
        parts.append(
            f'<line x1="{_px(px)}" y1="{x1}" x2="{_px(px)}" y2="{x1 + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_px(px)}" y="{x1 + 18}" font-size="11" text-anchor="middle">{tick}</text>'
        )
        parts.append(
            f'<line x1="{x0 - 5}" y1="{_px(py)}" x2="{x0}" y2="{_px(py)}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x0 - 8}" y="{_px(py + 4)}" font-size="11" text-anchor="end">{tick}</text>'
        )
    parts.append(
        f'<line x1="{_to_px(0):.2f}" y1="{_SIZE - _to_px(0):.2f}" '
        f'x2="{_to_px(100):.2f}" y2="{_SIZE - _to_px(100):.2f}" '
        'stroke="#bbbbbb" stroke-dasharray="4 3"/>'
    )
    title = report.name or "evaluation"
    parts.append(
        f'<text x="{_SIZE / 2:.0f}" y="30" font-size="14" text-anchor="middle">{title}</text>'
    )
    parts.append(
        f'<text x="{_SIZE / 2:.0f}" y="{_SIZE - 14}" font-size="12" '
        'text-anchor="middle">subjective mean score</text>'
    )
    parts.append(
        f'<text x="16" y="{_SIZE / 2:.0f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {_SIZE / 2:.0f})">predicted mean score</text>'
    )
    for c in sorted(report.conditions, key=lambda r: (r.excerpt_id, r.condition_id)):
        sx = _to_px(c.subjective_mean)
        py = _SIZE - _to_px(c.predicted_mean)
        slo, shi = _to_px(c.subjective_ci.lo), _to_px(c.subjective_ci.hi)
        plo, phi = _SIZE - _to_px(c.predicted_ci.lo), _SIZE - _to_px(c.predicted_ci.hi)
        parts.append(
            f'<line x1="{_px(slo)}" y1="{_px(py)}" x2="{_px(shi)}" y2="{_px(py)}" '
            'stroke="#6688cc" stroke-width="1"/>'
        )
        parts.append(
            f'<line x1="{_px(sx)}" y1="{_px(plo)}" x2="{_px(sx)}" y2="{_px(phi)}" '
            'stroke="#6688cc" stroke-width="1"/>'
        )
        parts.append(
            f'<circle cx="{_px(sx)}" cy="{_px(py)}" r="2.5" fill="#224488" fill-opacity="0.7"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_scatter_svg(path, report: EvalReport) -> None:
    atomic_write_text(path, render_scatter_svg(report))
