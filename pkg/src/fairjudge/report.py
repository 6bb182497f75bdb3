"""Report emitters: CSV/JSON tables and a self-contained static HTML report.

Output bytes are a pure function of the bundle; run timestamps are
injected by the caller, never sampled here, so golden-file comparisons
hold across runs.
"""

from __future__ import annotations

import csv
import html
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fairjudge.metrics import (
    InconsistencyRow,
    LabelFinding,
    ModelFairnessSummary,
    mean_inconsistency,
)
from fairjudge.statcore import BernoulliTestResult

SUMMARY_CSV_COLUMNS = [
    "model",
    "inconsistency",
    "bias_count",
    "bias_bernoulli_p",
    "imbalance_count",
    "imbalance_bernoulli_p",
    "n_labels_tested",
]


@dataclass
class ReportBundle:
    """Everything the emitters need for one audit run."""

    summaries: list[ModelFairnessSummary]
    findings: list[LabelFinding]
    inconsistency_rows: dict[str, list[InconsistencyRow]]  # model -> rows
    pooled: dict[str, BernoulliTestResult]  # metric -> pooled test
    run_metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        models = {s.model_name for s in self.summaries}
        extra = set(self.inconsistency_rows) - models
        if extra:
            raise ValueError(f"inconsistency rows for unknown models: {sorted(extra)}")


def _fmt3(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.3f}"


def _fmt_p(x: Optional[float]) -> str:
    # Rounded display ("0.00" style); exact values live in summary.json.
    return "" if x is None else f"{x:.2f}"


def _bern_dict(b: BernoulliTestResult) -> dict:
    return {
        "n_trials": b.n_trials,
        "n_significant": b.n_significant,
        "threshold": b.threshold,
        "p_value": b.p_value,
    }


def _bern_from_dict(d: dict) -> BernoulliTestResult:
    return BernoulliTestResult(
        n_trials=d["n_trials"],
        n_significant=d["n_significant"],
        threshold=d["threshold"],
        p_value=d["p_value"],
    )


def bundle_to_dict(bundle: ReportBundle) -> dict:
    return {
        "summaries": [
            {
                "model_name": s.model_name,
                "inconsistency": s.inconsistency,
                "bias_count": s.bias_count,
                "imbalance_count": s.imbalance_count,
                "bias_bernoulli": _bern_dict(s.bias_bernoulli),
                "imbalance_bernoulli": _bern_dict(s.imbalance_bernoulli),
                "n_labels_tested": s.n_labels_tested,
            }
            for s in sorted(bundle.summaries, key=lambda s: s.model_name)
        ],
        "mean_inconsistency": mean_inconsistency(bundle.summaries),
        "pooled": {m: _bern_dict(b) for m, b in sorted(bundle.pooled.items())},
        "inconsistency_rows": {
            model: [
                {
                    "label_id": r.label_id,
                    "p_l": r.p_l,
                    "w_l": r.w_l,
                    "n_missing": r.n_missing,
                    "n_changed": r.n_changed,
                }
                for r in rows
            ]
            for model, rows in sorted(bundle.inconsistency_rows.items())
        },
        "run_metadata": bundle.run_metadata,
    }


def _finding_dict(model: str, f: LabelFinding) -> dict:
    return {
        "model_name": model,
        "label_id": f.label_id,
        "metric": f.metric,
        "joint_p": None if math.isnan(f.joint_p) else f.joint_p,
        "min_coef_p": f.min_coef_p,
        "significant": f.significant,
        "direction_summary": [[v, c] for v, c in f.direction_summary],
    }


def emit_tables(
    bundle: ReportBundle, out_dir: str | Path, findings_by_model: Optional[dict] = None
) -> list[Path]:
    """Write summary.csv, summary.json, findings.jsonl, and per-label CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    summary_csv = out / "summary.csv"
    with summary_csv.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_CSV_COLUMNS)
        for s in sorted(bundle.summaries, key=lambda s: s.model_name):
            writer.writerow(
                [
                    s.model_name,
                    _fmt3(s.inconsistency),
                    s.bias_count,
                    _fmt_p(s.bias_bernoulli.p_value),
                    s.imbalance_count,
                    _fmt_p(s.imbalance_bernoulli.p_value),
                    s.n_labels_tested,
                ]
            )
    written.append(summary_csv)

    summary_json = out / "summary.json"
    summary_json.write_text(
        json.dumps(bundle_to_dict(bundle), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append(summary_json)

    findings_by_model = findings_by_model or {}
    findings_jsonl = out / "findings.jsonl"
    with findings_jsonl.open("w", encoding="utf-8") as fh:
        for model in sorted(findings_by_model):
            for f in findings_by_model[model]:
                fh.write(json.dumps(_finding_dict(model, f), sort_keys=True) + "\n")
    written.append(findings_jsonl)

    for metric in ("bias", "imbalance"):
        path = out / f"labels_{metric}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "label_id", "joint_p", "min_coef_p", "significant"])
            for model in sorted(findings_by_model):
                for f in findings_by_model[model]:
                    if f.metric != metric:
                        continue
                    writer.writerow(
                        [model, f.label_id, _fmt3(f.joint_p), _fmt3(f.min_coef_p), int(f.significant)]
                    )
        written.append(path)

    path = out / "labels_inconsistency.csv"
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "label_id", "p_l", "w_l", "n_changed", "n_missing"])
        for model, rows in sorted(bundle.inconsistency_rows.items()):
            for r in rows:
                writer.writerow([model, r.label_id, _fmt3(r.p_l), r.w_l, r.n_changed, r.n_missing])
    written.append(path)

    return written


# ---------------------------------------------------------------------------
# HTML report: inline SVG charts, no scripts fetched, data embedded as JSON.

_CSS = """
body { font-family: system-ui, sans-serif; margin: 2rem auto; max-width: 64rem; color: #222; }
h1 { border-bottom: 2px solid #345; padding-bottom: 0.3rem; }
table { border-collapse: collapse; margin: 1rem 0; }
th, td { border: 1px solid #bbb; padding: 0.35rem 0.7rem; text-align: right; }
th:first-child, td:first-child { text-align: left; }
.chart { margin: 1.5rem 0; }
.chart h2 { font-size: 1.1rem; }
.legend { font-size: 0.85rem; color: #555; }
"""


def _bar_svg(values: list[tuple[str, Optional[float]]], unit: str = "") -> str:
    """Horizontal bar chart; one bar per model."""
    width, bar_h, gap, label_w = 640, 24, 10, 200
    vmax = max([v for _, v in values if v is not None] + [1e-9])
    height = len(values) * (bar_h + gap) + gap
    parts = [f'<svg viewBox="0 0 {width} {height}" width="{width}" height="{height}">']
    for i, (name, v) in enumerate(values):
        y = gap + i * (bar_h + gap)
        shown = 0.0 if v is None else v
        w = (width - label_w - 80) * shown / vmax
        parts.append(
            f'<text x="{label_w - 8}" y="{y + bar_h * 0.7:.1f}" text-anchor="end" '
            f'font-size="13">{html.escape(name)}</text>'
        )
        parts.append(f'<rect x="{label_w}" y="{y}" width="{w:.2f}" height="{bar_h}" fill="#4878a8"/>')
        text = "n/a" if v is None else f"{v:.3f}{unit}"
        parts.append(
            f'<text x="{label_w + w + 6:.2f}" y="{y + bar_h * 0.7:.1f}" font-size="13">{text}</text>'
        )
    parts.append("</svg>")
    return "".join(parts)


def _pie_svg(k: int, n: int, title: str) -> str:
    """Two-slice pie: significant vs non-significant labels."""
    r, cx, cy = 56, 64, 64
    if n <= 0:
        frac = 0.0
    else:
        frac = k / n
    parts = [f'<svg viewBox="0 0 340 128" width="340" height="128">']
    if frac >= 1.0:
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="{r}" fill="#b2503c"/>')
    elif frac <= 0.0:
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="{r}" fill="#7fa66f"/>')
    else:
        ang = 2 * math.pi * frac
        x = cx + r * math.sin(ang)
        y = cy - r * math.cos(ang)
        big = 1 if frac > 0.5 else 0
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="{r}" fill="#7fa66f"/>')
        parts.append(
            f'<path d="M{cx},{cy} L{cx},{cy - r} A{r},{r} 0 {big} 1 {x:.2f},{y:.2f} Z" fill="#b2503c"/>'
        )
    parts.append(
        f'<text x="136" y="58" font-size="13">{html.escape(title)}</text>'
        f'<text x="136" y="78" font-size="13">{k} significant / {n} tested</text>'
    )
    parts.append("</svg>")
    return "".join(parts)


def emit_html(bundle: ReportBundle, out_dir: str | Path) -> Path:
    """Write a single self-contained report.html.

    One chart container per metric: the bar chart compares models, and the
    bias/imbalance containers add a per-model significant-label pie. Chart
    data is embedded verbatim as JSON for machine consumption.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = sorted(bundle.summaries, key=lambda s: s.model_name)
    data_json = json.dumps(bundle_to_dict(bundle), sort_keys=True)

    sections = []
    sections.append(
        '<div class="chart" id="chart-inconsistency"><h2>Inconsistency</h2>'
        + _bar_svg([(s.model_name, s.inconsistency) for s in summaries])
        + '<p class="legend">Weighted proportion of baseline/variant pairs with a changed prediction.</p></div>'
    )
    for metric, count_of, bern_of in (
        ("bias", lambda s: s.bias_count, lambda s: s.bias_bernoulli),
        ("imbalance", lambda s: s.imbalance_count, lambda s: s.imbalance_bernoulli),
    ):
        pies = "".join(
            _pie_svg(count_of(s), bern_of(s).n_trials, s.model_name) for s in summaries
        )
        pooled = bundle.pooled.get(metric)
        pooled_note = (
            f'<p class="legend">Pooled across models: {pooled.n_significant} / {pooled.n_trials} '
            f"significant, tail p = {pooled.p_value:.3g} (display {_fmt_p(pooled.p_value)})</p>"
            if pooled
            else ""
        )
        sections.append(
            f'<div class="chart" id="chart-{metric}"><h2>{metric.capitalize()}: significant labels</h2>'
            + _bar_svg([(s.model_name, float(count_of(s))) for s in summaries])
            + pies
            + pooled_note
            + "</div>"
        )

    table_rows = "".join(
        "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>".format(
            html.escape(s.model_name),
            _fmt3(s.inconsistency),
            s.bias_count,
            _fmt_p(s.bias_bernoulli.p_value),
            s.imbalance_count,
            _fmt_p(s.imbalance_bernoulli.p_value),
            s.n_labels_tested,
        )
        for s in summaries
    )
    header = "".join(f"<th>{c}</th>" for c in SUMMARY_CSV_COLUMNS)

    doc = (
        "<!DOCTYPE html><html><head><meta charset='utf-8'>"
        "<title>LLM sentencing fairness audit</title>"
        f"<style>{_CSS}</style></head><body>"
        "<h1>LLM sentencing fairness audit</h1>"
        f'<script type="application/json" id="report-data">{data_json}</script>'
        + "".join(sections)
        + f"<table><tr>{header}</tr>{table_rows}</table>"
        + "<p class='legend'>Displayed p-values are rounded; exact values are in the embedded JSON "
        "and summary.json.</p>"
        "</body></html>"
    )
    path = out / "report.html"
    path.write_text(doc, encoding="utf-8")
    return path


def load_summary_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def bundle_from_dict(data: dict) -> ReportBundle:
    """Inverse of bundle_to_dict (findings travel separately in findings.jsonl)."""
    summaries = [
        ModelFairnessSummary(
            model_name=s["model_name"],
            inconsistency=s["inconsistency"],
            bias_count=s["bias_count"],
            imbalance_count=s["imbalance_count"],
            bias_bernoulli=_bern_from_dict(s["bias_bernoulli"]),
            imbalance_bernoulli=_bern_from_dict(s["imbalance_bernoulli"]),
            n_labels_tested=s["n_labels_tested"],
        )
        for s in data["summaries"]
    ]
    rows = {
        model: [
            InconsistencyRow(
                label_id=r["label_id"],
                p_l=r["p_l"],
                w_l=r["w_l"],
                n_missing=r["n_missing"],
                n_changed=r.get("n_changed", 0),
            )
            for r in rlist
        ]
        for model, rlist in data.get("inconsistency_rows", {}).items()
    }
    pooled = {m: _bern_from_dict(b) for m, b in data.get("pooled", {}).items()}
    return ReportBundle(
        summaries=summaries,
        findings=[],
        inconsistency_rows=rows,
        pooled=pooled,
        run_metadata=data.get("run_metadata", {}),
    )
