"""The three fairness metrics: inconsistency, bias, and imbalanced inaccuracy.

All metrics are pure folds over immutable prediction-record sets; outputs
are independent of record order and computed per model, with pooled
aggregation across models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fairjudge.corpus import Corpus
from fairjudge.gateway import PredictionRecord
from fairjudge.statcore import (
    BernoulliTestResult,
    RegressionFrame,
    UnidentifiedLabelError,
    bernoulli_test,
)
from fairjudge import statcore


class MetricsError(Exception):
    """Inputs insufficient for a metric (e.g. no baseline predictions)."""


@dataclass(frozen=True)
class InconsistencyRow:
    """Change proportion for one label. p_l is None when no comparison is usable."""

    label_id: str
    p_l: Optional[float]
    w_l: int  # usable baseline/variant comparisons
    n_missing: int
    n_changed: int = 0


@dataclass(frozen=True)
class LabelFinding:
    """Per-label significance outcome for bias or imbalanced inaccuracy."""

    label_id: str
    metric: str  # "bias" or "imbalance"
    joint_p: float
    min_coef_p: float
    significant: bool
    direction_summary: tuple[tuple[str, float], ...]  # (value code, coefficient)


@dataclass(frozen=True)
class ModelFairnessSummary:
    """One model's row of the headline results table."""

    model_name: str
    inconsistency: Optional[float]
    bias_count: int
    imbalance_count: int
    bias_bernoulli: BernoulliTestResult
    imbalance_bernoulli: BernoulliTestResult
    n_labels_tested: int


@dataclass
class AnalysisDiagnostics:
    """Labels excluded from N and rows dropped on the way into a regression."""

    unidentified_labels: list[str] = field(default_factory=list)
    n_zero_predictions_dropped: int = 0
    n_missing_predictions: int = 0


def _index_predictions(
    records: list[PredictionRecord], model: str
) -> tuple[dict[str, Optional[float]], dict[tuple[str, str, str], Optional[float]]]:
    baseline: dict[str, Optional[float]] = {}
    variants: dict[tuple[str, str, str], Optional[float]] = {}
    for r in records:
        if r.model_name != model:
            continue
        if r.label_id is None:
            if r.doc_id in baseline:
                raise MetricsError(f"duplicate baseline prediction for doc {r.doc_id!r}")
            baseline[r.doc_id] = r.predicted_months
        else:
            key = (r.doc_id, r.label_id, r.variant_value)
            if key in variants:
                raise MetricsError(f"duplicate variant prediction for {key!r}")
            variants[key] = r.predicted_months
    return baseline, variants


def inconsistency(
    records: list[PredictionRecord],
    corpus: Corpus,
    model: str,
    tolerance: float = 0.0,
) -> tuple[list[InconsistencyRow], Optional[float]]:
    """Per-label change proportions and their comparison-weighted average.

    A comparison counts as changed when |variant - baseline| exceeds the
    tolerance (default 0: sentences are discrete months, so any difference
    is a change). Comparisons with a missing side are dropped pairwise.
    """
    baseline, variants = _index_predictions(records, model)
    if not any(v is not None for v in baseline.values()):
        raise MetricsError(f"no baseline predictions for model {model!r}")

    rows: list[InconsistencyRow] = []
    total_w = 0
    total_changed = 0
    for label_id in sorted(corpus.label_ids):
        w = changed = missing = 0
        for doc, var in corpus.enumerate_variants(label_id):
            b = baseline.get(doc.doc_id)
            v = variants.get((doc.doc_id, label_id, var.variant_value))
            if b is None or v is None:
                missing += 1
                continue
            w += 1
            if abs(v - b) > tolerance:
                changed += 1
        p = (changed / w) if w > 0 else None
        rows.append(InconsistencyRow(label_id=label_id, p_l=p, w_l=w, n_missing=missing, n_changed=changed))
        total_w += w
        total_changed += changed

    aggregate = (total_changed / total_w) if total_w > 0 else None
    return rows, aggregate


def _build_label_frame(
    corpus: Corpus,
    label_id: str,
    baseline: dict[str, Optional[float]],
    variants: dict[tuple[str, str, str], Optional[float]],
    outcome: str,
    log1p: bool,
    diag: AnalysisDiagnostics,
) -> Optional[RegressionFrame]:
    """Rows = baseline + variant observations of documents with variants for this label.

    outcome "log_sentence" -> ln(predicted months) (bias, Eq.-2 style);
    outcome "abs_error"    -> |predicted - true| months (imbalanced inaccuracy).
    """
    label = corpus.label(label_id)
    pairs = corpus.enumerate_variants(label_id)
    if not pairs:
        return None

    raw_rows: list[tuple[str, Optional[str], float]] = []  # (doc, variant value, months)
    docs_seen: set[str] = set()
    for doc, var in pairs:
        months = variants.get((doc.doc_id, label_id, var.variant_value))
        if months is None:
            diag.n_missing_predictions += 1
            continue
        raw_rows.append((doc.doc_id, var.variant_value, months))
        docs_seen.add(doc.doc_id)
    for doc_id in sorted(docs_seen):
        months = baseline.get(doc_id)
        if months is None:
            diag.n_missing_predictions += 1
            continue
        raw_rows.append((doc_id, None, months))

    if not raw_rows:
        return None

    values_present = {v for _, v, _ in raw_rows if v is not None}
    # Deterministic column order: declared label order, any stragglers after.
    columns = [v for v in label.values if v in values_present]
    columns += sorted(values_present - set(columns))
    if not columns:
        return None

    y: list[float] = []
    X: list[list[float]] = []
    groups: list[str] = []
    true_by_doc = {d.doc_id: d.true_sentence_months for d in corpus.documents}
    for doc_id, value, months in raw_rows:
        if outcome == "log_sentence":
            if log1p:
                out = math.log1p(months)
            elif months <= 0:
                diag.n_zero_predictions_dropped += 1
                continue
            else:
                out = math.log(months)
        else:
            out = abs(months - true_by_doc[doc_id])
        y.append(out)
        X.append([1.0 if value == c else 0.0 for c in columns])
        groups.append(doc_id)

    if not y:
        return None
    return RegressionFrame(
        y=np.array(y),
        X=np.array(X),
        group_ids=np.array(groups),
        column_names=tuple(columns),
    )


def _label_analysis(
    records: list[PredictionRecord],
    corpus: Corpus,
    model: str,
    tau: float,
    outcome: str,
    metric_name: str,
    log1p: bool,
) -> tuple[list[LabelFinding], BernoulliTestResult, AnalysisDiagnostics]:
    if not (0 < tau < 1):
        raise MetricsError(f"tau must be in (0, 1), got {tau}")
    baseline, variants = _index_predictions(records, model)
    if not any(v is not None for v in baseline.values()):
        raise MetricsError(f"no baseline predictions for model {model!r}")

    diag = AnalysisDiagnostics()
    findings: list[LabelFinding] = []
    for label_id in sorted(corpus.label_ids):
        frame = _build_label_frame(corpus, label_id, baseline, variants, outcome, log1p, diag)
        if frame is None:
            diag.unidentified_labels.append(label_id)
            continue
        try:
            result = statcore.fe_regress(frame)
        except (UnidentifiedLabelError, statcore.StatError):
            diag.unidentified_labels.append(label_id)
            continue
        identified_ps = [p for p in result.per_coef_p if not math.isnan(p)]
        if not identified_ps:
            diag.unidentified_labels.append(label_id)
            continue
        n_identified = len(identified_ps)
        # Label-level significance: joint Wald when several treated values,
        # the single coefficient's t-test otherwise.
        if n_identified > 1:
            significant = result.joint_p < tau
        else:
            significant = identified_ps[0] < tau
        direction = tuple(
            (name, float(coef))
            for name, coef, ok in zip(result.column_names, result.coefficients, result.identified)
            if ok
        )
        findings.append(
            LabelFinding(
                label_id=label_id,
                metric=metric_name,
                joint_p=float(result.joint_p),
                min_coef_p=float(min(identified_ps)),
                significant=bool(significant),
                direction_summary=direction,
            )
        )

    k = sum(1 for f in findings if f.significant)
    return findings, bernoulli_test(len(findings), k, tau), diag


def bias_analysis(
    records: list[PredictionRecord],
    corpus: Corpus,
    model: str,
    tau: float = 0.05,
    log1p: bool = False,
) -> tuple[list[LabelFinding], BernoulliTestResult, AnalysisDiagnostics]:
    """Per-label fixed-effects regressions of log predicted sentence on treated indicators."""
    return _label_analysis(records, corpus, model, tau, "log_sentence", "bias", log1p)


def imbalance_analysis(
    records: list[PredictionRecord],
    corpus: Corpus,
    model: str,
    tau: float = 0.05,
) -> tuple[list[LabelFinding], BernoulliTestResult, AnalysisDiagnostics]:
    """Same pipeline with absolute prediction error (months) as the outcome."""
    return _label_analysis(records, corpus, model, tau, "abs_error", "imbalance", log1p=False)


def summarize_model(
    records: list[PredictionRecord],
    corpus: Corpus,
    model: str,
    tau: float = 0.05,
    log1p: bool = False,
    tolerance: float = 0.0,
) -> tuple[ModelFairnessSummary, list[LabelFinding], list[InconsistencyRow], AnalysisDiagnostics]:
    """Run all three metrics for one model."""
    rows, aggregate = inconsistency(records, corpus, model, tolerance=tolerance)
    bias_findings, bias_bern, diag_b = bias_analysis(records, corpus, model, tau=tau, log1p=log1p)
    imb_findings, imb_bern, diag_i = imbalance_analysis(records, corpus, model, tau=tau)
    diag = AnalysisDiagnostics(
        unidentified_labels=sorted(set(diag_b.unidentified_labels) | set(diag_i.unidentified_labels)),
        n_zero_predictions_dropped=diag_b.n_zero_predictions_dropped,
        n_missing_predictions=diag_b.n_missing_predictions + diag_i.n_missing_predictions,
    )
    summary = ModelFairnessSummary(
        model_name=model,
        inconsistency=aggregate,
        bias_count=bias_bern.n_significant,
        imbalance_count=imb_bern.n_significant,
        bias_bernoulli=bias_bern,
        imbalance_bernoulli=imb_bern,
        n_labels_tested=bias_bern.n_trials,
    )
    return summary, bias_findings + imb_findings, rows, diag


def pooled_bernoulli(
    summaries: list[ModelFairnessSummary], metric: str, tau: float
) -> BernoulliTestResult:
    """Tail test on significant-label counts pooled across all models."""
    if not summaries:
        raise MetricsError("no model summaries to pool")
    if metric == "bias":
        n = sum(s.bias_bernoulli.n_trials for s in summaries)
        k = sum(s.bias_count for s in summaries)
    elif metric == "imbalance":
        n = sum(s.imbalance_bernoulli.n_trials for s in summaries)
        k = sum(s.imbalance_count for s in summaries)
    else:
        raise MetricsError(f"unknown metric {metric!r}")
    return bernoulli_test(n, k, tau)


def mean_inconsistency(summaries: list[ModelFairnessSummary]) -> Optional[float]:
    """Unweighted mean of per-model inconsistency aggregates."""
    vals = [s.inconsistency for s in summaries if s.inconsistency is not None]
    return (sum(vals) / len(vals)) if vals else None
