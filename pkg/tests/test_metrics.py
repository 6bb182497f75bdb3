"""Metric tests: inconsistency arithmetic, planted-effect detection, pooling."""

import math
import random

import pytest

from fairjudge.corpus import CaseDocument, Corpus, CounterfactualVariant, LabelDefinition
from fairjudge.fixtures import default_label_specs, generate_fixture, simulate_predictions
from fairjudge.gateway import PredictionRecord
from fairjudge.metrics import (
    MetricsError,
    bias_analysis,
    imbalance_analysis,
    inconsistency,
    mean_inconsistency,
    pooled_bernoulli,
    summarize_model,
)

MODEL = "m"


def record(doc_id, months, label_id=None, value=None, model=MODEL):
    return PredictionRecord(
        model_name=model,
        doc_id=doc_id,
        label_id=label_id,
        variant_value=value,
        predicted_months=months,
        raw_response="",
        attempt_count=1,
    )


def comparison_corpus(n_docs_a=10, n_docs_b=30):
    """Two binary labels; label A has variants on the first block, B on the second."""
    labels = [
        LabelDefinition("A", "binary", ("a0", "a1"), "a0"),
        LabelDefinition("B", "binary", ("b0", "b1"), "b0"),
    ]
    docs, variants = [], []
    for i in range(n_docs_a + n_docs_b):
        doc_id = f"d{i:03d}"
        docs.append(CaseDocument(doc_id, "facts", 24.0, {"A": "a0", "B": "b0"}))
        if i < n_docs_a:
            variants.append(CounterfactualVariant(doc_id, "A", "a1", "facts'"))
        else:
            variants.append(CounterfactualVariant(doc_id, "B", "b1", "facts'"))
    return Corpus(labels, docs, variants)


def flip_records(corpus, flips_a, flips_b):
    """Baselines all 10 months; flip the first k variants of each label to 20."""
    records = [record(d.doc_id, 10.0) for d in corpus.documents]
    counts = {"A": 0, "B": 0}
    for label_id, flips in (("A", flips_a), ("B", flips_b)):
        for doc, var in corpus.enumerate_variants(label_id):
            counts[label_id] += 1
            months = 20.0 if counts[label_id] <= flips else 10.0
            records.append(record(doc.doc_id, months, label_id, var.variant_value))
    return records


def test_inconsistency_no_changes_zero():
    corpus = comparison_corpus()
    rows, aggregate = inconsistency(flip_records(corpus, 0, 0), corpus, MODEL)
    assert aggregate == 0.0
    assert all(r.p_l == 0.0 for r in rows)


def test_inconsistency_weighted_aggregate_exact():
    # w = (10, 30), p = (0.1, 0.3) -> (1 + 9) / 40 = 0.25 exactly.
    corpus = comparison_corpus(10, 30)
    rows, aggregate = inconsistency(flip_records(corpus, 1, 9), corpus, MODEL)
    by_label = {r.label_id: r for r in rows}
    assert by_label["A"].w_l == 10 and by_label["A"].p_l == 0.1
    assert by_label["B"].w_l == 30 and by_label["B"].p_l == 0.3
    assert aggregate == 0.25


def test_inconsistency_counts_flips_in_fixture():
    corpus = comparison_corpus(20, 0)
    rows, _ = inconsistency(flip_records(corpus, 3, 0), corpus, MODEL)
    row = next(r for r in rows if r.label_id == "A")
    assert row.p_l == pytest.approx(3 / 20)
    assert row.n_changed == 3


def test_inconsistency_missing_dropped_pairwise():
    corpus = comparison_corpus(10, 0)
    records = flip_records(corpus, 2, 0)
    # Null out one variant prediction: w drops, numerator unaffected elsewhere.
    idx = next(i for i, r in enumerate(records) if r.label_id == "A" and r.predicted_months == 10.0)
    records[idx] = record(records[idx].doc_id, None, "A", records[idx].variant_value)
    rows, _ = inconsistency(records, corpus, MODEL)
    row = next(r for r in rows if r.label_id == "A")
    assert row.w_l == 9
    assert row.n_missing == 1
    assert row.n_changed == 2


def test_inconsistency_requires_baselines():
    corpus = comparison_corpus(2, 0)
    with pytest.raises(MetricsError, match="no baseline"):
        inconsistency([record("d000", 5.0, "A", "a1")], corpus, MODEL)


def test_inconsistency_row_order_invariance():
    corpus = comparison_corpus(10, 10)
    records = flip_records(corpus, 2, 5)
    shuffled = records[:]
    random.Random(4).shuffle(shuffled)
    assert inconsistency(records, corpus, MODEL) == inconsistency(shuffled, corpus, MODEL)


def test_inconsistency_aggregate_is_convex_combination():
    corpus = comparison_corpus(10, 30)
    rows, aggregate = inconsistency(flip_records(corpus, 4, 3), corpus, MODEL)
    ps = [r.p_l for r in rows if r.w_l > 0]
    assert min(ps) <= aggregate <= max(ps)


# --- bias_analysis ---------------------------------------------------------

def planted_fixture(n_docs=120, n_labels=4, effect=0.4, seed=5):
    corpus, _ = generate_fixture(seed=seed, n_docs=n_docs, label_specs=default_label_specs(n_labels))
    records = simulate_predictions(
        corpus, MODEL, seed=seed + 1, bias_effects={"L01": effect},
        noise_sigma=0.2, error_scale=0.0,
    )
    return corpus, records


def test_bias_detects_planted_effect():
    corpus, records = planted_fixture()
    findings, bern, diag = bias_analysis(records, corpus, MODEL, tau=0.05)
    by_label = {f.label_id: f for f in findings}
    assert by_label["L01"].significant
    assert by_label["L01"].direction_summary[0][1] > 0.2  # positive planted effect
    assert bern.n_trials == 4
    assert diag.unidentified_labels == []


def test_bias_zero_k_gives_p_one():
    corpus, records = planted_fixture(effect=0.0, n_docs=30)
    findings, bern, _ = bias_analysis(records, corpus, MODEL, tau=0.001)
    if bern.n_significant == 0:
        assert bern.p_value == 1.0


def test_bias_document_scaling_invariance():
    corpus, records = planted_fixture(n_docs=60)
    findings1, _, _ = bias_analysis(records, corpus, MODEL)
    scaled = []
    scale = {d.doc_id: 1.0 + (i % 7) for i, d in enumerate(corpus.documents)}
    for r in records:
        scaled.append(record(r.doc_id, r.predicted_months * scale[r.doc_id], r.label_id, r.variant_value))
    findings2, _, _ = bias_analysis(scaled, corpus, MODEL)
    for f1, f2 in zip(findings1, findings2):
        assert f1.label_id == f2.label_id
        for (v1, c1), (v2, c2) in zip(f1.direction_summary, f2.direction_summary):
            assert math.isclose(c1, c2, abs_tol=1e-8)


def test_bias_zero_predictions_dropped_by_default():
    corpus = comparison_corpus(6, 0)
    records = flip_records(corpus, 0, 0)
    records[0] = record(records[0].doc_id, 0.0)  # one zero baseline
    _, _, diag = bias_analysis(records, corpus, MODEL)
    assert diag.n_zero_predictions_dropped == 1
    _, _, diag1p = bias_analysis(records, corpus, MODEL, log1p=True)
    assert diag1p.n_zero_predictions_dropped == 0


def test_bias_unidentified_label_excluded_from_n():
    corpus = comparison_corpus(6, 0)  # label B has no variants
    records = flip_records(corpus, 3, 0)
    findings, bern, diag = bias_analysis(records, corpus, MODEL)
    assert "B" in diag.unidentified_labels
    assert bern.n_trials == len(findings) == 1


def test_bias_threshold_monotonicity():
    corpus, records = planted_fixture(n_docs=80)
    _, bern_small, _ = bias_analysis(records, corpus, MODEL, tau=0.01)
    _, bern_big, _ = bias_analysis(records, corpus, MODEL, tau=0.05)
    assert bern_small.n_significant <= bern_big.n_significant


# --- imbalance_analysis ----------------------------------------------------

def test_imbalance_perfect_predictor_all_null():
    corpus = comparison_corpus(8, 8)
    records = [record(d.doc_id, d.true_sentence_months) for d in corpus.documents]
    for label_id in corpus.label_ids:
        for doc, var in corpus.enumerate_variants(label_id):
            records.append(record(doc.doc_id, doc.true_sentence_months, label_id, var.variant_value))
    findings, bern, _ = imbalance_analysis(records, corpus, MODEL)
    assert bern.n_significant == 0
    assert bern.p_value == 1.0


def test_imbalance_detects_error_doubling():
    corpus, _ = generate_fixture(seed=9, n_docs=150, label_specs=default_label_specs(3))
    records = simulate_predictions(
        corpus, MODEL, seed=10, error_multipliers={"L02": 2.0},
        noise_sigma=0.05, error_scale=0.3,
    )
    findings, _, _ = imbalance_analysis(records, corpus, MODEL)
    by_label = {f.label_id: f for f in findings}
    assert by_label["L02"].significant


# --- pooling and summaries -------------------------------------------------

def summary_with(model, n, k_bias, k_imb):
    from fairjudge.metrics import ModelFairnessSummary
    from fairjudge.statcore import bernoulli_test

    return ModelFairnessSummary(
        model_name=model,
        inconsistency=0.1,
        bias_count=k_bias,
        imbalance_count=k_imb,
        bias_bernoulli=bernoulli_test(n, k_bias, 0.05),
        imbalance_bernoulli=bernoulli_test(n, k_imb, 0.05),
        n_labels_tested=n,
    )


def test_pooled_single_model_identity():
    s = summary_with("a", 65, 27, 19)
    pooled = pooled_bernoulli([s], "bias", 0.05)
    assert pooled == s.bias_bernoulli


def test_pooled_across_models_matches_totals():
    summaries = [summary_with("a", 65, 27, 19), summary_with("b", 65, 30, 29),
                 summary_with("c", 65, 30, 35)]
    pooled = pooled_bernoulli(summaries, "bias", 0.05)
    assert pooled.n_trials == 195 and pooled.n_significant == 87
    assert pooled.p_value < 1e-15


def test_pooled_all_zero_is_one():
    summaries = [summary_with("a", 65, 0, 0), summary_with("b", 65, 0, 0)]
    assert pooled_bernoulli(summaries, "bias", 0.05).p_value == 1.0
    with pytest.raises(MetricsError):
        pooled_bernoulli([], "bias", 0.05)


def test_summarize_model_counts_match_findings():
    corpus, records = planted_fixture(n_docs=100)
    summary, findings, rows, diag = summarize_model(records, corpus, MODEL)
    bias_sig = sum(1 for f in findings if f.metric == "bias" and f.significant)
    imb_sig = sum(1 for f in findings if f.metric == "imbalance" and f.significant)
    assert summary.bias_count == bias_sig == summary.bias_bernoulli.n_significant
    assert summary.imbalance_count == imb_sig
    assert summary.bias_count <= summary.n_labels_tested
    assert mean_inconsistency([summary]) == summary.inconsistency
