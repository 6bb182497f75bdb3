"""Command-line orchestration: fixture, generate, ingest, analyze, report.

Exit codes are a stable CI contract: 0 success, 1 usage/config error,
2 data error, 3 endpoint authentication error. Progress goes to stderr,
data only to files.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from fairjudge import __version__
from fairjudge.corpus import CorpusError, corpus_digest, load_corpus
from fairjudge.fixtures import FixtureSpec, default_spec, write_fixture
from fairjudge.gateway import (
    AuthenticationError,
    GatewayError,
    ModelConfig,
    PredictionFormatError,
    read_predictions,
    run_generation,
    write_predictions,
)
from fairjudge.metrics import MetricsError, pooled_bernoulli, summarize_model
from fairjudge.report import ReportBundle, bundle_from_dict, emit_html, emit_tables, load_summary_json

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_AUTH = 3


class ConfigError(Exception):
    pass


def _read_config(path: str | None) -> dict[str, str]:
    """Plain key=value file; '#' starts a comment. CLI flags override these."""
    if not path:
        return {}
    config: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        config[key.strip()] = value.strip()
    return config


def _merged(config: dict, key: str, flag_value, default=None):
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


@click.group()
@click.version_option(version=__version__)
def cli() -> None:
    """Audit the judicial fairness of LLM sentencing predictions."""


@cli.command()
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Fixture spec JSON; the shipped default is used when omitted.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--docs", "n_docs", type=int, default=None, help="Override the spec's document count.")
@click.option("--predictions/--no-predictions", "with_predictions", default=True,
              help="Also write stub prediction files with the planted effects.")
def fixture(seed: int, spec_path: str | None, out_dir: str, n_docs: int | None, with_predictions: bool) -> None:
    """Generate a synthetic corpus (and stub predictions) for offline runs."""
    spec = FixtureSpec.from_json(spec_path) if spec_path else default_spec()
    if n_docs is not None:
        spec = FixtureSpec(
            n_docs=n_docs,
            labels=spec.labels,
            bias_effects=spec.bias_effects,
            error_multipliers=spec.error_multipliers,
            noise_sigma=spec.noise_sigma,
            sentence_log_mean=spec.sentence_log_mean,
            sentence_log_sigma=spec.sentence_log_sigma,
            stub_models=spec.stub_models,
        )
    meta = write_fixture(spec, seed=seed, out_dir=out_dir, with_predictions=with_predictions)
    click.echo(f"fixture written to {out_dir} ({meta['n_docs']} docs, {len(meta['labels'])} labels)", err=True)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--corpus", "corpus_dir", type=click.Path(file_okay=False), default=None)
@click.option("--api-url", default=None)
@click.option("--model", "model_name", default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--provider", default=None)
@click.option("--api-key-env", default=None)
@click.option("--concurrency", type=int, default=None)
@click.option("--retries", type=int, default=None)
@click.option("--cache-dir", default=None)
@click.option("--template-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--labels", default=None, help="Comma-separated label subset.")
@click.option("--out", "out_path", default=None, help="predictions.jsonl output path.")
def generate(config_path, corpus_dir, api_url, model_name, temperature, provider,
             api_key_env, concurrency, retries, cache_dir, template_file, labels, out_path) -> None:
    """Query a chat-completions endpoint for every baseline document and variant."""
    config = _read_config(config_path)
    corpus_dir = _merged(config, "corpus", corpus_dir)
    api_url = _merged(config, "api_url", api_url)
    model_name = _merged(config, "model", model_name)
    out_path = _merged(config, "out", out_path)
    if not corpus_dir or not api_url or not model_name or not out_path:
        raise ConfigError("generate requires --corpus, --api-url, --model, and --out")

    model_config = ModelConfig(
        api_url=api_url,
        model_name=model_name,
        temperature=float(_merged(config, "temperature", temperature, 0.0)),
        provider_name=_merged(config, "provider", provider),
        api_key_env=_merged(config, "api_key_env", api_key_env, "FAIRJUDGE_API_KEY"),
        max_concurrency=int(_merged(config, "concurrency", concurrency, 4)),
        max_retries=int(_merged(config, "retries", retries, 3)),
    )
    corpus = load_corpus(corpus_dir)
    cache = _merged(config, "cache_dir", cache_dir, str(Path(out_path).parent / "cache"))
    template_path = _merged(config, "template_file", template_file)
    kwargs = {}
    if template_path:
        kwargs["template"] = Path(template_path).read_text(encoding="utf-8")
    label_list = _split_labels(_merged(config, "labels", labels))

    def progress(done: int, total: int) -> None:
        click.echo(f"\r{done}/{total} records", err=True, nl=(done == total))

    records = run_generation(
        corpus, model_config, cache, labels=label_list, progress=progress, **kwargs
    )
    if records and all(r.predicted_months is None for r in records):
        raise GatewayError(
            "no record produced a usable prediction; endpoint unreachable or misconfigured"
        )
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_predictions(records, out_path)
    n_missing = sum(1 for r in records if r.predicted_months is None)
    click.echo(f"wrote {len(records)} records ({n_missing} missing) to {out_path}", err=True)


def _split_labels(raw: str | None) -> list[str] | None:
    if not raw:
        return None
    return [part.strip() for part in raw.split(",") if part.strip()]


@cli.command()
@click.option("--corpus", "corpus_dir", type=click.Path(file_okay=False), required=True)
@click.option("--predictions", "predictions_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_path", required=True)
def ingest(corpus_dir, predictions_path, out_path) -> None:
    """Validate externally produced predictions against a corpus and normalize them."""
    corpus = load_corpus(corpus_dir)
    records = read_predictions(predictions_path)
    for i, r in enumerate(records, start=1):
        if not corpus.has_document(r.doc_id):
            raise PredictionFormatError(f"record {i}: unknown doc_id {r.doc_id!r}")
        if r.label_id is not None:
            label = corpus.label(r.label_id)
            if r.variant_value not in label.values:
                raise PredictionFormatError(
                    f"record {i}: value {r.variant_value!r} not admissible for label {r.label_id!r}"
                )
    records.sort(key=lambda r: r.sort_key())
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_predictions(records, out_path)
    click.echo(f"ingested {len(records)} records to {out_path}", err=True)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--corpus", "corpus_dir", type=click.Path(file_okay=False), default=None)
@click.option("--predictions", "prediction_paths", multiple=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--tau", type=float, default=None)
@click.option("--labels", default=None, help="Comma-separated label subset.")
@click.option("--log1p", is_flag=True, default=False,
              help="Use ln(1 + months) so zero predictions are kept.")
@click.option("--tolerance", type=float, default=None,
              help="Change threshold for the inconsistency metric (default 0).")
@click.option("--timestamp", default=None, help="Run timestamp recorded in metadata.")
@click.option("--out", "out_dir", default=None)
def analyze(config_path, corpus_dir, prediction_paths, tau, labels, log1p, tolerance,
            timestamp, out_dir) -> None:
    """Compute all three fairness metrics and emit the report bundle."""
    config = _read_config(config_path)
    corpus_dir = _merged(config, "corpus", corpus_dir)
    out_dir = _merged(config, "out", out_dir)
    tau = float(_merged(config, "tau", tau, 0.05))
    tolerance = float(_merged(config, "tolerance", tolerance, 0.0))
    if not (0 < tau < 1):
        raise ConfigError(f"tau must be in (0, 1), got {tau}")
    if not corpus_dir or not out_dir:
        raise ConfigError("analyze requires --corpus and --out")
    if not prediction_paths:
        raise ConfigError("analyze requires at least one --predictions file")

    corpus = load_corpus(corpus_dir)
    label_filter = _split_labels(_merged(config, "labels", labels))
    if label_filter:
        for label_id in label_filter:
            corpus.label(label_id)

    records = []
    for path in prediction_paths:
        records.extend(read_predictions(path))
    models = sorted({r.model_name for r in records})
    if not models:
        raise MetricsError("nothing to analyze: prediction files contain no records")
    if label_filter:
        records = [r for r in records if r.label_id is None or r.label_id in label_filter]
        if not any(r.label_id is not None for r in records):
            raise MetricsError("nothing to analyze: no variant predictions for the requested labels")
    elif not any(r.label_id is not None for r in records):
        raise MetricsError("nothing to analyze: predictions cover zero labels")

    work_corpus = _restrict_labels(corpus, label_filter) if label_filter else corpus

    summaries, findings_by_model, rows_by_model = [], {}, {}
    diagnostics = {}
    for model in models:
        click.echo(f"analyzing {model} ...", err=True)
        summary, findings, rows, diag = summarize_model(
            records, work_corpus, model, tau=tau, log1p=log1p, tolerance=tolerance
        )
        summaries.append(summary)
        findings_by_model[model] = findings
        rows_by_model[model] = rows
        diagnostics[model] = {
            "unidentified_labels": diag.unidentified_labels,
            "n_zero_predictions_dropped": diag.n_zero_predictions_dropped,
            "n_missing_predictions": diag.n_missing_predictions,
        }

    pooled = {
        "bias": pooled_bernoulli(summaries, "bias", tau),
        "imbalance": pooled_bernoulli(summaries, "imbalance", tau),
    }
    bundle = ReportBundle(
        summaries=summaries,
        findings=[f for fs in findings_by_model.values() for f in fs],
        inconsistency_rows=rows_by_model,
        pooled=pooled,
        run_metadata={
            "tool_version": __version__,
            "tau": tau,
            "log1p": log1p,
            "tolerance": tolerance,
            "corpus_digest": corpus_digest(corpus_dir),
            "label_filter": label_filter,
            "timestamp": timestamp or "",
            "diagnostics": diagnostics,
        },
    )
    emit_tables(bundle, out_dir, findings_by_model=findings_by_model)
    emit_html(bundle, out_dir)
    click.echo(f"report written to {out_dir}", err=True)


def _restrict_labels(corpus, label_filter):
    from fairjudge.corpus import Corpus

    keep = set(label_filter)
    labels = [l for l in corpus.labels if l.label_id in keep]
    documents = [
        type(d)(
            doc_id=d.doc_id,
            facts=d.facts,
            true_sentence_months=d.true_sentence_months,
            label_values={k: v for k, v in d.label_values.items() if k in keep},
        )
        for d in corpus.documents
    ]
    variants = [v for v in corpus.variants if v.label_id in keep]
    return Corpus(labels, documents, variants)


@cli.command("report")
@click.option("--summary", "summary_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_dir", required=True)
def report_cmd(summary_path, out_dir) -> None:
    """Re-render CSV/HTML from an existing summary.json."""
    bundle = bundle_from_dict(load_summary_json(summary_path))
    emit_tables(bundle, out_dir)
    emit_html(bundle, out_dir)
    click.echo(f"report written to {out_dir}", err=True)


def main(argv: list[str] | None = None) -> int:
    """Entry point with the stable exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except AuthenticationError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_AUTH
    except (CorpusError, PredictionFormatError, MetricsError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except GatewayError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
