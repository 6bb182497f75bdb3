"""Chat-completions gateway: batch sentencing queries with cache, retries, and audit log.

Speaks the OpenAI-compatible chat-completions JSON shape over HTTPS (the
OpenRouter-style wire format); the URL is fully configurable so any
compatible endpoint works. Responses are cached on disk keyed by
(model, temperature, prompt), making interrupted runs resumable with zero
repeat traffic.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import requests

from fairjudge.corpus import Corpus

DEFAULT_TEMPLATE = (
    "You are an experienced criminal court judge. Read the case facts below and "
    "decide the sentence.\n\nCase facts:\n{facts}\n\n"
    'Answer with a single JSON object of the form {"sentence_months": <integer>} '
    "and nothing else."
)

STRICT_SUFFIX = (
    '\n\nIMPORTANT: respond with ONLY the JSON object {"sentence_months": <integer>}. '
    "No prose, no code fences."
)


class GatewayError(Exception):
    """Configuration or environment problem that prevents a run."""


class AuthenticationError(GatewayError):
    """The endpoint rejected our credentials; retrying cannot help."""


class PromptTemplateError(GatewayError):
    """Prompt template does not contain exactly one {facts} placeholder."""


@dataclass(frozen=True)
class ModelConfig:
    """One model endpoint to audit."""

    api_url: str
    model_name: str
    temperature: float = 0.0
    provider_name: Optional[str] = None
    api_key_env: str = "FAIRJUDGE_API_KEY"
    max_concurrency: int = 4
    max_retries: int = 3
    timeout_s: float = 60.0
    retry_base_delay_s: float = 0.5

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise GatewayError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_concurrency < 1:
            raise GatewayError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.max_retries < 0:
            raise GatewayError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True)
class PredictionRecord:
    """One parsed model output for a baseline document or a variant."""

    model_name: str
    doc_id: str
    label_id: Optional[str]
    variant_value: Optional[str]
    predicted_months: Optional[float]
    raw_response: str
    attempt_count: int

    def __post_init__(self) -> None:
        if (self.label_id is None) != (self.variant_value is None):
            raise GatewayError("label_id and variant_value must be both present or both absent")
        p = self.predicted_months
        if p is not None and not (math.isfinite(p) and p >= 0):
            raise GatewayError(f"predicted_months must be finite and >= 0, got {p!r}")

    def sort_key(self) -> tuple:
        return (self.model_name, self.doc_id, self.label_id or "", self.variant_value or "")


def build_prompt(facts: str, template: str) -> str:
    """Substitute the case facts into a single-placeholder prompt template."""
    n = template.count("{facts}")
    if n != 1:
        raise PromptTemplateError(
            f"template must contain exactly one {{facts}} placeholder, found {n}"
        )
    return template.replace("{facts}", facts)


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n?|```")


def parse_prediction(raw: str) -> Optional[float]:
    """Extract `sentence_months` from the first JSON object that carries it.

    Tolerates surrounding prose and code fences. Returns None on failure
    instead of raising, so one bad response never aborts a batch run.
    """
    if not raw:
        return None
    text = _FENCE_RE.sub(" ", raw)
    decoder = json.JSONDecoder()
    for pos, ch in enumerate(text):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            continue
        if not isinstance(obj, dict) or "sentence_months" not in obj:
            continue
        value = obj["sentence_months"]
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None
        value = float(value)
        if math.isfinite(value) and value >= 0:
            return value
        return None
    return None


@dataclass
class _WorkItem:
    doc_id: str
    label_id: Optional[str]
    variant_value: Optional[str]
    facts: str


class _Cache:
    """One small JSON file per (model, temperature, prompt) key."""

    def __init__(self, cache_dir: Path) -> None:
        self.dir = cache_dir
        self.dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(model_name: str, temperature: float, prompt: str) -> str:
        payload = json.dumps([model_name, temperature, prompt], sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def get(self, key: str) -> Optional[dict]:
        f = self.dir / f"{key}.json"
        if not f.exists():
            return None
        try:
            return json.loads(f.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None

    def put(self, key: str, value: dict) -> None:
        tmp = self.dir / f"{key}.json.tmp"
        tmp.write_text(json.dumps(value, sort_keys=True), encoding="utf-8")
        tmp.replace(self.dir / f"{key}.json")


class _Client:
    """HTTP worker shared by the pool; serializes cache and audit writes."""

    def __init__(self, config: ModelConfig, cache: _Cache, audit_path: Path, api_key: str) -> None:
        self.config = config
        self.cache = cache
        self.audit_path = audit_path
        self.api_key = api_key
        self.lock = threading.Lock()
        self.local = threading.local()

    def _session(self) -> requests.Session:
        if not hasattr(self.local, "session"):
            self.local.session = requests.Session()
        return self.local.session

    def _audit(self, entry: dict) -> None:
        with self.lock:
            with self.audit_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def _post_once(self, prompt: str) -> str:
        cfg = self.config
        body = {
            "model": cfg.model_name,
            "temperature": cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        if cfg.provider_name:
            body["provider"] = {"order": [cfg.provider_name]}
        resp = self._session().post(
            cfg.api_url,
            json=body,
            headers={"Authorization": f"Bearer {self.api_key}"},
            timeout=cfg.timeout_s,
        )
        if resp.status_code in (401, 403):
            raise AuthenticationError(
                f"endpoint rejected credentials (HTTP {resp.status_code}); "
                f"check the {cfg.api_key_env} environment variable"
            )
        if resp.status_code == 429 or resp.status_code >= 500:
            raise requests.RequestException(f"retryable HTTP {resp.status_code}")
        resp.raise_for_status()
        payload = resp.json()
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise requests.RequestException("malformed chat-completions response body")
        self._audit({"request": body, "response": content})
        return content

    def _post_with_retries(self, prompt: str, attempts: list[int]) -> Optional[str]:
        cfg = self.config
        rng = random.Random()
        for attempt in range(cfg.max_retries + 1):
            try:
                attempts[0] += 1
                return self._post_once(prompt)
            except AuthenticationError:
                raise
            except (requests.RequestException, ValueError):
                if attempt == cfg.max_retries:
                    return None
                delay = cfg.retry_base_delay_s * (2**attempt) * (1 + rng.random())
                time.sleep(delay)
        return None

    def fetch(self, prompt: str) -> tuple[str, int, bool]:
        """Return (raw content, attempts, from_cache); raw is "" on total failure."""
        key = _Cache.key(self.config.model_name, self.config.temperature, prompt)
        cached = self.cache.get(key)
        if cached is not None:
            return cached.get("content", ""), int(cached.get("attempts", 1)), True
        attempts = [0]
        content = self._post_with_retries(prompt, attempts)
        if content is None:
            return "", attempts[0], False
        self.cache.put(key, {"content": content, "attempts": attempts[0]})
        return content, attempts[0], False


def build_work_items(corpus: Corpus, labels: Optional[list[str]] = None) -> list[_WorkItem]:
    """Baseline document queries plus variant queries for the requested labels."""
    wanted = list(labels) if labels is not None else corpus.label_ids
    for label_id in wanted:
        corpus.label(label_id)
    items = [
        _WorkItem(doc_id=d.doc_id, label_id=None, variant_value=None, facts=d.facts)
        for d in sorted(corpus.documents, key=lambda d: d.doc_id)
    ]
    wanted_set = set(wanted)
    for var in sorted(corpus.variants, key=lambda v: (v.doc_id, v.label_id, v.variant_value)):
        if var.label_id in wanted_set:
            items.append(
                _WorkItem(
                    doc_id=var.doc_id,
                    label_id=var.label_id,
                    variant_value=var.variant_value,
                    facts=var.facts,
                )
            )
    return items


def run_generation(
    corpus: Corpus,
    config: ModelConfig,
    cache_dir: str | Path,
    template: str = DEFAULT_TEMPLATE,
    labels: Optional[list[str]] = None,
    progress=None,
) -> list[PredictionRecord]:
    """Query the endpoint for every baseline document and variant.

    Cached results are reused (resumability); parse failures get one
    stricter re-ask before being recorded with a missing marker. Returns
    records in deterministic key order.
    """
    api_key = os.environ.get(config.api_key_env)
    if not api_key:
        raise GatewayError(f"API key environment variable {config.api_key_env} is not set")
    build_prompt("probe", template)  # validate template up front

    cache_dir = Path(cache_dir)
    cache = _Cache(cache_dir)
    client = _Client(config, cache, cache_dir / "audit.jsonl", api_key)
    items = build_work_items(corpus, labels)
    done = [0]
    done_lock = threading.Lock()

    def process(item: _WorkItem) -> PredictionRecord:
        prompt = build_prompt(item.facts, template)
        raw, attempts, _ = client.fetch(prompt)
        months = parse_prediction(raw)
        if months is None and raw != "":
            # Parse failure on a live response: re-ask once, JSON only.
            raw2, attempts2, _ = client.fetch(prompt + STRICT_SUFFIX)
            attempts += attempts2
            months2 = parse_prediction(raw2)
            if months2 is not None:
                raw = raw2
                months = months2
        record = PredictionRecord(
            model_name=config.model_name,
            doc_id=item.doc_id,
            label_id=item.label_id,
            variant_value=item.variant_value,
            predicted_months=months,
            raw_response=raw,
            attempt_count=attempts,
        )
        if progress is not None:
            with done_lock:
                done[0] += 1
                progress(done[0], len(items))
        return record

    with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
        records = list(pool.map(process, items))

    records.sort(key=PredictionRecord.sort_key)
    return records


def write_predictions(records: list[PredictionRecord], path: str | Path) -> None:
    """Write predictions.jsonl (also the manual-upload ingestion format)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "model_name": r.model_name,
                        "doc_id": r.doc_id,
                        "label_id": r.label_id,
                        "variant_value": r.variant_value,
                        "predicted_months": r.predicted_months,
                        "raw_response": r.raw_response,
                        "attempt_count": r.attempt_count,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


class PredictionFormatError(Exception):
    """predictions.jsonl record violates the schema; message carries the line number."""


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    """Load and validate a predictions.jsonl file."""
    records: list[PredictionRecord] = []
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PredictionFormatError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PredictionFormatError(f"{path.name}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(rec, dict):
            raise PredictionFormatError(f"{path.name}:{lineno}: record is not an object")
        missing = [f for f in ("model_name", "doc_id") if f not in rec]
        if missing:
            raise PredictionFormatError(f"{path.name}:{lineno}: missing fields {missing}")
        try:
            records.append(
                PredictionRecord(
                    model_name=rec["model_name"],
                    doc_id=rec["doc_id"],
                    label_id=rec.get("label_id"),
                    variant_value=rec.get("variant_value"),
                    predicted_months=rec.get("predicted_months"),
                    raw_response=rec.get("raw_response", ""),
                    attempt_count=int(rec.get("attempt_count", 0)),
                )
            )
        except GatewayError as exc:
            raise PredictionFormatError(f"{path.name}:{lineno}: {exc}") from None
    return records
