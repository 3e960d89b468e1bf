"""Fetch and persist device-recall and device-classification records.

Records come either from the OpenFDA REST API (paginated JSON over HTTPS)
or from line-delimited JSON fixture files, which are byte-for-byte replayable
and used throughout the test suite.
"""

from __future__ import annotations

import json
import logging
import os
import time
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from .fileio import sha256_bytes

log = logging.getLogger(__name__)

DEFAULT_RECALL_ENDPOINT = "https://api.fda.gov/device/recall.json"
DEFAULT_CLASSIFICATION_ENDPOINT = "https://api.fda.gov/device/classification.json"
API_KEY_ENV_VAR = "OPENFDA_API_KEY"

# transport(url) -> (http status, body text)
Transport = Callable[[str], tuple[int, str]]


class IngestError(Exception):
    """Transport failure, bad status, or malformed payload during ingestion."""


class SchemaError(IngestError):
    """A record is missing the fields this pipeline requires."""


@dataclass(frozen=True)
class RecallRecord:
    """One recall (or classification) action: the corpus unit."""

    cfres_id: str
    recall_action: str
    device_name: str = ""
    product_description: str = ""

    def to_json_dict(self) -> dict:
        return {
            "cfres_id": self.cfres_id,
            "recall_action": self.recall_action,
            "device_name": self.device_name,
            "product_description": self.product_description,
        }


@dataclass(frozen=True)
class IngestManifest:
    record_count: int
    source: str  # "live-api" | "fixture"
    fetched_at: str
    content_digest: str

    def to_json_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "source": self.source,
            "fetched_at": self.fetched_at,
            "content_digest": self.content_digest,
        }


@dataclass
class EndpointConfig:
    """Connection settings for a paginated OpenFDA-style endpoint."""

    url: str = DEFAULT_RECALL_ENDPOINT
    api_key: str | None = None
    page_size: int = 100
    max_retries: int = 3
    backoff_seconds: float = 0.5
    cache_dir: str | Path | None = None
    max_workers: int = 4
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if self.page_size < 1:
            raise ValueError("page_size must be >= 1")
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV_VAR)


def _default_transport(timeout: float) -> Transport:
    import requests

    def transport(url: str) -> tuple[int, str]:
        resp = requests.get(url, timeout=timeout)
        return resp.status_code, resp.text

    return transport


def _extract_record(obj: dict, lineno: int) -> RecallRecord:
    """Map an API result object (or fixture line) onto a RecallRecord.

    Recall results carry ``cfres_id`` and a recall text; classification
    results carry ``device_name`` instead, so a record is accepted when it
    has an identifier and at least one text-bearing field.
    """
    if not isinstance(obj, dict):
        raise SchemaError(f"record {lineno}: expected a JSON object")
    cfres = obj.get("cfres_id") or obj.get("product_code") or obj.get("res_event_number")
    if cfres is None or str(cfres).strip() == "":
        raise SchemaError(f"record {lineno}: missing cfres_id")
    action = obj.get("recall_action") or obj.get("action") or ""
    device_name = obj.get("device_name") or ""
    product_description = obj.get("product_description") or ""
    if not str(action).strip() and not str(device_name).strip() and not str(product_description).strip():
        raise SchemaError(f"record {lineno}: no recall text or device fields")
    return RecallRecord(
        cfres_id=str(cfres),
        recall_action=str(action),
        device_name=str(device_name),
        product_description=str(product_description),
    )


def _page_url(config: EndpointConfig, limit: int, skip: int) -> str:
    parts = [f"limit={limit}", f"skip={skip}"]
    if config.api_key:
        parts.insert(0, f"api_key={config.api_key}")
    sep = "&" if "?" in config.url else "?"
    return f"{config.url}{sep}{'&'.join(parts)}"


def _fetch_page(config: EndpointConfig, url: str, transport: Transport) -> dict:
    """GET one page with bounded retry; caches the raw body when configured."""
    cache_path = None
    if config.cache_dir is not None:
        cache_path = Path(config.cache_dir) / f"{sha256_bytes(url.encode('utf-8'))}.json"
        if cache_path.exists():
            return json.loads(cache_path.read_text(encoding="utf-8"))

    body = None
    for attempt in range(config.max_retries):
        try:
            status, text = transport(url)
        except Exception as exc:
            if attempt + 1 == config.max_retries:
                raise IngestError(f"transport failure for {url}: {exc}") from exc
            time.sleep(config.backoff_seconds * 2**attempt)
            continue
        if status == 429 or 500 <= status < 600:
            if attempt + 1 == config.max_retries:
                raise IngestError(f"HTTP {status} for {url} after {config.max_retries} attempts")
            time.sleep(config.backoff_seconds * 2**attempt)
            continue
        if status != 200:
            raise IngestError(f"HTTP {status} for {url}")
        body = text
        break
    assert body is not None
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise IngestError(f"malformed JSON payload for {url}: {exc}") from exc
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        cache_path.write_text(body, encoding="utf-8")
    return payload


def fetch_recalls(
    config: EndpointConfig,
    max_records: int,
    transport: Transport | None = None,
) -> list[RecallRecord]:
    """Fetch up to ``max_records`` records, paginating via limit/skip.

    Pages after the first may be fetched concurrently (bounded by
    ``config.max_workers``); results are merged in page order.
    """
    if max_records <= 0:
        return []
    transport = transport or _default_transport(config.timeout)

    limit = config.page_size
    first = _fetch_page(config, _page_url(config, limit, 0), transport)
    results = first.get("results")
    if not isinstance(results, list):
        raise IngestError("payload has no 'results' list")
    total = max_records
    meta_total = first.get("meta", {}).get("results", {}).get("total")
    if isinstance(meta_total, int):
        total = min(max_records, meta_total)

    pages: list[list] = [results]
    skips = list(range(limit, total, limit))
    if skips:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            futures = [
                pool.submit(_fetch_page, config, _page_url(config, limit, skip), transport)
                for skip in skips
            ]
            for fut in futures:
                payload = fut.result()
                page_results = payload.get("results")
                if not isinstance(page_results, list):
                    raise IngestError("payload has no 'results' list")
                pages.append(page_results)

    records: list[RecallRecord] = []
    for page in pages:
        for obj in page:
            records.append(_extract_record(obj, len(records) + 1))
            if len(records) == max_records:
                return records
    return records


def load_fixture(path: str | Path) -> list[RecallRecord]:
    """Load records from a line-delimited JSON fixture, preserving order."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"fixture not found: {path}")
    records: list[RecallRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: malformed JSON: {exc}") from exc
            records.append(_extract_record(obj, lineno))
    return records


def _dedup_key(text: str) -> str:
    """Equality key for duplicate detection: NFC + whitespace collapse."""
    return " ".join(unicodedata.normalize("NFC", text).split())


def filter_records(records: Sequence[RecallRecord]) -> list[RecallRecord]:
    """Drop records with empty recall text and duplicate recall texts.

    First occurrence wins; idempotent.
    """
    seen: set[str] = set()
    kept: list[RecallRecord] = []
    for rec in records:
        key = _dedup_key(rec.recall_action)
        if not key or key in seen:
            continue
        seen.add(key)
        kept.append(rec)
    return kept


def write_records(path: str | Path, records: Sequence[RecallRecord], source: str) -> IngestManifest:
    """Persist records as JSONL plus a manifest file at ``<path>.manifest.json``."""
    path = Path(path)
    payload = "".join(
        json.dumps(rec.to_json_dict(), ensure_ascii=False, sort_keys=True) + "\n" for rec in records
    ).encode("utf-8")
    path.write_bytes(payload)
    manifest = IngestManifest(
        record_count=len(records),
        source=source,
        fetched_at=datetime.now(timezone.utc).isoformat(),
        content_digest=sha256_bytes(payload),
    )
    Path(f"{path}.manifest.json").write_text(
        json.dumps(manifest.to_json_dict(), indent=2) + "\n", encoding="utf-8"
    )
    return manifest
