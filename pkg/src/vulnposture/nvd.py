"""NVD CVE API 2.0 client and CVE import.

Three transports share one interface (``get(params) -> Response``):

* :class:`LiveTransport` talks HTTPS to the NVD, behind a sliding-window
  :class:`RateLimiter`;
* :class:`FixtureTransport` replays recorded response bodies byte for byte
  from a directory with a ``manifest.json``;
* :class:`RecordingTransport` wraps a live transport and writes such a
  directory.

:class:`NvdClient` walks the pages of a query, optionally caching the raw
page bodies on disk, and turns them into :class:`CveRecord` values.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Protocol

from .errors import FixtureMissing, MalformedResponse, ModelError, NvdError, RateLimited
from .ids import Cpe, CpeError, canonical_cve, canonical_cwe
from .model import ComponentType, DesignModel, VulnKind, VulnMetadata, Vulnerability

logger = logging.getLogger(__name__)

NVD_CVE_URL = "https://services.nvd.nist.gov/rest/json/cves/2.0"
API_KEY_ENV = "NVD_API_KEY"
MAX_PAGE_SIZE = 2000
PUBLIC_BUDGET = (5, 30.0)
KEYED_BUDGET = (50, 30.0)
DEFAULT_TTL = 24 * 3600.0
MANIFEST = "manifest.json"

_CWE_VALUE = re.compile(r"^CWE-\d+$")


@dataclass(frozen=True)
class QuerySpec:
    cpe: str
    cwe_filter: str | None = None
    results_per_page: int = MAX_PAGE_SIZE

    def __post_init__(self) -> None:
        try:
            Cpe.parse(self.cpe)
        except CpeError as exc:
            raise ValueError(str(exc)) from None
        if self.cwe_filter is not None:
            object.__setattr__(self, "cwe_filter", canonical_cwe(self.cwe_filter))
        if not 1 <= self.results_per_page <= MAX_PAGE_SIZE:
            raise ValueError(f"results_per_page must be in 1..{MAX_PAGE_SIZE}")

    def params(self, start_index: int = 0) -> dict[str, str | int]:
        params: dict[str, str | int] = {"cpeName": self.cpe}
        if self.cwe_filter:
            params["cweId"] = self.cwe_filter
        params["resultsPerPage"] = self.results_per_page
        params["startIndex"] = start_index
        return params

    def fingerprint(self) -> str:
        base = self.params()
        del base["startIndex"]
        return fingerprint(base)


def fingerprint(params: Mapping[str, object]) -> str:
    canonical = json.dumps({k: str(v) for k, v in params.items()}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CveRecord:
    id: str
    description: str
    cwes: tuple[str, ...]
    cpe: str
    severity: str | None
    source_url: str


class Response(NamedTuple):
    status: int
    headers: Mapping[str, str]
    body: bytes


class Transport(Protocol):
    def get(self, params: Mapping[str, object]) -> Response: ...


# --------------------------------------------------------------------------
# rate limiting


class RateLimiter:
    """Sliding-window limiter: at most ``limit`` acquisitions per ``window`` seconds."""

    def __init__(
        self,
        limit: int = PUBLIC_BUDGET[0],
        window: float = PUBLIC_BUDGET[1],
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if limit < 1 or window <= 0:
            raise ValueError("rate budget must be positive")
        self.limit = limit
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= self.window:
                    self._stamps.popleft()
                if len(self._stamps) < self.limit:
                    self._stamps.append(now)
                    return
                self._sleep(self.window - (now - self._stamps[0]))


# --------------------------------------------------------------------------
# transports


class LiveTransport:
    def __init__(
        self,
        api_key: str | None = None,
        *,
        session=None,
        limiter: RateLimiter | None = None,
        url: str = NVD_CVE_URL,
        timeout: float = 30.0,
    ) -> None:
        import requests

        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.session = session or requests.Session()
        if limiter is None:
            limit, window = KEYED_BUDGET if self.api_key else PUBLIC_BUDGET
            limiter = RateLimiter(limit, window)
        self.limiter = limiter
        self.url = url
        self.timeout = timeout
        if not self.api_key:
            logger.info("%s not set; using the public budget of %d requests per %.0fs", API_KEY_ENV, *PUBLIC_BUDGET)

    def get(self, params: Mapping[str, object]) -> Response:
        import requests

        self.limiter.acquire()
        headers = {"apiKey": self.api_key} if self.api_key else {}
        try:
            resp = self.session.get(self.url, params=dict(params), headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise NvdError(f"request to {self.url} failed: {exc}") from exc
        return Response(resp.status_code, dict(resp.headers), resp.content)


class FixtureTransport:
    """Replays bodies recorded in ``directory/manifest.json``."""

    def __init__(self, directory: str | os.PathLike) -> None:
        self.directory = Path(directory)
        manifest_path = self.directory / MANIFEST
        if not manifest_path.is_file():
            raise FixtureMissing(f"no fixture manifest at {manifest_path}")
        self.manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    def get(self, params: Mapping[str, object]) -> Response:
        key = fingerprint(params)
        entry = self.manifest.get("responses", {}).get(key)
        if entry is None:
            raise FixtureMissing(f"no recorded response for {dict(params)} (fingerprint {key[:12]})")
        path = self.directory / entry["file"]
        if not path.is_file():
            raise FixtureMissing(f"manifest names {entry['file']} but the file is missing")
        return Response(entry.get("status", 200), entry.get("headers", {}), path.read_bytes())


class RecordingTransport:
    """Forwards to ``inner`` and stores each response as a replayable fixture."""

    def __init__(self, inner: Transport, directory: str | os.PathLike) -> None:
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def get(self, params: Mapping[str, object]) -> Response:
        response = self.inner.get(params)
        key = fingerprint(params)
        name = f"{key[:16]}.json"
        with self._lock:
            (self.directory / name).write_bytes(response.body)
            manifest_path = self.directory / MANIFEST
            manifest = {"responses": {}}
            if manifest_path.is_file():
                manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            manifest.setdefault("responses", {})[key] = {
                "file": name,
                "params": {k: str(v) for k, v in params.items()},
                "status": response.status,
            }
            manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return response


# --------------------------------------------------------------------------
# cache


@dataclass(frozen=True)
class CacheEntry:
    fingerprint: str
    retrieved_at: float
    pages: tuple[bytes, ...]


class ResponseCache:
    """On-disk cache of raw page bodies keyed by query fingerprint."""

    def __init__(
        self,
        directory: str | os.PathLike,
        ttl: float = DEFAULT_TTL,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.directory = Path(directory)
        self.ttl = ttl
        self._clock = clock
        self._write_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> CacheEntry | None:
        path = self._path(key)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            return None
        if self._clock() - data["retrieved_at"] > self.ttl:
            return None
        return CacheEntry(key, data["retrieved_at"], tuple(p.encode("utf-8") for p in data["pages"]))

    def put(self, key: str, pages: Iterable[bytes]) -> CacheEntry:
        entry = CacheEntry(key, self._clock(), tuple(pages))
        payload = {
            "fingerprint": key,
            "retrieved_at": entry.retrieved_at,
            "pages": [p.decode("utf-8") for p in entry.pages],
        }
        with self._write_lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh)
            os.replace(tmp, self._path(key))
        return entry


# --------------------------------------------------------------------------
# response parsing


def _severity(metrics: Mapping) -> str | None:
    for key in ("cvssMetricV40", "cvssMetricV31", "cvssMetricV30"):
        for metric in metrics.get(key, ()):
            sev = metric.get("cvssData", {}).get("baseSeverity")
            if sev:
                return sev
    for metric in metrics.get("cvssMetricV2", ()):
        if metric.get("baseSeverity"):
            return metric["baseSeverity"]
    return None


def parse_cve(item: Mapping, cpe: str) -> CveRecord:
    cve = item["cve"]
    cve_id = canonical_cve(cve["id"])
    description = next(
        (d["value"] for d in cve.get("descriptions", ()) if d.get("lang") == "en"),
        "",
    )
    cwes: set[str] = set()
    # union over every source's weakness list; NVD-CWE-noinfo / NVD-CWE-Other carry no mapping
    for weakness in cve.get("weaknesses", ()):
        for desc in weakness.get("description", ()):
            value = desc.get("value", "")
            if _CWE_VALUE.match(value):
                cwes.add(canonical_cwe(value))
    return CveRecord(
        id=cve_id,
        description=description,
        cwes=tuple(sorted(cwes, key=lambda c: int(c[4:]))),
        cpe=cpe,
        severity=_severity(cve.get("metrics", {})),
        source_url=f"https://nvd.nist.gov/vuln/detail/{cve_id}",
    )


def parse_page(body: bytes, cpe: str) -> tuple[int, list[CveRecord]]:
    """Return ``(totalResults, records)`` for one response body."""
    try:
        payload = json.loads(body)
        total = int(payload["totalResults"])
        records = [parse_cve(item, cpe) for item in payload["vulnerabilities"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponse(f"cannot interpret NVD response: {exc!r}", payload=body) from None
    return total, records


# --------------------------------------------------------------------------
# client


def _check(response: Response) -> bytes:
    if response.status in (403, 429):
        retry = response.headers.get("Retry-After") or response.headers.get("retry-after")
        try:
            retry_after = float(retry) if retry is not None else None
        except ValueError:
            retry_after = None
        raise RateLimited(f"NVD refused the request with HTTP {response.status}", retry_after=retry_after)
    if response.status != 200:
        raise NvdError(f"NVD answered HTTP {response.status}")
    return response.body


class NvdClient:
    def __init__(self, transport: Transport, cache: ResponseCache | None = None, workers: int = 1) -> None:
        self.transport = transport
        self.cache = cache
        self.workers = max(1, workers)

    def fetch_pages(self, spec: QuerySpec) -> list[bytes]:
        """Raw bodies of every page of ``spec``, in server order."""
        key = spec.fingerprint()
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                logger.debug("cache hit for %s", key[:12])
                return list(hit.pages)

        first = _check(self.transport.get(spec.params(0)))
        total, records = parse_page(first, spec.cpe)
        pages = [first]
        if records and total > len(records):
            starts = list(range(len(records), total, spec.results_per_page))
            fetch = lambda start: _check(self.transport.get(spec.params(start)))  # noqa: E731
            if self.workers > 1:
                with ThreadPoolExecutor(self.workers) as pool:
                    pages.extend(pool.map(fetch, starts))
            else:
                pages.extend(fetch(s) for s in starts)

        if self.cache is not None:
            self.cache.put(key, pages)
        return pages

    def fetch_cves(self, spec: QuerySpec) -> list[CveRecord]:
        out: list[CveRecord] = []
        seen: set[str] = set()
        for body in self.fetch_pages(spec):
            _, records = parse_page(body, spec.cpe)
            for record in records:
                if spec.cwe_filter and spec.cwe_filter not in record.cwes:
                    continue
                if record.id in seen:
                    continue
                seen.add(record.id)
                out.append(record)
        return out


def fetch_cves(spec: QuerySpec, transport: Transport, cache: ResponseCache | None = None) -> list[CveRecord]:
    return NvdClient(transport, cache).fetch_cves(spec)


# --------------------------------------------------------------------------
# import


def import_cves(model: DesignModel, records: Iterable[CveRecord], component_type: str) -> DesignModel:
    """Add each CVE as an implementation vulnerability affecting ``component_type``.

    A CVE's abstraction parents are its CWE ids.  CWE ids missing from the
    model get a placeholder mechanism vulnerability (no parents) that a later
    catalogue import fills in.
    """
    if not model.has("component-type", component_type):
        raise ModelError(f"no component type {component_type!r}", code="unknown-component-type")
    records = list(records)
    if not records:
        return model

    vulns = dict(model.ids("vulnerability"))
    for record in records:
        for cwe in record.cwes:
            if cwe not in vulns:
                vulns[cwe] = Vulnerability(cwe, VulnKind.MECHANISM, title="", placeholder=True)
        vulns[record.id] = Vulnerability(
            id=record.id,
            kind=VulnKind.IMPLEMENTATION,
            title=record.id,
            avulns=frozenset(record.cwes),
            metadata=VulnMetadata(
                description=record.description or None,
                severity=record.severity,
                source_url=record.source_url,
            ),
        )
    ctype: ComponentType = model.component_type(component_type)
    ctype = replace(ctype, vulns=ctype.vulns | {r.id for r in records})
    result = replace(model, vulnerabilities=tuple(vulns.values())).put(ctype)
    if result == model:
        return model
    cycles = [f for f in result.validation.errors if f.code == "abstraction-cycle"]
    if cycles:
        raise ModelError(cycles[0].message, code="would-create-cycle")
    return result
