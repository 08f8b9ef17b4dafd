"""Polite, cached acquisition of gazette day indices and announcement pages.

All network traffic goes through one process-wide :class:`RateLimiter`, so
the inter-request delay holds no matter how many :class:`Fetcher` objects
exist. Every successful body is written to an on-disk cache
(``index/YYYY-MM-DD.html`` and ``doc/<announcement_id>.html``); a cached
document is always served without touching the network.
"""
from __future__ import annotations

import datetime as dt
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union
from urllib.parse import urlparse

import requests

from .errors import (
    EmptyBodyError,
    FetchError,
    HttpStatusError,
    NetworkError,
    PreconditionError,
    StructureError,
)
from .records import DATE_MAX, DATE_MIN, AnnouncementRef

logger = logging.getLogger(__name__)

CACHE_ENV_VAR = "BOE_PROCUREMENT_CACHE_DIR"
DEFAULT_URL_TEMPLATE = "https://www.boe.es/boe/dias/{YYYY}/{MM}/{DD}/"
DEFAULT_USER_AGENT = "boe-procurement-etl/0.1 (+research; contact via repository)"

# Statuses worth retrying; other 4xx are final.
RETRYABLE_STATUSES = frozenset({408, 425, 429, 500, 502, 503, 504})


def _default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV_VAR, "cache"))


@dataclass
class FetchConfig:
    base_url_template: str = DEFAULT_URL_TEMPLATE
    timeout: float = 30.0
    max_retries: int = 3
    inter_request_delay: float = 1000.0  # milliseconds
    cache_dir: Path = field(default_factory=_default_cache_dir)
    user_agent: str = DEFAULT_USER_AGENT
    backoff_base: float = 1.0  # seconds; doubles on every retry
    date_min: dt.date = DATE_MIN
    date_max: dt.date = DATE_MAX

    def __post_init__(self):
        self.cache_dir = Path(self.cache_dir)
        self.validate()

    def validate(self):
        if self.timeout <= 0:
            raise PreconditionError("timeout must be > 0")
        if self.inter_request_delay < 0:
            raise PreconditionError("inter_request_delay must be >= 0")
        if self.max_retries < 0:
            raise PreconditionError("max_retries must be >= 0")
        if self.backoff_base < 0:
            raise PreconditionError("backoff_base must be >= 0")
        for placeholder in ("{YYYY}", "{MM}", "{DD}"):
            if placeholder not in self.base_url_template:
                raise PreconditionError(
                    f"base_url_template lacks the {placeholder} placeholder"
                )

    def index_url(self, date: dt.date) -> str:
        return (
            self.base_url_template.replace("{YYYY}", f"{date.year:04d}")
            .replace("{MM}", f"{date.month:02d}")
            .replace("{DD}", f"{date.day:02d}")
        )


@dataclass(frozen=True)
class RawDocument:
    """Bytes of one fetched page.

    ``ref`` is set for announcement pages and ``None`` for day indices,
    which are identified by ``date`` instead.
    """

    key: str
    url: str
    body: bytes
    fetched_at: dt.datetime
    from_cache: bool
    ref: Optional[AnnouncementRef] = None
    date: Optional[dt.date] = None

    @property
    def is_index(self) -> bool:
        return self.ref is None


@dataclass(frozen=True)
class FetchFailure:
    """Per-item failure record emitted by :func:`crawl_range`."""

    key: str
    url: str
    error: str
    status: Optional[int] = None
    date: Optional[dt.date] = None


class RateLimiter:
    """Serialises request starts so that consecutive ones are spaced apart."""

    def __init__(self, clock=time.monotonic, sleep=time.sleep):
        self._lock = threading.Lock()
        self._last_start: Optional[float] = None
        self._clock = clock
        self._sleep = sleep

    def wait(self, delay_s: float):
        with self._lock:
            if self._last_start is not None:
                remaining = self._last_start + delay_s - self._clock()
                if remaining > 0:
                    self._sleep(remaining)
            self._last_start = self._clock()

    def reset(self):
        with self._lock:
            self._last_start = None


GLOBAL_RATE_LIMITER = RateLimiter()


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _safe_name(announcement_id: str) -> str:
    if not announcement_id or "/" in announcement_id or announcement_id.startswith("."):
        raise PreconditionError(f"unusable announcement id: {announcement_id!r}")
    return announcement_id


class Fetcher:
    """HTTP client with caching, retries and the shared rate limiter."""

    def __init__(self, cfg: FetchConfig, session=None, limiter: RateLimiter = None,
                 sleep=time.sleep):
        cfg.validate()
        self.cfg = cfg
        self.session = session if session is not None else requests.Session()
        if hasattr(self.session, "headers"):
            self.session.headers["User-Agent"] = cfg.user_agent
        self.limiter = limiter if limiter is not None else GLOBAL_RATE_LIMITER
        self._sleep = sleep
        self.network_calls = 0

    # -- cache paths --------------------------------------------------------

    def index_cache_path(self, date: dt.date) -> Path:
        return self.cfg.cache_dir / "index" / f"{date.isoformat()}.html"

    def doc_cache_path(self, announcement_id: str) -> Path:
        return self.cfg.cache_dir / "doc" / f"{_safe_name(announcement_id)}.html"

    # -- network --------------------------------------------------------------

    def _get(self, url: str) -> bytes:
        attempts = self.cfg.max_retries + 1
        last_status = None
        last_exc = None
        for attempt in range(1, attempts + 1):
            if attempt > 1 and self.cfg.backoff_base > 0:
                self._sleep(self.cfg.backoff_base * 2 ** (attempt - 2))
            self.limiter.wait(self.cfg.inter_request_delay / 1000.0)
            self.network_calls += 1
            try:
                resp = self.session.get(url, timeout=self.cfg.timeout)
            except requests.RequestException as exc:
                last_exc, last_status = exc, None
                logger.warning("attempt %d/%d for %s failed: %s", attempt, attempts, url, exc)
                continue
            status = resp.status_code
            if status in RETRYABLE_STATUSES:
                last_status = status
                logger.warning("attempt %d/%d for %s: HTTP %d", attempt, attempts, url, status)
                continue
            if status >= 400:
                raise HttpStatusError(url, status)
            if not resp.content:
                raise EmptyBodyError(f"{url}: empty body")
            return resp.content
        raise NetworkError(url, attempts, last_status=last_status, cause=last_exc)

    def _cached_or_fetch(self, path: Path, url: str, **doc_fields) -> RawDocument:
        if path.exists():
            body = path.read_bytes()
            if body:
                return RawDocument(
                    url=url, body=body, from_cache=True,
                    fetched_at=dt.datetime.fromtimestamp(path.stat().st_mtime, dt.timezone.utc),
                    **doc_fields,
                )
        body = self._get(url)
        _atomic_write(path, body)
        return RawDocument(
            url=url, body=body, from_cache=False,
            fetched_at=dt.datetime.now(dt.timezone.utc), **doc_fields,
        )

    def fetch_day_index(self, date: dt.date) -> RawDocument:
        if not self.cfg.date_min <= date <= self.cfg.date_max:
            raise PreconditionError(
                f"{date} outside {self.cfg.date_min}..{self.cfg.date_max}"
            )
        return self._cached_or_fetch(
            self.index_cache_path(date), self.cfg.index_url(date),
            key=date.isoformat(), date=date,
        )

    def fetch_announcement(self, ref: AnnouncementRef) -> RawDocument:
        parsed = urlparse(ref.url)
        if not (parsed.scheme and parsed.netloc):
            raise PreconditionError(f"announcement URL is not absolute: {ref.url!r}")
        return self._cached_or_fetch(
            self.doc_cache_path(ref.announcement_id), ref.url,
            key=ref.announcement_id, ref=ref, date=ref.publication_date,
        )

    def crawl_range(self, start: dt.date, end: dt.date,
                    rules=None) -> Iterator[Union[RawDocument, FetchFailure]]:
        """Yield every day index in ``start..end`` followed by its announcements.

        Failures never stop the stream; they are yielded as
        :class:`FetchFailure` items in the position the document would
        have occupied.
        """
        from .parse import parse_day_index

        if start > end:
            raise PreconditionError(f"from ({start}) is after to ({end})")
        day = start
        while day <= end:
            yield from self._crawl_day(day, rules, parse_day_index)
            day += dt.timedelta(days=1)

    def _crawl_day(self, day, rules, parse_day_index):
        url = self.cfg.index_url(day)
        try:
            index = self.fetch_day_index(day)
        except FetchError as exc:
            yield _failure(day.isoformat(), url, exc, date=day)
            return
        yield index
        try:
            refs = parse_day_index(index, rules)
        except StructureError as exc:
            logger.warning("skipping index %s: %s", day, exc)
            yield FetchFailure(key=day.isoformat(), url=url, error=str(exc), date=day)
            return
        if not refs:
            logger.info("%s: no contracting notices", day)
        for ref in sorted(refs, key=lambda r: r.announcement_id):
            try:
                yield self.fetch_announcement(ref)
            except (FetchError, PreconditionError) as exc:
                yield _failure(ref.announcement_id, ref.url, exc, date=day)


def _failure(key, url, exc, date=None) -> FetchFailure:
    status = getattr(exc, "status", None) or getattr(exc, "last_status", None)
    return FetchFailure(key=key, url=url, error=str(exc), status=status, date=date)


def fetch_day_index(date: dt.date, cfg: FetchConfig, session=None) -> RawDocument:
    return Fetcher(cfg, session=session).fetch_day_index(date)


def fetch_announcement(ref: AnnouncementRef, cfg: FetchConfig, session=None) -> RawDocument:
    return Fetcher(cfg, session=session).fetch_announcement(ref)


def crawl_range(start: dt.date, end: dt.date, cfg: FetchConfig, session=None, rules=None):
    return Fetcher(cfg, session=session).crawl_range(start, end, rules=rules)


def load_cached_documents(cfg: FetchConfig, start: dt.date, end: dt.date, rules=None):
    """Read back a crawl from the cache alone, never touching the network.

    Yields ``(index_document, [announcement_documents])`` per cached day.
    """
    from .parse import parse_day_index

    cache_dir = cfg.cache_dir
    day = start
    while day <= end:
        path = cache_dir / "index" / f"{day.isoformat()}.html"
        if path.exists():
            index = RawDocument(key=day.isoformat(), url=cfg.index_url(day), body=path.read_bytes(),
                                fetched_at=_mtime(path), from_cache=True, date=day)
            docs = []
            try:
                refs = parse_day_index(index, rules)
            except StructureError as exc:
                logger.warning("skipping cached index %s: %s", day, exc)
                refs = []
            for ref in sorted(refs, key=lambda r: r.announcement_id):
                doc_path = cache_dir / "doc" / f"{_safe_name(ref.announcement_id)}.html"
                if doc_path.exists():
                    docs.append(RawDocument(key=ref.announcement_id, url=ref.url,
                                            body=doc_path.read_bytes(),
                                            fetched_at=_mtime(doc_path),
                                            from_cache=True, ref=ref, date=day))
                else:
                    logger.warning("announcement %s not in cache", ref.announcement_id)
            yield index, docs
        day += dt.timedelta(days=1)


def _mtime(path: Path) -> dt.datetime:
    return dt.datetime.fromtimestamp(path.stat().st_mtime, dt.timezone.utc)
