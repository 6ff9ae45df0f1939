"""Labeled URL datasets: TSV ingest, URL decomposition, downsampling, splits."""

from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyDatasetError, InvalidArgument, MalformedUrl, ParseError

log = logging.getLogger(__name__)

BENIGN = 0
PHISH = 1

ORIGINAL = "original"
HOMOGLYPH = "homoglyph"
COMPOUND = "compound"
REORDER = "reorder"
ORIGINS = (ORIGINAL, HOMOGLYPH, COMPOUND, REORDER)

MAX_URL_BYTES = 4096
SPLIT_TAGS = ("train", "valid", "test")


@dataclass(frozen=True)
class UrlRecord:
    url: str
    label: int
    origin: str = ORIGINAL

    def __post_init__(self):
        if not self.url.strip():
            raise InvalidArgument("url is empty")
        if "\t" in self.url or "\n" in self.url:
            raise InvalidArgument("url contains a tab or newline")
        if len(self.url.encode("utf-8")) > MAX_URL_BYTES:
            raise InvalidArgument(f"url longer than {MAX_URL_BYTES} bytes")
        if self.label not in (BENIGN, PHISH):
            raise InvalidArgument(f"label must be 0 or 1, got {self.label!r}")
        if self.origin not in ORIGINS:
            raise InvalidArgument(f"unknown origin {self.origin!r}")
        if self.origin in (HOMOGLYPH, COMPOUND) and self.label != PHISH:
            raise InvalidArgument(f"{self.origin} records must be labeled phish")


@dataclass
class Dataset:
    records: list[UrlRecord]
    split_tag: str | None = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def urls(self) -> list[str]:
        return [r.url for r in self.records]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def counts(self) -> tuple[int, int]:
        """(benign, phish) record counts."""
        phish = sum(r.label for r in self.records)
        return len(self.records) - phish, phish


# --------------------------------------------------------------------------
# TSV I/O


def load_dataset(path: str | os.PathLike, format: str = "tsv") -> Dataset:
    """Read ``url<TAB>label[<TAB>origin]`` lines into a :class:`Dataset`.

    Raises:
        ParseError: a line is malformed (the message names its line number).
        EmptyDatasetError: the file holds no records.
    """
    if format != "tsv":
        raise InvalidArgument(f"unsupported dataset format {format!r}")
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc})") from None
    if not text:
        raise EmptyDatasetError(f"{path}: empty dataset")
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    records = [_parse_line(line, i) for i, line in enumerate(lines, start=1)]
    if not records:
        raise EmptyDatasetError(f"{path}: empty dataset")
    return Dataset(records)


def _parse_line(line: str, lineno: int) -> UrlRecord:
    fields = line.split("\t")
    if len(fields) not in (2, 3):
        raise ParseError(f"expected 2 or 3 tab-separated fields, got {len(fields)}", lineno)
    url, label = fields[0], fields[1]
    if label not in ("0", "1"):
        raise ParseError(f"label must be 0 or 1, got {label!r}", lineno)
    origin = fields[2] if len(fields) == 3 else ORIGINAL
    try:
        return UrlRecord(url, int(label), origin)
    except InvalidArgument as exc:
        raise ParseError(str(exc), lineno) from None


def format_dataset(ds: Dataset | Iterable[UrlRecord], with_origin: bool | None = None) -> str:
    records = list(ds)
    if with_origin is None:
        with_origin = any(r.origin != ORIGINAL for r in records)
    if with_origin:
        return "".join(f"{r.url}\t{r.label}\t{r.origin}\n" for r in records)
    return "".join(f"{r.url}\t{r.label}\n" for r in records)


def save_dataset(ds: Dataset | Iterable[UrlRecord], path: str | os.PathLike, with_origin: bool | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_dataset(ds, with_origin))


# --------------------------------------------------------------------------
# URL decomposition

_SCHEME = re.compile(r"^([A-Za-z][A-Za-z0-9+.\-]*)://")
_IPV4 = re.compile(r"^\d{1,3}(\.\d{1,3}){3}$")
_TWO_LEVEL_SUFFIXES = frozenset(
    """co.uk org.uk ac.uk gov.uk me.uk com.au net.au org.au edu.au co.jp ne.jp co.nz
    com.br com.cn com.mx com.tr com.sg com.hk co.in co.za co.kr""".split()
)


@dataclass
class UrlParts:
    """Lossless split of a URL.

    ``query`` holds ``(key, value)`` pairs in source order; ``value`` is None
    for a bare key with no ``=``.  A URL with a ``?`` always has at least one
    pair (possibly ``("", None)``), so the ``?`` is restored on reassembly.
    """

    scheme: str | None
    host: str
    path: str = ""
    query: list[tuple[str, str | None]] = field(default_factory=list)
    fragment: str | None = None
    userinfo: str | None = None
    port: str | None = None

    def unparse(self) -> str:
        out = []
        if self.scheme is not None:
            out.append(self.scheme + "://")
        if self.userinfo is not None:
            out.append(self.userinfo + "@")
        out.append(self.host)
        if self.port is not None:
            out.append(":" + self.port)
        out.append(self.path)
        if self.query:
            out.append("?" + format_query(self.query))
        if self.fragment is not None:
            out.append("#" + self.fragment)
        return "".join(out)


def format_query(pairs: Sequence[tuple[str, str | None]]) -> str:
    return "&".join(k if v is None else f"{k}={v}" for k, v in pairs)


def parse_query(qs: str) -> list[tuple[str, str | None]]:
    pairs = []
    for item in qs.split("&"):
        key, eq, value = item.partition("=")
        pairs.append((key, value if eq else None))
    return pairs


def parse_url(url: str) -> UrlParts:
    """Split ``url`` permissively (scheme optional, nothing decoded).

    >>> parse_url("http://a.com/p?x=1&y=2").query
    [('x', '1'), ('y', '2')]

    Raises:
        MalformedUrl: no host can be found.
    """
    if not url or not url.strip():
        raise MalformedUrl("empty url")
    rest = url
    scheme = None
    m = _SCHEME.match(rest)
    if m:
        scheme = m.group(1)
        rest = rest[m.end():]

    end = len(rest)
    for sep in "/?#":
        i = rest.find(sep)
        if i != -1 and i < end:
            end = i
    authority, rest = rest[:end], rest[end:]

    fragment = None
    if "#" in rest:
        rest, fragment = rest.split("#", 1)
    query: list[tuple[str, str | None]] = []
    if "?" in rest:
        rest, qs = rest.split("?", 1)
        query = parse_query(qs)
    path = rest

    userinfo = None
    if "@" in authority:
        userinfo, authority = authority.rsplit("@", 1)
    port = None
    if authority.startswith("["):
        close = authority.find("]")
        if close != -1 and authority[close + 1:].startswith(":"):
            authority, port = authority[: close + 1], authority[close + 2:]
    elif ":" in authority:
        authority, port = authority.rsplit(":", 1)
    if not authority:
        raise MalformedUrl(f"no host in {url!r}")
    return UrlParts(scheme, authority, path, query, fragment, userinfo, port)


def unparse_url(parts: UrlParts) -> str:
    return parts.unparse()


def registrable_label_span(host: str) -> tuple[int, int] | None:
    """Character span of the label just left of the public suffix.

    ``secure.bankofamerica.com`` -> span of ``bankofamerica``.  Returns None
    for IP literals.  A small built-in list of two-level suffixes (``co.uk``
    and friends) stands in for the full public-suffix list.
    """
    if host.startswith("[") or _IPV4.match(host):
        return None
    trimmed = host[:-1] if host.endswith(".") else host
    labels = trimmed.split(".")
    if len(labels) == 1:
        idx = 0
    elif len(labels) >= 3 and ".".join(labels[-2:]).lower() in _TWO_LEVEL_SUFFIXES:
        idx = len(labels) - 3
    else:
        idx = len(labels) - 2
    start = sum(len(lab) + 1 for lab in labels[:idx])
    return start, start + len(labels[idx])


# --------------------------------------------------------------------------
# Sampling


def downsample_benign(d: Dataset, ratio: int, seed: int) -> Dataset:
    """Keep every phish record and at most ``ratio`` benign per phish.

    Benign records are drawn uniformly without replacement; survivors keep
    their input order.
    """
    if not isinstance(ratio, (int, np.integer)) or ratio <= 0:
        raise InvalidArgument(f"ratio must be a positive integer, got {ratio!r}")
    benign_idx = [i for i, r in enumerate(d.records) if r.label == BENIGN]
    n_phish = len(d.records) - len(benign_idx)
    if n_phish == 0:
        raise InvalidArgument("dataset has no phish records")
    cap = ratio * n_phish
    if len(benign_idx) <= cap:
        return Dataset(list(d.records), d.split_tag)
    rng = np.random.default_rng(seed)
    keep = set(np.asarray(benign_idx)[rng.choice(len(benign_idx), size=cap, replace=False)].tolist())
    records = [r for i, r in enumerate(d.records) if r.label == PHISH or i in keep]
    log.info("downsampled benign %d -> %d (ratio 1:%d)", len(benign_idx), cap, ratio)
    return Dataset(records, d.split_tag)


def _split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [n * f for f in fractions]
    sizes = [math.floor(x + 1e-9) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_dataset(d: Dataset, fractions: Sequence[float], seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Random train/valid/test split.

    Records sharing a URL string always land in the same split, so the
    splits are disjoint by URL.  Records keep their input order within a
    split.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(not f > 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgument(f"fractions must be three positive numbers summing to 1, got {fractions}")
    groups: dict[str, list[int]] = {}
    for i, r in enumerate(d.records):
        groups.setdefault(r.url, []).append(i)
    keys = list(groups)
    order = np.random.default_rng(seed).permutation(len(keys))
    targets = _split_sizes(len(d.records), fractions)

    assigned: list[list[int]] = [[], [], []]
    which = 0
    for g in order:
        while which < 2 and len(assigned[which]) >= targets[which]:
            which += 1
        assigned[which].extend(groups[keys[g]])
    return tuple(
        Dataset([d.records[i] for i in sorted(idx)], tag) for idx, tag in zip(assigned, SPLIT_TAGS)
    )

