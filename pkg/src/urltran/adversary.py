"""Adversarial URL perturbations and augmented-dataset assembly.

Three attacks:

* homoglyph: swap one host character for a visually confusable Latin or
  Cyrillic character (result labelled phish);
* compound: hyphenate the registrable label at dictionary-word boundaries,
  ``bankofamerica.com`` -> ``bank-of-america.com`` (result labelled phish);
* reorder: permute the query pairs (label kept).

All attacks are pure functions of their inputs and seed.
"""

from __future__ import annotations

import json
import logging
import os
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable

import numpy as np

from .corpus import COMPOUND, HOMOGLYPH, PHISH, REORDER, Dataset, UrlRecord, format_query, parse_url, registrable_label_span
from .errors import AttackError, FormatError, InvalidArgument, MalformedUrl, NoHomoglyphAvailable, NothingToPermute, NotSplittable

log = logging.getLogger(__name__)

ATTACKS = (HOMOGLYPH, COMPOUND, REORDER)
AUGMENT_PROB = 0.5


# --------------------------------------------------------------------------
# Tables


def _latin_or_cyrillic(ch: str) -> bool:
    name = unicodedata.name(ch, "")
    return name.startswith("LATIN") or name.startswith("CYRILLIC")


@dataclass(frozen=True)
class HomoglyphTable:
    """Character -> confusable replacements (Latin/Cyrillic only)."""

    mapping: dict[str, tuple[str, ...]]

    def __post_init__(self):
        clean = {}
        for src, targets in self.mapping.items():
            if len(src) != 1:
                raise FormatError(f"homoglyph key {src!r} is not a single character")
            targets = tuple(targets)
            for t in targets:
                if len(t) != 1 or not _latin_or_cyrillic(t):
                    raise FormatError(f"homoglyph {t!r} for {src!r} is not one Latin/Cyrillic character")
                if t == src:
                    raise FormatError(f"homoglyph table maps {src!r} to itself")
            if targets:
                clean[src] = targets
        object.__setattr__(self, "mapping", clean)

    def __contains__(self, ch: str) -> bool:
        return ch in self.mapping

    def confusables(self, ch: str) -> tuple[str, ...]:
        return self.mapping.get(ch, ())

    def allows(self, src: str, dst: str) -> bool:
        return dst in self.mapping.get(src, ())


def load_homoglyph_table(path: str | os.PathLike | None = None) -> HomoglyphTable:
    """Read a JSON map ``{char: [confusable, ...]}``; None loads the bundled table."""
    if path is None:
        text = resources.files("urltran").joinpath("data/homoglyphs.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"homoglyph table is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not all(isinstance(v, list) for v in doc.values()):
        raise FormatError("homoglyph table must map characters to lists")
    return HomoglyphTable(doc)


@dataclass(frozen=True)
class WordDictionary:
    """Lowercase alphabetic word set; lookups ignore case."""

    words: frozenset[str]
    max_len: int = field(init=False)

    def __init__(self, words: Iterable[str]):
        ws = frozenset(w.lower() for w in words)
        if not ws:
            raise FormatError("word dictionary is empty")
        bad = next((w for w in ws if not w.isalpha()), None)
        if bad is not None:
            raise FormatError(f"dictionary word {bad!r} contains non-letters")
        object.__setattr__(self, "words", ws)
        object.__setattr__(self, "max_len", max(map(len, ws)))

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.words

    def __len__(self) -> int:
        return len(self.words)


@lru_cache(maxsize=1)
def _bundled_words() -> WordDictionary:
    text = resources.files("urltran").joinpath("data/words.txt").read_text("utf-8")
    return WordDictionary(text.split())


def load_dictionary(path: str | os.PathLike | None = None) -> WordDictionary:
    """One word per line; blank lines are skipped.  None loads the bundled list."""
    if path is None:
        return _bundled_words()
    with open(path, encoding="utf-8") as fh:
        return WordDictionary(line.strip() for line in fh if line.strip())


# --------------------------------------------------------------------------
# Compound splitting


@dataclass(frozen=True)
class SplitResult:
    splittable: bool
    parts: tuple[str, ...] = ()


def can_split(domain: str, d: WordDictionary) -> bool:
    """Interval recursion: ``C(i, j)`` holds when ``domain[i:j]`` is a word or
    splits at some ``k`` into two holding halves."""
    if not domain:
        raise InvalidArgument("domain must be non-empty")
    n = len(domain)

    @lru_cache(maxsize=None)
    def c(i: int, j: int) -> bool:
        if domain[i:j] in d:
            return True
        return any(c(i, k) and c(k, j) for k in range(i + 1, j))

    return c(0, n)


def compound_split(domain: str, d: WordDictionary) -> SplitResult:
    """Segment ``domain`` into dictionary words.

    Among all segmentations the one with the fewest parts wins; ties go to
    the longest first part, then the longest second part, and so on.
    """
    if not domain:
        raise InvalidArgument("domain must be non-empty")
    n = len(domain)
    # best[i]: (part count, next cut) for the optimal split of domain[i:]
    best: list[tuple[int, int] | None] = [None] * (n + 1)
    best[n] = (0, n)
    for i in range(n - 1, -1, -1):
        top = min(n, i + d.max_len)
        for j in range(top, i, -1):  # longest piece first, so ties keep it
            if best[j] is None or domain[i:j] not in d:
                continue
            count = best[j][0] + 1
            if best[i] is None or count < best[i][0]:
                best[i] = (count, j)
    if best[0] is None:
        return SplitResult(False)
    parts, i = [], 0
    while i < n:
        j = best[i][1]
        parts.append(domain[i:j])
        i = j
    return SplitResult(True, tuple(parts))


# --------------------------------------------------------------------------
# Attacks


def _host_span(url: str) -> tuple[int, int]:
    """Start/end offsets of the host inside ``url``."""
    parts = parse_url(url)
    start = 0 if parts.scheme is None else len(parts.scheme) + 3
    if parts.userinfo is not None:
        start += len(parts.userinfo) + 1
    return start, start + len(parts.host)


def homoglyph_attack(url: str, table: HomoglyphTable, seed) -> UrlRecord:
    """Replace one uniformly chosen eligible host character with a confusable."""
    start, end = _host_span(url)
    eligible = [i for i in range(start, end) if url[i] in table]
    if not eligible:
        raise NoHomoglyphAvailable(f"no host character of {url[start:end]!r} has a homoglyph")
    rng = np.random.default_rng(seed)
    pos = eligible[int(rng.integers(len(eligible)))]
    choices = table.confusables(url[pos])
    new = choices[int(rng.integers(len(choices)))]
    return UrlRecord(url[:pos] + new + url[pos + 1 :], PHISH, HOMOGLYPH)


def compound_attack(url: str, d: WordDictionary) -> UrlRecord:
    """Hyphenate the registrable label at word boundaries."""
    start, end = _host_span(url)
    span = registrable_label_span(url[start:end])
    if span is None:
        raise NotSplittable("host is an IP literal")
    a, b = start + span[0], start + span[1]
    label = url[a:b]
    if not label:
        raise NotSplittable("empty registrable label")
    split = compound_split(label, d)
    if not split.splittable:
        raise NotSplittable(f"{label!r} is not a concatenation of dictionary words")
    if len(split.parts) < 2:
        raise NotSplittable(f"{label!r} is a single word")
    return UrlRecord(url[:a] + "-".join(split.parts) + url[b:], PHISH, COMPOUND)


def reorder_params(url: str, seed, label: int = 0) -> UrlRecord:
    """Apply a uniformly random non-identity permutation to the query pairs.

    Pairs with identical text are interchangeable, so "non-identity" is
    judged on the resulting sequence; a query made of one repeated pair
    cannot be reordered.
    """
    parts = parse_url(url)
    pairs = parts.query
    if len(pairs) < 2 or len(set(pairs)) < 2:
        raise NothingToPermute(f"query has {len(pairs)} pair(s), need 2 distinct")
    rng = np.random.default_rng(seed)
    while True:  # rejection sampling keeps the draw uniform over the rest
        perm = rng.permutation(len(pairs))
        shuffled = [pairs[i] for i in perm]
        if shuffled != pairs:
            break
    qstart = url.index("?", _host_span(url)[1])
    qend = url.find("#", qstart)
    qend = len(url) if qend < 0 else qend
    return UrlRecord(url[: qstart + 1] + format_query(shuffled) + url[qend:], label, REORDER)


# --------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentationPlan:
    """Per-record random draws: whether to augment, which attack, its seed."""

    augment: np.ndarray
    attack: np.ndarray
    seeds: np.ndarray


def augmentation_plan(n: int, seed: int) -> AugmentationPlan:
    augment = np.zeros(n, dtype=bool)
    attack = np.full(n, -1, dtype=np.int64)
    seeds = np.zeros(n, dtype=np.uint64)
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        u = rng.random()
        if u < AUGMENT_PROB:
            augment[i] = True
            attack[i] = rng.integers(len(ATTACKS))
            seeds[i] = rng.integers(2**63)
    return AugmentationPlan(augment, attack, seeds)


def build_adversarial_dataset(ds: Dataset, table: HomoglyphTable, d: WordDictionary, seed: int) -> Dataset:
    """Augment about half the records with one randomly chosen attack.

    A successful attack emits the original record followed by the perturbed
    one; a failed attack emits just the original.  Seeds derive from
    ``(seed, record index)`` so the result does not depend on processing
    order.
    """
    if len(ds) == 0:
        raise InvalidArgument("cannot augment an empty dataset")
    plan = augmentation_plan(len(ds), seed)
    out = []
    fallbacks = 0
    for i, rec in enumerate(ds.records):
        out.append(rec)
        if not plan.augment[i]:
            continue
        kind = ATTACKS[plan.attack[i]]
        try:
            if kind == HOMOGLYPH:
                new = homoglyph_attack(rec.url, table, int(plan.seeds[i]))
            elif kind == COMPOUND:
                new = compound_attack(rec.url, d)
            else:
                new = reorder_params(rec.url, int(plan.seeds[i]), rec.label)
        except (AttackError, MalformedUrl, InvalidArgument) as exc:
            fallbacks += 1
            log.debug("record %d: %s attack failed (%s); keeping original only", i, kind, exc)
            continue
        out.append(new)
    log.info("augmented %d records, %d attack fallbacks", len(out) - len(ds), fallbacks)
    return Dataset(out, ds.split_tag)
