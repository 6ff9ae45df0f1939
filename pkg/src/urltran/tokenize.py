"""Subword tokenizers for URLs.

Three vocabulary kinds share one :class:`Vocabulary` type:

* ``byte_bpe`` -- BPE over the 256 byte values of the UTF-8 encoding; never
  needs ``[UNK]``.
* ``char_bpe`` -- BPE over the unicode characters seen in training; unseen
  characters map to ``[UNK]``.
* ``wordpiece`` -- an imported BERT-style piece list with ``##``
  continuation pieces, applied greedily longest-match-first.

The five special tokens always hold ids 0-4.
"""

from __future__ import annotations

import heapq
import json
import os
import unicodedata
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import FormatError, InvalidArgument

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_SPECIALS = len(SPECIALS)
IGNORE = -100

KINDS = ("byte_bpe", "char_bpe", "wordpiece")
MANIFEST_FORMAT = "urltran-vocab/1"
WORDPIECE_MAX_CHARS = 100


@lru_cache(maxsize=None)
def byte_alphabet() -> tuple[str, ...]:
    """Printable stand-in character for each byte value (GPT-2 convention)."""
    keep = list(range(ord("!"), ord("~") + 1)) + list(range(0xA1, 0xAD)) + list(range(0xAE, 0x100))
    table = {}
    extra = 0
    for b in range(256):
        if b in keep:
            table[b] = chr(b)
        else:
            table[b] = chr(256 + extra)
            extra += 1
    return tuple(table[b] for b in range(256))


@lru_cache(maxsize=None)
def _byte_decoder() -> dict[str, int]:
    return {c: b for b, c in enumerate(byte_alphabet())}


class Vocabulary:
    """Immutable token table.

    Attributes:
        kind: one of ``KINDS``.
        pieces: token strings; ``pieces[i]`` has id ``i``.
        merges: ordered ``(left, right)`` piece pairs (BPE kinds only).
        lowercase: fold case before tokenizing.
    """

    def __init__(self, kind: str, pieces: Sequence[str], merges: Sequence[tuple[str, str]] = (), lowercase: bool | None = None):
        if kind not in KINDS:
            raise InvalidArgument(f"unknown vocabulary kind {kind!r}")
        self.kind = kind
        self.pieces = tuple(pieces)
        self.merges = tuple((str(a), str(b)) for a, b in merges)
        self.lowercase = (kind == "wordpiece") if lowercase is None else bool(lowercase)
        if self.pieces[:NUM_SPECIALS] != SPECIALS:
            raise FormatError("special tokens must occupy ids 0-4 in the order PAD, UNK, CLS, SEP, MASK")
        self.ids = {p: i for i, p in enumerate(self.pieces)}
        if len(self.ids) != len(self.pieces):
            dupes = [p for p, c in Counter(self.pieces).items() if c > 1]
            raise FormatError(f"duplicate pieces: {dupes[:5]}")
        if kind == "wordpiece" and self.merges:
            raise FormatError("wordpiece vocabularies carry no merges")
        self._ranks = {}
        for rank, (a, b) in enumerate(self.merges):
            if a not in self.ids or b not in self.ids or a + b not in self.ids:
                raise FormatError(f"merge {(a, b)!r} refers to a missing piece")
            if a + b in SPECIALS:
                raise FormatError(f"merge {(a, b)!r} produces a special token")
            self._ranks.setdefault((self.ids[a], self.ids[b]), (rank, self.ids[a + b]))
        if kind == "byte_bpe":
            if self.pieces[NUM_SPECIALS : NUM_SPECIALS + 256] != byte_alphabet():
                raise FormatError("byte_bpe vocabulary must list the 256 byte symbols right after the specials")

    def __len__(self):
        return len(self.pieces)

    def __eq__(self, other):
        return (
            isinstance(other, Vocabulary)
            and (self.kind, self.pieces, self.merges, self.lowercase)
            == (other.kind, other.pieces, other.merges, other.lowercase)
        )

    def __repr__(self):
        return f"Vocabulary(kind={self.kind!r}, size={len(self)}, merges={len(self.merges)})"

    def is_continuation(self, piece: str) -> bool:
        return self.kind == "wordpiece" and piece.startswith("##")

    # -- persistence -------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": MANIFEST_FORMAT,
            "kind": self.kind,
            "lowercase": self.lowercase,
            "pieces": list(self.pieces),
            "merges": [list(m) for m in self.merges],
        }
        return json.dumps(doc, ensure_ascii=False, indent=0) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())


def load_vocab(path: str | os.PathLike) -> Vocabulary:
    """Load a JSON vocabulary manifest, or a plain one-piece-per-line wordpiece file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad vocabulary manifest ({exc})") from None
        for key in ("kind", "pieces", "merges"):
            if key not in doc:
                raise FormatError(f"{path}: manifest lacks {key!r}")
        return Vocabulary(doc["kind"], doc["pieces"], [tuple(m) for m in doc["merges"]], doc.get("lowercase"))
    return _wordpiece_from_lines(text, path)


def load_wordpiece_vocab(path: str | os.PathLike, lowercase: bool = True) -> Vocabulary:
    """Read a BERT-style ``vocab.txt``.

    Specials are moved to ids 0-4; every other line keeps its file order.
    """
    with open(path, encoding="utf-8") as fh:
        return _wordpiece_from_lines(fh.read(), path, lowercase)


def _wordpiece_from_lines(text: str, path, lowercase: bool = True) -> Vocabulary:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [ln.rstrip("\r") for ln in lines]
    if not lines:
        raise FormatError(f"{path}: empty vocabulary file")
    seen = set()
    for i, piece in enumerate(lines, start=1):
        if not piece:
            raise FormatError(f"{path}: blank piece at line {i}")
        if piece in seen:
            raise FormatError(f"{path}: duplicate piece {piece!r} at line {i}")
        seen.add(piece)
    missing = [s for s in SPECIALS if s not in seen]
    if missing:
        raise FormatError(f"{path}: missing special tokens {missing}")
    rest = [p for p in lines if p not in SPECIALS]
    return Vocabulary("wordpiece", SPECIALS + tuple(rest), lowercase=lowercase)


def bundled_wordpiece_path() -> str:
    """Path of the bert-base-uncased ``vocab.txt`` shipped with the package."""
    return os.path.join(os.path.dirname(__file__), "data", "bert-base-uncased-vocab.txt")


# --------------------------------------------------------------------------
# BPE training


def _base_symbols(corpus: Iterable[str], kind: str) -> list[str]:
    if kind == "byte_bpe":
        return list(byte_alphabet())
    chars = set()
    for text in corpus:
        chars.update(text)
    return sorted(c for c in chars if c not in SPECIALS)


def _symbolize(text: str, kind: str, ids: dict[str, int]) -> list[int]:
    if kind == "byte_bpe":
        return [b + NUM_SPECIALS for b in text.encode("utf-8")]
    return [ids.get(c, UNK_ID) for c in text]


def train_bpe(corpus: Sequence[str], vocab_size: int, kind: str = "byte_bpe", lowercase: bool = False) -> Vocabulary:
    """Learn a BPE vocabulary over whole URLs (no delimiter pre-splitting).

    Repeatedly merges the most frequent adjacent pair, ties going to the
    lexicographically smallest ``(left, right)``, until ``vocab_size``
    pieces exist or no pair occurs at least twice.

    Raises:
        InvalidArgument: empty corpus, unknown kind, or ``vocab_size`` not
            larger than base symbols + 5 specials.
    """
    if kind not in ("byte_bpe", "char_bpe"):
        raise InvalidArgument(f"train_bpe kind must be byte_bpe or char_bpe, got {kind!r}")
    corpus = [t.lower() if lowercase else t for t in corpus]
    if not corpus:
        raise InvalidArgument("empty training corpus")
    base = _base_symbols(corpus, kind)
    floor = NUM_SPECIALS + len(base)
    if vocab_size <= floor:
        raise InvalidArgument(f"vocab_size must exceed {floor} (base symbols + specials), got {vocab_size}")

    pieces = list(SPECIALS) + base
    ids = {p: i for i, p in enumerate(pieces)}
    freq = Counter(corpus)
    seqs = [_symbolize(t, kind, ids) for t in freq]
    freqs = list(freq.values())

    counts: dict[tuple[int, int], int] = {}
    where: dict[tuple[int, int], set[int]] = {}
    for idx, (seq, f) in enumerate(zip(seqs, freqs)):
        for p in zip(seq, seq[1:]):
            counts[p] = counts.get(p, 0) + f
            where.setdefault(p, set()).add(idx)

    def entry(p):
        return (-counts[p], pieces[p[0]], pieces[p[1]], p)

    heap = [entry(p) for p in counts]
    heapq.heapify(heap)
    merges: list[tuple[str, str]] = []
    banned: set[tuple[int, int]] = set()
    while len(pieces) < vocab_size and heap:
        neg, _, _, pair = heapq.heappop(heap)
        if pair in banned or -neg != counts.get(pair, 0):
            continue  # stale heap entry
        if -neg < 2:
            break
        left, right = pieces[pair[0]], pieces[pair[1]]
        merged = left + right
        if merged in SPECIALS:
            banned.add(pair)
            continue
        new = ids.get(merged)
        if new is None:
            new = len(pieces)
            pieces.append(merged)
            ids[merged] = new
        merges.append((left, right))
        targets = sorted(where.pop(pair, ()))
        changed = kernels.bpe_apply_merge(seqs, freqs, targets, pair[0], pair[1], new, counts, where)
        for p in sorted(changed):
            if p != pair and counts.get(p, 0) > 0:
                heapq.heappush(heap, entry(p))
        counts.pop(pair, None)
    return Vocabulary(kind, pieces, merges, lowercase)


# --------------------------------------------------------------------------
# Encoding


@dataclass
class TokenSequence:
    """Fixed-length model input.

    ``mlm_labels`` holds the original id at masked positions and ``IGNORE``
    everywhere else.
    """

    ids: np.ndarray
    attention_mask: np.ndarray
    mlm_labels: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)

    @property
    def length(self) -> int:
        """Number of attended positions (CLS and SEP included)."""
        return int(self.attention_mask.sum())


def _is_punct(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def _is_cjk(cp: int) -> bool:
    return (
        0x4E00 <= cp <= 0x9FFF or 0x3400 <= cp <= 0x4DBF or 0x20000 <= cp <= 0x2A6DF
        or 0x2A700 <= cp <= 0x2B73F or 0x2B740 <= cp <= 0x2B81F or 0x2B820 <= cp <= 0x2CEAF
        or 0xF900 <= cp <= 0xFAFF or 0x2F800 <= cp <= 0x2FA1F
    )


def basic_pretokenize(text: str, lowercase: bool) -> list[str]:
    """BERT basic tokenization: clean, optionally lowercase and strip
    accents, then split on whitespace, punctuation and CJK characters."""
    cleaned = []
    for ch in text:
        cp = ord(ch)
        if cp == 0 or cp == 0xFFFD:
            continue
        cat = unicodedata.category(ch)
        if ch in " \t\n\r" or cat == "Zs":
            cleaned.append(" ")
        elif cat in ("Cc", "Cf"):
            continue
        elif _is_cjk(cp):
            cleaned.append(f" {ch} ")
        else:
            cleaned.append(ch)
    words = []
    for word in "".join(cleaned).split():
        if lowercase:
            word = unicodedata.normalize("NFD", word.lower())
            word = "".join(c for c in word if unicodedata.category(c) != "Mn")
        current = []
        for ch in word:
            if _is_punct(ch):
                if current:
                    words.append("".join(current))
                    current = []
                words.append(ch)
            else:
                current.append(ch)
        if current:
            words.append("".join(current))
    return words


def content_ids(v: Vocabulary, url: str, lowercase: bool | None = None) -> list[int]:
    """Token ids for ``url`` with no specials, padding or truncation."""
    lowercase = v.lowercase if lowercase is None else lowercase
    if v.kind == "wordpiece":
        out = []
        for word in basic_pretokenize(url, lowercase):
            out.extend(kernels.wordpiece_word(word, v.ids, UNK_ID, WORDPIECE_MAX_CHARS))
        return out
    if lowercase:
        url = url.lower()
    if not url:
        return []
    return kernels.bpe_merge_word(_symbolize(url, v.kind, v.ids), v._ranks)


def tokenize_pieces(v: Vocabulary, url: str, lowercase: bool | None = None) -> list[str]:
    return [v.pieces[i] for i in content_ids(v, url, lowercase)]


def encode(v: Vocabulary, url: str, max_len: int, lowercase: bool | None = None) -> TokenSequence:
    """``[CLS] content [SEP] [PAD]...`` of exactly ``max_len`` ids.

    Content beyond ``max_len - 2`` tokens is cut from the tail, keeping the
    scheme and host.
    """
    if max_len < 3:
        raise InvalidArgument(f"max_len must be at least 3, got {max_len}")
    body = content_ids(v, url, lowercase)[: max_len - 2]
    n = len(body) + 2
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    ids[1 : n - 1] = body
    ids[n - 1] = SEP_ID
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:n] = 1
    return TokenSequence(ids, mask)


def encode_batch(v: Vocabulary, urls: Sequence[str], max_len: int, lowercase: bool | None = None) -> list[TokenSequence]:
    return [encode(v, u, max_len, lowercase) for u in urls]


def decode(v: Vocabulary, ids: Iterable[int]) -> str:
    """Concatenate pieces, dropping specials and ``##`` markers."""
    parts = []
    n = len(v)
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise InvalidArgument(f"token id {i} out of range for vocabulary of size {n}")
        if i < NUM_SPECIALS:
            continue
        piece = v.pieces[i]
        if v.kind == "wordpiece" and piece.startswith("##"):
            piece = piece[2:]
        parts.append(piece)
    text = "".join(parts)
    if v.kind == "byte_bpe":
        dec = _byte_decoder()
        return bytes(dec[c] for c in text).decode("utf-8", errors="replace")
    return text
