"""Regenerate the data files shipped in ``src/urltran/data``.

Sources (all permissively licensed, fetched from the package index):

* ``homoglyphs`` (MIT) -- its ``confusables.json`` is a snapshot of the
  Unicode confusables list.  We keep ASCII letters/digits as keys and only
  non-ASCII confusables whose Unicode name is LATIN* or CYRILLIC*.
* ``english-words`` (MIT) -- the ``web2`` lowercase alphabetic word list.
* npm ``bert-tokenizer`` (Apache-2.0) -- ships the bert-base-uncased vocab
  with the sentencepiece ``▁`` word-start convention; converted back to
  the ``##`` continuation convention.  The output must hash to
  ``07eced375cec144d27c900241f3e339478dec958f92fddbc551f295c992038a3``.

Usage::

    pip download --no-deps -d /tmp/src homoglyphs english-words
    npm pack bert-tokenizer   # then untar into /tmp/src/bert-tokenizer
    python tools/build_data_files.py /tmp/src
"""

import glob
import hashlib
import json
import os
import pickle
import string
import sys
import unicodedata
import zipfile

DATA = os.path.join(os.path.dirname(__file__), "..", "src", "urltran", "data")
BERT_SHA256 = "07eced375cec144d27c900241f3e339478dec958f92fddbc551f295c992038a3"


KEEP_SINGLE = {"a", "i"}


def _wheel_member(src, pattern, member):
    (whl,) = glob.glob(os.path.join(src, pattern))
    with zipfile.ZipFile(whl) as zf:
        return zf.read(member)


def homoglyph_table(src):
    confusables = json.loads(_wheel_member(src, "homoglyphs-*.whl", "homoglyphs/confusables.json"))
    table = {}
    for key in string.ascii_letters + string.digits:
        targets = set()
        for cand in confusables.get(key, []):
            if len(cand) != 1 or ord(cand) < 128 or cand == key:
                continue
            name = unicodedata.name(cand, "")
            if name.startswith(("LATIN", "CYRILLIC")):
                targets.add(cand)
        if targets:
            table[key] = sorted(targets)
    return table


def word_list(src):
    words = pickle.loads(
        _wheel_member(src, "english_words-*.whl", "english_words/data/web2_alpha_lower.pickle")
    )
    # web2 lists every letter as a word, which would let any string "split"
    return sorted(w for w in words if w.isalpha() and w.isascii() and (len(w) > 1 or w in KEEP_SINGLE))


def bert_vocab(src):
    with open(os.path.join(src, "bert-tokenizer", "package", "assets", "vocab.json")) as fh:
        raw = json.load(fh)
    pieces = []
    for i, piece in enumerate(raw):
        if i == 1:
            pieces.append("[unused0]")
        elif piece.startswith("[") and piece.endswith("]") and i < 999:
            pieces.append(piece)
        elif piece.startswith("▁"):
            pieces.append(piece[1:])
        else:
            pieces.append("##" + piece)
    return "\n".join(pieces) + "\n"


def main(src):
    with open(os.path.join(DATA, "homoglyphs.json"), "w", encoding="utf-8") as fh:
        json.dump(homoglyph_table(src), fh, ensure_ascii=False, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(DATA, "words.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(word_list(src)) + "\n")
    vocab = bert_vocab(src)
    digest = hashlib.sha256(vocab.encode("utf-8")).hexdigest()
    if digest != BERT_SHA256:
        sys.exit(f"bert vocab hash mismatch: {digest}")
    with open(os.path.join(DATA, "bert-base-uncased-vocab.txt"), "w", encoding="utf-8") as fh:
        fh.write(vocab)


if __name__ == "__main__":
    main(sys.argv[1])
