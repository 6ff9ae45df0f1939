"""Pure-Python reference kernels.

These define the semantics; ``_kernels.pyx`` must agree with them exactly
(the test suite compares the two on random inputs).
"""

from __future__ import annotations


def bpe_merge_word(seq, ranks):
    """Apply learned merges to a symbol-id sequence.

    ``ranks`` maps ``(left_id, right_id)`` to ``(rank, merged_id)``.  The
    lowest-ranked adjacent pair is merged everywhere (left to right,
    non-overlapping) until no adjacent pair has a rank.
    """
    seq = list(seq)
    while len(seq) > 1:
        best = None
        best_rank = -1
        for i in range(len(seq) - 1):
            hit = ranks.get((seq[i], seq[i + 1]))
            if hit is not None and (best is None or hit[0] < best_rank):
                best_rank = hit[0]
                best = (seq[i], seq[i + 1], hit[1])
        if best is None:
            break
        a, b, new = best
        out = []
        i = 0
        n = len(seq)
        while i < n:
            if i < n - 1 and seq[i] == a and seq[i + 1] == b:
                out.append(new)
                i += 2
            else:
                out.append(seq[i])
                i += 1
        seq = out
    return seq


def bpe_apply_merge(seqs, freqs, targets, a, b, new, counts, where):
    """Merge ``(a, b) -> new`` inside ``seqs[idx]`` for every idx in targets.

    ``counts`` (pair -> weighted occurrence count) and ``where`` (pair -> set
    of sequence indices that may contain it) are updated in place.  Returns
    the set of pairs whose count changed.
    """
    changed = set()
    for idx in targets:
        seq = seqs[idx]
        n = len(seq)
        f = freqs[idx]
        hit = False
        for i in range(n - 1):
            if seq[i] == a and seq[i + 1] == b:
                hit = True
                break
        if not hit:
            continue
        for i in range(n - 1):
            p = (seq[i], seq[i + 1])
            counts[p] -= f
            changed.add(p)
        out = []
        i = 0
        while i < n:
            if i < n - 1 and seq[i] == a and seq[i + 1] == b:
                out.append(new)
                i += 2
            else:
                out.append(seq[i])
                i += 1
        seqs[idx] = out
        for i in range(len(out) - 1):
            p = (out[i], out[i + 1])
            counts[p] = counts.get(p, 0) + f
            s = where.get(p)
            if s is None:
                where[p] = {idx}
            else:
                s.add(idx)
            changed.add(p)
    return changed


def wordpiece_word(word, vocab, unk_id, max_chars):
    """Greedy longest-match-first split of one pre-token.

    Non-initial pieces are looked up with a ``##`` prefix.  If any position
    has no match the whole word becomes ``[unk_id]``.
    """
    if len(word) > max_chars:
        return [unk_id]
    out = []
    start = 0
    n = len(word)
    while start < n:
        end = n
        found = -1
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = "##" + sub
            found = vocab.get(sub, -1)
            if found >= 0:
                break
            end -= 1
        if found < 0:
            return [unk_id]
        out.append(found)
        start = end
    return out
