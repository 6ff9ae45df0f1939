# cython: boundscheck=False, wraparound=False
"""Compiled twins of the routines in ``_kernels_py``."""


def bpe_merge_word(seq, dict ranks):
    cdef list s = list(seq)
    cdef Py_ssize_t i, n
    cdef long best_rank, a = 0, b = 0, new = 0, x, y
    cdef object hit
    cdef bint found
    cdef list out
    while len(s) > 1:
        n = len(s)
        found = False
        best_rank = -1
        for i in range(n - 1):
            hit = ranks.get((s[i], s[i + 1]))
            if hit is not None:
                x = (<tuple>hit)[0]
                if not found or x < best_rank:
                    found = True
                    best_rank = x
                    a = s[i]
                    b = s[i + 1]
                    new = (<tuple>hit)[1]
        if not found:
            break
        out = []
        i = 0
        while i < n:
            x = s[i]
            if i < n - 1 and x == a:
                y = s[i + 1]
                if y == b:
                    out.append(new)
                    i += 2
                    continue
            out.append(x)
            i += 1
        s = out
    return s


def bpe_apply_merge(list seqs, freqs, targets, long a, long b, long new, dict counts, dict where):
    cdef set changed = set()
    cdef list seq, out
    cdef Py_ssize_t i, n, idx
    cdef long f, x, y
    cdef bint hit
    cdef object p, st
    for idx in targets:
        seq = <list>seqs[idx]
        n = len(seq)
        f = freqs[idx]
        hit = False
        for i in range(n - 1):
            if <long>seq[i] == a and <long>seq[i + 1] == b:
                hit = True
                break
        if not hit:
            continue
        for i in range(n - 1):
            p = (seq[i], seq[i + 1])
            counts[p] = counts[p] - f
            changed.add(p)
        out = []
        i = 0
        while i < n:
            x = seq[i]
            if i < n - 1 and x == a:
                y = seq[i + 1]
                if y == b:
                    out.append(new)
                    i += 2
                    continue
            out.append(x)
            i += 1
        seqs[idx] = out
        n = len(out)
        for i in range(n - 1):
            p = (out[i], out[i + 1])
            counts[p] = counts.get(p, 0) + f
            st = where.get(p)
            if st is None:
                where[p] = {idx}
            else:
                (<set>st).add(idx)
            changed.add(p)
    return changed


def wordpiece_word(str word, dict vocab, long unk_id, Py_ssize_t max_chars):
    cdef Py_ssize_t n = len(word), start = 0, end
    cdef long found
    cdef list out = []
    cdef str sub
    if n > max_chars:
        return [unk_id]
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
