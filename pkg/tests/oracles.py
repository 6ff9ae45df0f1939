"""Independent reference implementations used as test oracles.

Each one is written the slow, obvious way and shares no code with the
package beyond the public function being checked.
"""

from __future__ import annotations

import itertools
from collections import Counter

import numpy as np

from urltran.encoder import ModelConfig, ModelParams, init_params, loss_value, value_and_grad
from urltran.tokenize import CLS_ID, IGNORE, PAD_ID, SEP_ID

# --------------------------------------------------------------------------
# Finite differences


def fd_config() -> ModelConfig:
    return ModelConfig(
        num_layers=2, hidden_size=16, ffn_size=32, num_heads=2, max_positions=8,
        vocab_size=12, dropout=0.0, attention_dropout=0.0,
    )


def fd_problem(seed: int, cfg: ModelConfig | None = None):
    """Random float64 params (far from init so every path is exercised) and
    a padded batch with classification and MLM labels."""
    cfg = cfg or fd_config()
    rng = np.random.default_rng(seed)
    p = init_params(cfg, seed, np.float64)
    for name, t in p.items():
        t[...] = rng.normal(0.0, 0.4, size=t.shape) + (1.0 if name.endswith(".gamma") else 0.0)
    lengths = [cfg.max_positions, 5, 3]
    ids = np.full((3, cfg.max_positions), PAD_ID)
    mask = np.zeros_like(ids)
    mlm = np.full_like(ids, IGNORE)
    for b, n in enumerate(lengths):
        ids[b, 0] = CLS_ID
        ids[b, 1 : n - 1] = rng.integers(5, cfg.vocab_size, size=n - 2)
        ids[b, n - 1] = SEP_ID
        mask[b, :n] = 1
        mlm[b, 1] = rng.integers(5, cfg.vocab_size)
    labels = np.array([0, 1, 1])
    return p, (ids, mask), labels, mlm


def central_differences(p: ModelParams, batch, labels, kind: str, eps: float = 1e-3) -> dict[str, np.ndarray]:
    """Element-wise central differences of the eval-mode loss."""
    out = {}
    for name, t in p.items():
        g = np.zeros_like(t)
        flat, gflat = t.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss_value(p, batch, labels, kind, mode="eval")
            flat[i] = old - eps
            down = loss_value(p, batch, labels, kind, mode="eval")
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


# A tensor whose true gradient is exactly zero (the key bias: softmax is
# shift invariant) has only rounding noise on both sides; the floor keeps
# the ratio meaningful there.
NORM_FLOOR = 1e-6


def gradient_errors(p: ModelParams, batch, labels, kind: str, eps: float = 1e-3) -> dict[str, float]:
    """Per-tensor relative error ||g - fd|| / max(||g|| + ||fd||, floor)."""
    _, grads = value_and_grad(p, batch, labels, kind, mode="eval")
    fd = central_differences(p, batch, labels, kind, eps)
    errs = {}
    for name in fd:
        num = np.linalg.norm(grads[name] - fd[name])
        den = max(np.linalg.norm(grads[name]) + np.linalg.norm(fd[name]), NORM_FLOOR)
        errs[name] = float(num / den)
    return errs


# --------------------------------------------------------------------------
# ROC


def pairwise_auroc(labels, scores) -> float:
    """Mann-Whitney statistic over every (positive, negative) pair, ties count 1/2."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    pos, neg = scores[labels == 1][:, None], scores[labels == 0][None, :]
    wins = np.sum(pos > neg) + 0.5 * np.sum(pos == neg)
    return float(wins) / (pos.size * neg.size)


def brute_tpr_at_fpr(labels, scores, target: float) -> float:
    """Try every threshold (plus +inf) and keep the best TPR within the FPR cap."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    pos, neg = labels.sum(), (1 - labels).sum()
    best = 0.0
    for thr in list(scores) + [np.inf]:
        pred = scores >= thr
        fpr = (pred & (labels == 0)).sum() / neg
        if fpr <= target + 1e-12:
            best = max(best, (pred & (labels == 1)).sum() / pos)
    return float(best)


# --------------------------------------------------------------------------
# Segmentation


def all_segmentations(s: str, words) -> list[tuple[str, ...]]:
    """Every way of cutting ``s`` into dictionary words (2^(n-1) cut sets)."""
    words = {w.lower() for w in words}
    n = len(s)
    found = []
    for cuts in itertools.product((False, True), repeat=n - 1):
        parts, start = [], 0
        for i, cut in enumerate(cuts, start=1):
            if cut:
                parts.append(s[start:i])
                start = i
        parts.append(s[start:])
        if all(part.lower() in words for part in parts):
            found.append(tuple(parts))
    return found


def segmentation_strings(words, max_words: int = 3, letters: str = "ab", max_letters: int = 10) -> list[str]:
    """Every concatenation of up to ``max_words`` dictionary words (length <= 12)
    plus every string over ``letters`` up to ``max_letters`` long; the latter
    are dense in overlapping segmentations and in failures."""
    seen = set()
    for k in range(1, max_words + 1):
        for combo in itertools.product(words, repeat=k):
            s = "".join(combo)
            if len(s) <= 12:
                seen.add(s)
    for n in range(1, max_letters + 1):
        for chars in itertools.product(letters, repeat=n):
            seen.add("".join(chars))
    return sorted(seen)


def preferred_segmentation(segs):
    """Fewest parts, then longest first part, longest second, ..."""
    return min(segs, key=lambda parts: (len(parts), [-len(x) for x in parts]))


# --------------------------------------------------------------------------
# Strings


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


# --------------------------------------------------------------------------
# BPE


def brute_bpe_merges(corpus: list[str], n_merges: int) -> list[tuple[str, str]]:
    """Naive BPE over character lists: recount every pair from scratch each
    round, pick the max count with the lexicographically smallest pair."""
    seqs = [list(w) for w in corpus]
    merges = []
    for _ in range(n_merges):
        counts = Counter()
        for seq in seqs:
            for a, b in zip(seq, seq[1:]):
                counts[(a, b)] += 1
        if not counts:
            break
        top = max(counts.values())
        if top < 2:
            break
        pair = min(k for k, c in counts.items() if c == top)
        merges.append(pair)
        new_seqs = []
        for seq in seqs:
            out, i = [], 0
            while i < len(seq):
                if i + 1 < len(seq) and (seq[i], seq[i + 1]) == pair:
                    out.append(seq[i] + seq[i + 1])
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            new_seqs.append(out)
        seqs = new_seqs
    return merges
