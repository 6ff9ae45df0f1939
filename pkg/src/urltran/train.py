"""MLM pre-training with dynamic masking, and classifier fine-tuning.

Both loops run Adam (decoupled weight decay, optional global-norm
clipping) under one of three learning-rate schedules.  Every random draw
comes from the run seed, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Dataset
from .encoder import ModelConfig, ModelParams, init_params, value_and_grad
from .errors import InvalidArgument
from .tokenize import CLS_ID, IGNORE, MASK_ID, NUM_SPECIALS, PAD_ID, SEP_ID, TokenSequence, Vocabulary, encode

log = logging.getLogger(__name__)

SCHEDULE_KINDS = ("linear_warmup_linear_decay", "triangular", "reduce_on_plateau")


@dataclass(frozen=True)
class MaskingPolicy:
    select_prob: float = 0.15
    replace_mask_frac: float = 0.8
    keep_frac: float = 0.1
    random_frac: float = 0.1

    def __post_init__(self):
        for name in ("select_prob", "replace_mask_frac", "keep_frac", "random_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1]")
        total = self.replace_mask_frac + self.keep_frac + self.random_frac
        if abs(total - 1.0) > 1e-9:
            raise InvalidArgument(f"replace/keep/random fractions must sum to 1, got {total}")


def mask_array(ids: np.ndarray, attention_mask: np.ndarray, policy: MaskingPolicy, vocab_size: int, rng: np.random.Generator):
    """Vectorised BERT masking over a ``[B, L]`` (or ``[L]``) id array.

    Returns ``(masked_ids, mlm_labels)``.  Each attended non-special
    position is selected independently; a selected position independently
    becomes ``[MASK]``, stays, or becomes a random non-special id.
    """
    ids = np.asarray(ids)
    eligible = (np.asarray(attention_mask) == 1) & (ids != PAD_ID) & (ids != CLS_ID) & (ids != SEP_ID)
    select = (rng.random(ids.shape) < policy.select_prob) & eligible
    action = rng.random(ids.shape)
    if vocab_size > NUM_SPECIALS:
        random_ids = rng.integers(NUM_SPECIALS, vocab_size, size=ids.shape)
    else:
        random_ids = np.full(ids.shape, MASK_ID)
    to_mask = select & (action < policy.replace_mask_frac)
    to_random = select & (action >= policy.replace_mask_frac + policy.keep_frac)
    out = ids.copy()
    out[to_mask] = MASK_ID
    out[to_random] = random_ids[to_random]
    labels = np.where(select, ids, IGNORE)
    return out, labels


def mask_tokens(seq: TokenSequence, policy: MaskingPolicy, v: Vocabulary, seed) -> TokenSequence:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ids, labels = mask_array(seq.ids, seq.attention_mask, policy, len(v), rng)
    return TokenSequence(ids, seq.attention_mask.copy(), labels)


# --------------------------------------------------------------------------
# Optimizer


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    weight_decay: float = 0.0
    clip_norm: float = 0.0  # 0 disables clipping


def clip_by_global_norm(grads: dict[str, np.ndarray], threshold: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most
    ``threshold``; returns the norm before clipping."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if threshold > 0 and norm > threshold:
        scale = threshold / norm
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Moments live in float64 regardless of parameter dtype.
    """

    def __init__(self, params: ModelParams, cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.step_count = 0
        self.m = {k: np.zeros(v.shape) for k, v in params.items()}
        self.v = {k: np.zeros(v.shape) for k, v in params.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.cfg
        if cfg.clip_norm > 0:
            clip_by_global_norm(grads, cfg.clip_norm)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - cfg.beta1**t
        c2 = 1.0 - cfg.beta2**t
        for name, p in params.items():
            g = grads[name].astype(np.float64)
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if lr == 0.0:
                continue
            update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
            if cfg.weight_decay:
                update = update + cfg.weight_decay * p
            p -= (lr * update).astype(p.dtype)


# --------------------------------------------------------------------------
# Schedules


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule.

    ``linear_warmup_linear_decay`` ramps 0 -> peak over the warmup, then
    decays linearly to 0 at the last step.  ``triangular`` rises from
    ``min_rate`` to ``peak_rate`` and back over each cycle (one cycle spans
    the run unless ``cycle_steps`` is set).  ``reduce_on_plateau`` starts at
    ``peak_rate`` and multiplies by ``shrink`` each time the monitored loss
    fails to improve for ``patience`` consecutive epochs.
    """

    kind: str = "linear_warmup_linear_decay"
    peak_rate: float = 1e-4
    warmup_steps: int | None = None
    warmup_ratio: float = 0.06
    shrink: float = 0.5
    patience: int = 1
    cycle_steps: int | None = None
    min_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise InvalidArgument(f"unknown schedule kind {self.kind!r}")
        if self.peak_rate < 0 or self.min_rate < 0:
            raise InvalidArgument("learning rates must be non-negative")

    def warmup_for(self, total_steps: int) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return int(round(self.warmup_ratio * total_steps))


def plateau_shrinks(history: Sequence[float], patience: int) -> int:
    """How many times a plateau schedule has shrunk after ``history``."""
    best = math.inf
    bad = 0
    shrinks = 0
    for value in history:
        if value < best:
            best = value
            bad = 0
        else:
            bad += 1
            if bad >= patience:
                shrinks += 1
                bad = 0
    return shrinks


def schedule_rate(s: Schedule, step: int, total_steps: int, validation_history: Sequence[float] = ()) -> float:
    if step < 0:
        raise InvalidArgument("step must be non-negative")
    if s.kind == "linear_warmup_linear_decay":
        warmup = s.warmup_for(total_steps)
        if warmup > 0 and step <= warmup:
            return s.peak_rate * step / warmup
        if total_steps <= warmup:
            return 0.0
        return s.peak_rate * max(0.0, (total_steps - step) / (total_steps - warmup))
    if s.kind == "triangular":
        cycle = s.cycle_steps or total_steps
        if cycle <= 0:
            return s.min_rate
        x = (step % cycle) / cycle
        return s.min_rate + (s.peak_rate - s.min_rate) * (1.0 - abs(2.0 * x - 1.0))
    if s.kind == "reduce_on_plateau":
        return s.peak_rate * s.shrink ** plateau_shrinks(validation_history, s.patience)
    raise InvalidArgument(f"unknown schedule kind {s.kind!r}")


# --------------------------------------------------------------------------
# Loops


@dataclass
class TrainResult:
    params: ModelParams
    steps: list[tuple[int, float, float]] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def step_log(self) -> str:
        return "".join(f"{s}\t{lr!r}\t{loss!r}\n" for s, lr, loss in self.steps)

    def epoch_log(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)


def _encode_dataset(v: Vocabulary, ds: Dataset, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    seqs = [encode(v, r.url, max_len) for r in ds.records]
    return np.stack([s.ids for s in seqs]), np.stack([s.attention_mask for s in seqs])


def _stage_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _seed_int(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def pretrain_mlm(
    cfg: ModelConfig,
    sched: Schedule,
    ds: Dataset,
    v: Vocabulary,
    epochs: int,
    batch_size: int,
    seed: int,
    *,
    max_len: int | None = None,
    policy: MaskingPolicy = MaskingPolicy(),
    adam: AdamConfig = AdamConfig(weight_decay=0.01),
    init: ModelParams | None = None,
) -> TrainResult:
    """Masked-LM pre-training on the (training-split) URLs of ``ds``.

    Masks are redrawn on every batch visit.  A plateau schedule monitors
    the mean training MLM loss of each epoch.
    """
    if not len(ds):
        raise InvalidArgument("empty dataset")
    if batch_size <= 0 or epochs < 0:
        raise InvalidArgument("batch_size must be positive and epochs non-negative")
    if len(v) != cfg.vocab_size:
        raise InvalidArgument(f"vocabulary size {len(v)} != model vocab_size {cfg.vocab_size}")
    max_len = max_len or cfg.max_positions
    init_rng, order_rng, mask_rng, drop_rng = _stage_rngs(seed, 4)
    p = init.copy() if init is not None else init_params(cfg, _seed_int(init_rng))
    opt = Adam(p, adam)
    ids, attn = _encode_dataset(v, ds, max_len)
    n = len(ids)
    per_epoch = math.ceil(n / batch_size)
    total = epochs * per_epoch
    result = TrainResult(p)
    history: list[float] = []
    step = 0
    for epoch in range(epochs):
        order = order_rng.permutation(n)
        losses = []
        for b in range(per_epoch):
            idx = order[b * batch_size : (b + 1) * batch_size]
            masked, labels = mask_array(ids[idx], attn[idx], policy, len(v), mask_rng)
            lr = schedule_rate(sched, step, total, history)
            loss, grads = value_and_grad(p, (masked, attn[idx]), labels, "mlm", seed=_seed_int(drop_rng))
            opt.step(p, grads, lr)
            result.steps.append((step, float(lr), float(loss)))
            losses.append(loss)
            step += 1
        if not p.is_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
        mean = float(np.mean(losses))
        history.append(mean)
        result.epochs.append({"stage": "pretrain", "epoch": epoch, "mlm_loss": mean, "lr": float(lr)})
        log.info("pretrain epoch %d: mlm loss %.4f", epoch, mean)
    return result


def finetune(
    p: ModelParams,
    sched: Schedule,
    ds_train: Dataset,
    ds_valid: Dataset | None,
    v: Vocabulary,
    epochs: int,
    batch_size: int,
    seed: int,
    *,
    max_len: int | None = None,
    adam: AdamConfig = AdamConfig(),
) -> TrainResult:
    """Fine-tune the classifier; returns the epoch with the best validation AUROC.

    Validation loss and AUROC are recorded after each epoch.  When the
    validation set lacks a class, the lowest validation loss decides
    instead.  A plateau schedule monitors validation loss.
    """
    from .evaluation import auroc, predict_scores, roc_curve

    if len(v) != p.config.vocab_size:
        raise InvalidArgument(f"vocabulary size {len(v)} != model vocab_size {p.config.vocab_size}")
    labels = ds_train.labels
    if not set(np.unique(labels).tolist()) <= {0, 1}:
        raise InvalidArgument("labels must be 0 or 1")
    if epochs == 0:
        return TrainResult(p.copy())
    if not len(ds_train):
        raise InvalidArgument("empty training set")
    max_len = max_len or p.config.max_positions
    order_rng, drop_rng = _stage_rngs(seed, 2)
    work = p.copy()
    opt = Adam(work, adam)
    ids, attn = _encode_dataset(v, ds_train, max_len)
    n = len(ids)
    per_epoch = math.ceil(n / batch_size)
    total = epochs * per_epoch
    result = TrainResult(work.copy())
    history: list[float] = []
    best_key = None
    step = 0
    for epoch in range(epochs):
        order = order_rng.permutation(n)
        losses = []
        for b in range(per_epoch):
            idx = order[b * batch_size : (b + 1) * batch_size]
            lr = schedule_rate(sched, step, total, history)
            loss, grads = value_and_grad(work, (ids[idx], attn[idx]), labels[idx], "cls", seed=_seed_int(drop_rng))
            opt.step(work, grads, lr)
            result.steps.append((step, float(lr), float(loss)))
            losses.append(loss)
            step += 1
        if not work.is_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
        record = {"stage": "finetune", "epoch": epoch, "train_loss": float(np.mean(losses)), "lr": float(lr)}
        key: tuple
        if ds_valid is not None and len(ds_valid):
            y = ds_valid.labels
            scores = predict_scores(work, v, ds_valid.urls, batch_size=max(batch_size, 64), max_len=max_len)
            eps = 1e-12
            vloss = float(-np.mean(y * np.log(scores + eps) + (1 - y) * np.log(1 - scores + eps)))
            record["valid_loss"] = vloss
            history.append(vloss)
            if 0 < y.sum() < len(y):
                record["valid_auroc"] = auroc(roc_curve(list(zip(y, scores))))
                key = (record["valid_auroc"], -vloss)
            else:
                key = (-vloss,)
        else:
            history.append(record["train_loss"])
            key = (-record["train_loss"],)
        if best_key is None or key > best_key:
            best_key = key
            result.params = work.copy()
            record["best"] = True
        result.epochs.append(record)
        log.info("finetune epoch %d: %s", epoch, record)
    return result
