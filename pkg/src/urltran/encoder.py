"""BERT-style transformer encoder in numpy with hand-written backprop.

Post-layer-norm blocks (attention then GELU feed-forward), a tanh pooler on
the ``[CLS]`` state feeding a two-class linear layer, and a linear MLM head
over every position.  Dense weights are stored ``[in, out]``; the
classifier (``[2, hidden]``) and MLM head (``[vocab, hidden]``) are stored
``[out, in]``.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import erf

from .errors import FormatError, InvalidArgument
from .tokenize import IGNORE

# Hyperparameter-table spellings accepted by ModelConfig.from_dict.
CONFIG_ALIASES = {
    "num hidden layers": "num_layers",
    "number of layers": "num_layers",
    "hidden size": "hidden_size",
    "intermediate size": "ffn_size",
    "ffn inner hidden size": "ffn_size",
    "num attention heads": "num_heads",
    "attention heads": "num_heads",
    "attention head size": "head_size",
    "max position embeddings": "max_positions",
    "vocab size": "vocab_size",
    "hidden dropout prob": "dropout",
    "dropout": "dropout",
    "attention probs dropout prob": "attention_dropout",
    "attention dropout": "attention_dropout",
    "initializer range": "initializer_range",
    "layer norm eps": "layer_norm_eps",
    "type vocab size": "type_vocab_size",
    "hidden act": "hidden_act",
    "pooler": "pooler",
}


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    hidden_size: int = 64
    ffn_size: int = 256
    num_heads: int = 4
    head_size: int | None = None
    max_positions: int = 64
    vocab_size: int = 1000
    dropout: float = 0.1
    attention_dropout: float = 0.1
    initializer_range: float = 0.02
    layer_norm_eps: float = 1e-12
    type_vocab_size: int = 0
    pooler: bool = True
    hidden_act: str = "gelu"

    def __post_init__(self):
        if self.num_heads <= 0 or self.hidden_size % self.num_heads:
            raise InvalidArgument(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        derived = self.hidden_size // self.num_heads
        if self.head_size is None:
            object.__setattr__(self, "head_size", derived)
        elif self.head_size != derived:
            raise InvalidArgument(
                f"head_size {self.head_size} != hidden_size / num_heads = {derived}"
            )
        if self.hidden_act != "gelu":
            raise InvalidArgument(f"only gelu activation is supported, got {self.hidden_act!r}")
        for name in ("num_layers", "ffn_size", "max_positions", "vocab_size"):
            if getattr(self, name) <= 0:
                raise InvalidArgument(f"{name} must be positive")
        for name in ("dropout", "attention_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidArgument(f"{name} must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in doc.items():
            name = key if key in known else CONFIG_ALIASES.get(key.lower())
            if name is None:
                raise FormatError(f"unknown model config key {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    def replace(self, **changes) -> "ModelConfig":
        doc = self.to_dict()
        doc.update(changes)
        if "head_size" not in changes:
            doc["head_size"] = None
        return ModelConfig(**doc)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor, in initialization order."""
    H, F, V = cfg.hidden_size, cfg.ffn_size, cfg.vocab_size
    shapes = {
        "embeddings.token": (V, H),
        "embeddings.position": (cfg.max_positions, H),
    }
    if cfg.type_vocab_size:
        shapes["embeddings.type"] = (cfg.type_vocab_size, H)
    shapes["embeddings.ln.gamma"] = (H,)
    shapes["embeddings.ln.beta"] = (H,)
    for i in range(cfg.num_layers):
        pre = f"layers.{i}."
        for proj in ("query", "key", "value", "output"):
            shapes[pre + f"attn.{proj}.weight"] = (H, H)
            shapes[pre + f"attn.{proj}.bias"] = (H,)
        shapes[pre + "attn.ln.gamma"] = (H,)
        shapes[pre + "attn.ln.beta"] = (H,)
        shapes[pre + "ffn.in.weight"] = (H, F)
        shapes[pre + "ffn.in.bias"] = (F,)
        shapes[pre + "ffn.out.weight"] = (F, H)
        shapes[pre + "ffn.out.bias"] = (H,)
        shapes[pre + "ffn.ln.gamma"] = (H,)
        shapes[pre + "ffn.ln.beta"] = (H,)
    if cfg.pooler:
        shapes["pooler.weight"] = (H, H)
        shapes["pooler.bias"] = (H,)
    shapes["classifier.weight"] = (2, H)
    shapes["classifier.bias"] = (2,)
    shapes["mlm.weight"] = (V, H)
    shapes["mlm.bias"] = (V,)
    return shapes


class ModelParams:
    """Config plus named tensors; behaves like a read-mostly dict."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise FormatError(f"tensor set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise FormatError(f"{name}: shape {tensors[name].shape} != {shape}")
        self.config = config
        self.tensors = {name: tensors[name] for name in expected}

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return self.tensors["embeddings.token"].dtype

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def equals(self, other: "ModelParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items()
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Normal(0, initializer_range) weights, unit LN scales, zero biases/offsets."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gamma"):
            t = np.ones(shape)
        elif name.endswith((".bias", ".beta")):
            t = np.zeros(shape)
        else:
            t = rng.normal(0.0, cfg.initializer_range, size=shape)
        tensors[name] = t.astype(dtype)
    return ModelParams(cfg, tensors)


# --------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(p: ModelParams, path: str | os.PathLike) -> None:
    """Write ``path`` (JSON manifest) and ``path`` with ``.bin`` suffix (float32 LE blob)."""
    path = os.fspath(path)
    blob_path = os.path.splitext(path)[0] + ".bin"
    entries = []
    offset = 0
    chunks = []
    for name, t in p.items():
        data = np.ascontiguousarray(t, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": "float32", "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format": "urltran-checkpoint/1",
        "config": p.config.to_dict(),
        "blob": os.path.basename(blob_path),
        "tensors": entries,
    }
    with open(blob_path, "wb") as fh:
        fh.write(b"".join(chunks))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad checkpoint manifest ({exc})") from None
    cfg = ModelConfig.from_dict(manifest["config"])
    with open(os.path.join(os.path.dirname(path), manifest["blob"]), "rb") as fh:
        blob = fh.read()
    expected = param_shapes(cfg)
    tensors = {}
    for e in manifest["tensors"]:
        name, shape = e["name"], tuple(e["shape"])
        if e["dtype"] != "float32":
            raise FormatError(f"{name}: unsupported dtype {e['dtype']}")
        if expected.get(name) != shape:
            raise FormatError(f"{name}: shape {shape} does not match config {expected.get(name)}")
        n = math.prod(shape)
        if e["nbytes"] != 4 * n or e["offset"] + e["nbytes"] > len(blob):
            raise FormatError(f"{name}: blob range out of bounds")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"]).reshape(shape).astype(np.float32)
    return ModelParams(cfg, tensors)


# --------------------------------------------------------------------------
# Forward / backward


@dataclass
class BatchOutput:
    pooled_logits: np.ndarray  # [B, 2]
    mlm_logits: np.ndarray | None  # [B, L, V]


class EmptyMaskWarning(UserWarning):
    """mlm_loss was given a batch with no masked positions."""


def stack_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    """ids and attention mask arrays from a list of TokenSequence or an
    ``(ids, mask)`` pair."""
    if isinstance(batch, tuple):
        ids, mask = batch
        return np.asarray(ids), np.asarray(mask)
    if not batch:
        raise InvalidArgument("empty batch")
    lengths = {len(s.ids) for s in batch}
    if len(lengths) != 1:
        raise InvalidArgument(f"sequences in a batch must share max_len, got {sorted(lengths)}")
    return np.stack([s.ids for s in batch]), np.stack([s.attention_mask for s in batch])


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _layer_norm(x, gamma, beta, eps):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma)


def _layer_norm_back(dy, cache):
    xhat, rstd, gamma = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axes)
    dbeta = dy.sum(axes)
    dxhat = dy * gamma
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dgamma, dbeta


def _dropout(x, rate, rng):
    if rng is None or rate == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * keep, keep


def _linear_back(dy, x, w):
    """Grads of ``y = x @ w + b`` for ``w`` stored ``[in, out]``."""
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, dw, dy.reshape(-1, dy.shape[-1]).sum(0)


def _forward(p: ModelParams, ids, mask, rng, heads):
    cfg = p.config
    B, L = ids.shape
    if L > cfg.max_positions:
        raise InvalidArgument(f"sequence length {L} exceeds max_positions {cfg.max_positions}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InvalidArgument("token id outside model vocabulary")
    nh, dh = cfg.num_heads, cfg.head_size
    dtype = p.dtype
    scale = dtype.type(1.0 / math.sqrt(dh))
    cache: dict = {"ids": ids, "mask": mask}

    emb = p["embeddings.token"][ids] + p["embeddings.position"][:L][None]
    if cfg.type_vocab_size:
        emb = emb + p["embeddings.type"][0]
    h, cache["emb_ln"] = _layer_norm(emb, p["embeddings.ln.gamma"], p["embeddings.ln.beta"], cfg.layer_norm_eps)
    h, cache["emb_drop"] = _dropout(h, cfg.dropout, rng)

    keymask = mask.astype(bool)[:, None, None, :]
    layers = []
    for i in range(cfg.num_layers):
        pre = f"layers.{i}."
        c: dict = {"x": h}

        def heads_of(t):
            return t.reshape(B, L, nh, dh).transpose(0, 2, 1, 3)

        q = heads_of(h @ p[pre + "attn.query.weight"] + p[pre + "attn.query.bias"])
        k = heads_of(h @ p[pre + "attn.key.weight"] + p[pre + "attn.key.bias"])
        v = heads_of(h @ p[pre + "attn.value.weight"] + p[pre + "attn.value.bias"])
        scores = np.where(keymask, (q @ k.transpose(0, 1, 3, 2)) * scale, -np.inf)
        scores = scores - scores.max(-1, keepdims=True)
        e = np.exp(scores)
        probs = e / e.sum(-1, keepdims=True)
        probs_d, c["attn_drop"] = _dropout(probs, cfg.attention_dropout, rng)
        ctx = (probs_d @ v).transpose(0, 2, 1, 3).reshape(B, L, nh * dh)
        c.update(q=q, k=k, v=v, probs=probs, probs_d=probs_d, ctx=ctx)

        a = ctx @ p[pre + "attn.output.weight"] + p[pre + "attn.output.bias"]
        a, c["out_drop"] = _dropout(a, cfg.dropout, rng)
        h1, c["ln1"] = _layer_norm(h + a, p[pre + "attn.ln.gamma"], p[pre + "attn.ln.beta"], cfg.layer_norm_eps)

        f1 = h1 @ p[pre + "ffn.in.weight"] + p[pre + "ffn.in.bias"]
        g = _gelu(f1)
        f2 = g @ p[pre + "ffn.out.weight"] + p[pre + "ffn.out.bias"]
        f2, c["ffn_drop"] = _dropout(f2, cfg.dropout, rng)
        h, c["ln2"] = _layer_norm(h1 + f2, p[pre + "ffn.ln.gamma"], p[pre + "ffn.ln.beta"], cfg.layer_norm_eps)
        c.update(h1=h1, f1=f1, g=g)
        layers.append(c)
    cache["layers"] = layers
    cache["h"] = h

    pooled_logits = None
    if "cls" in heads:
        cls_state = h[:, 0]
        if cfg.pooler:
            pooled = np.tanh(cls_state @ p["pooler.weight"] + p["pooler.bias"])
        else:
            pooled = cls_state
        cache["pooled"] = pooled
        pooled_d, cache["pool_drop"] = _dropout(pooled, cfg.dropout, rng)
        cache["pooled_d"] = pooled_d
        pooled_logits = pooled_d @ p["classifier.weight"].T + p["classifier.bias"]
    mlm_logits = None
    if "mlm" in heads:
        mlm_logits = h @ p["mlm.weight"].T + p["mlm.bias"]
    return BatchOutput(pooled_logits, mlm_logits), cache


def forward(p: ModelParams, batch, mode: str = "eval", seed: int = 0, heads=("cls", "mlm")) -> BatchOutput:
    """Run the encoder.  Dropout is applied only when ``mode == "train"``,
    with masks drawn from ``seed``.

    Padding positions (attention_mask 0) receive zero attention weight, so
    trailing PAD columns never change ``pooled_logits``.
    """
    if mode not in ("train", "eval"):
        raise InvalidArgument(f"mode must be train or eval, got {mode!r}")
    ids, mask = stack_batch(batch)
    rng = np.random.default_rng(seed) if mode == "train" else None
    out, _ = _forward(p, ids, mask, rng, heads)
    return out


def _log_softmax(x):
    m = x.max(-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


def classification_loss(out: BatchOutput, labels) -> float:
    """Mean cross-entropy of softmax(pooled_logits) against 0/1 labels."""
    labels = np.asarray(labels, dtype=np.int64)
    logits = np.asarray(out.pooled_logits, dtype=np.float64)
    if labels.shape != (logits.shape[0],):
        raise InvalidArgument(f"expected {logits.shape[0]} labels, got shape {labels.shape}")
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def mlm_loss(out: BatchOutput, mlm_labels) -> float:
    """Mean cross-entropy over positions whose label is not ``IGNORE``.

    A batch with nothing masked yields 0.0 and an :class:`EmptyMaskWarning`.
    """
    labels = np.asarray(mlm_labels, dtype=np.int64)
    sel = labels != IGNORE
    if not sel.any():
        warnings.warn("no masked positions in batch", EmptyMaskWarning, stacklevel=2)
        return 0.0
    logits = np.asarray(out.mlm_logits, dtype=np.float64)[sel]
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(logp)), labels[sel]].mean())


def value_and_grad(p: ModelParams, batch, labels, loss_kind: str, seed: int = 0, mode: str = "train"):
    """Loss and its exact gradient w.r.t. every tensor of ``p``.

    ``labels`` are per-record 0/1 for ``loss_kind="cls"`` and a ``[B, L]``
    array (``IGNORE`` where unmasked) for ``"mlm"``.  The gradient is of the
    forward pass run with the same ``mode`` and dropout ``seed``.
    """
    if loss_kind not in ("cls", "mlm"):
        raise InvalidArgument(f"loss_kind must be cls or mlm, got {loss_kind!r}")
    cfg = p.config
    ids, mask = stack_batch(batch)
    B, L = ids.shape
    rng = np.random.default_rng(seed) if mode == "train" else None
    out, cache = _forward(p, ids, mask, rng, heads=(loss_kind,))
    dtype = p.dtype
    grads = {name: np.zeros_like(t) for name, t in p.items()}
    labels = np.asarray(labels, dtype=np.int64)

    if loss_kind == "cls":
        loss = classification_loss(out, labels)
        probs = np.exp(_log_softmax(out.pooled_logits))
        dlogits = probs
        dlogits[np.arange(B), labels] -= 1.0
        dlogits = (dlogits / B).astype(dtype)
        grads["classifier.weight"] = dlogits.T @ cache["pooled_d"]
        grads["classifier.bias"] = dlogits.sum(0)
        dpooled = dlogits @ p["classifier.weight"]
        if cache["pool_drop"] is not None:
            dpooled = dpooled * cache["pool_drop"]
        dh = np.zeros((B, L, cfg.hidden_size), dtype=dtype)
        if cfg.pooler:
            dz = dpooled * (1.0 - cache["pooled"] ** 2)
            grads["pooler.weight"] = cache["h"][:, 0].T @ dz
            grads["pooler.bias"] = dz.sum(0)
            dh[:, 0] = dz @ p["pooler.weight"].T
        else:
            dh[:, 0] = dpooled
    else:
        if labels.shape != (B, L):
            raise InvalidArgument(f"mlm labels must have shape {(B, L)}, got {labels.shape}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyMaskWarning)
            loss = mlm_loss(out, labels)
        sel = labels != IGNORE
        n = int(sel.sum())
        h = cache["h"]
        if n == 0:
            dh = np.zeros_like(h)
        else:
            logits = out.mlm_logits[sel]
            dlog = np.exp(_log_softmax(logits))
            dlog[np.arange(n), labels[sel]] -= 1.0
            dlog = (dlog / n).astype(dtype)
            hs = h[sel]
            grads["mlm.weight"] = dlog.T @ hs
            grads["mlm.bias"] = dlog.sum(0)
            dh = np.zeros_like(h)
            dh[sel] = dlog @ p["mlm.weight"]

    nh, dh_ = cfg.num_heads, cfg.head_size
    for i in reversed(range(cfg.num_layers)):
        pre = f"layers.{i}."
        c = cache["layers"][i]
        dr2, grads[pre + "ffn.ln.gamma"], grads[pre + "ffn.ln.beta"] = _layer_norm_back(dh, c["ln2"])
        df2 = dr2 if c["ffn_drop"] is None else dr2 * c["ffn_drop"]
        dg, grads[pre + "ffn.out.weight"], grads[pre + "ffn.out.bias"] = _linear_back(df2, c["g"], p[pre + "ffn.out.weight"])
        df1 = dg * _gelu_grad(c["f1"])
        dh1, grads[pre + "ffn.in.weight"], grads[pre + "ffn.in.bias"] = _linear_back(df1, c["h1"], p[pre + "ffn.in.weight"])
        dh1 = dh1 + dr2

        dr1, grads[pre + "attn.ln.gamma"], grads[pre + "attn.ln.beta"] = _layer_norm_back(dh1, c["ln1"])
        da = dr1 if c["out_drop"] is None else dr1 * c["out_drop"]
        dctx, grads[pre + "attn.output.weight"], grads[pre + "attn.output.bias"] = _linear_back(da, c["ctx"], p[pre + "attn.output.weight"])
        dctx = dctx.reshape(B, L, nh, dh_).transpose(0, 2, 1, 3)
        dprobs_d = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["probs_d"].transpose(0, 1, 3, 2) @ dctx
        dprobs = dprobs_d if c["attn_drop"] is None else dprobs_d * c["attn_drop"]
        probs = c["probs"]
        dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))
        dscores = dscores * dtype.type(1.0 / math.sqrt(dh_))
        dq = dscores @ c["k"]
        dk = dscores.transpose(0, 1, 3, 2) @ c["q"]

        def merge(t):
            return t.transpose(0, 2, 1, 3).reshape(B, L, nh * dh_)

        dx = dr1
        for proj, dt in (("query", dq), ("key", dk), ("value", dv)):
            dxp, grads[pre + f"attn.{proj}.weight"], grads[pre + f"attn.{proj}.bias"] = _linear_back(
                merge(dt), c["x"], p[pre + f"attn.{proj}.weight"]
            )
            dx = dx + dxp
        dh = dx

    if cache["emb_drop"] is not None:
        dh = dh * cache["emb_drop"]
    demb, grads["embeddings.ln.gamma"], grads["embeddings.ln.beta"] = _layer_norm_back(dh, cache["emb_ln"])
    np.add.at(grads["embeddings.token"], ids, demb)
    grads["embeddings.position"][:L] = demb.sum(0)
    if cfg.type_vocab_size:
        grads["embeddings.type"][0] = demb.sum((0, 1))
    return loss, {k: np.asarray(v, dtype=dtype) for k, v in grads.items()}


def loss_value(p: ModelParams, batch, labels, loss_kind: str, seed: int = 0, mode: str = "train") -> float:
    """The loss :func:`value_and_grad` differentiates, without the backward pass."""
    ids, mask = stack_batch(batch)
    rng = np.random.default_rng(seed) if mode == "train" else None
    out, _ = _forward(p, ids, mask, rng, heads=(loss_kind,))
    if loss_kind == "cls":
        return classification_loss(out, labels)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyMaskWarning)
        return mlm_loss(out, labels)


def backward(p: ModelParams, batch, labels, loss_kind: str, seed: int = 0, mode: str = "train") -> dict[str, np.ndarray]:
    """Gradient of the chosen loss; see :func:`value_and_grad`."""
    return value_and_grad(p, batch, labels, loss_kind, seed, mode)[1]


def class_probabilities(out: BatchOutput) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(out.pooled_logits, dtype=np.float64)))
