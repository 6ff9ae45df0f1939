"""Command-line front end.

Every command reads and writes the file formats owned by the library
modules.  Errors print one JSON line on stderr and exit with a code that
names the failure class (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import adversary, corpus, encoder, evaluation, synthetic, tokenize, train
from .errors import EmptyDatasetError, FormatError, InvalidArgument, ParseError, UrlTranError

log = logging.getLogger("urltran")

EXIT_CODES = {
    "error": 1,
    "usage": 2,
    "missing_file": 3,
    "schema_mismatch": 4,
    "parse_error": 5,
    "invalid_argument": 6,
    "empty_dataset": 7,
    "malformed_url": 8,
}

PRESETS = ("desk", "urltran_bert", "urltran_roberta", "urltran_custvoc")
STAGE_SEEDS = ("corpus", "split", "pretrain", "finetune", "attack")


# --------------------------------------------------------------------------
# Run configuration


def _norm_key(key: str) -> str:
    key = key.lower().replace("β", "beta").replace("ε", "epsilon")
    key = re.sub(r"[$\\{}_]", " ", key)
    key = key.replace("beta 1", "beta1").replace("beta 2", "beta2")
    return " ".join(key.split())


_TOKENIZER_KEYS = {
    "tokenizer type": "kind",
    "vocab size": "vocab_size",
    "tokens per sample": "max_len",
    "max seq length": "max_len",
    "bert model": "bert_model",
    "lowercase": "lowercase",
}

_TRAIN_KEYS = {
    "peak learning rate": "peak_rate",
    "learning rate": "peak_rate",
    "batch size": "batch_size",
    "train batch size": "batch_size",
    "max epochs": "epochs",
    "num train epochs": "epochs",
    "learning rate decay": "decay",
    "warmup steps": "warmup_steps",
    "warmup ratio": "warmup_ratio",
    "lr shrink": "shrink",
    "lr patience": "patience",
    "weight decay": "weight_decay",
    "adam beta1": "beta1",
    "adam beta2": "beta2",
    "adam epsilon": "eps",
    "gradient clipping": "clip_norm",
    "desk batch size": "desk_batch_size",
}

_TOKENIZER_KINDS = {
    "byte bpe": "byte_bpe",
    "byte_bpe": "byte_bpe",
    "char bpe": "char_bpe",
    "character bpe": "char_bpe",
    "char_bpe": "char_bpe",
    "wordpiece": "wordpiece",
}

_DECAYS = {
    "linear": "linear_warmup_linear_decay",
    "linear warmup linear decay": "linear_warmup_linear_decay",
    "triangular": "triangular",
    "reduce on plateau": "reduce_on_plateau",
    "reduce_on_plateau": "reduce_on_plateau",
}


def _field_keys(cls) -> dict[str, str]:
    # lets a config written by to_dict() be read back
    return {_norm_key(f.name): f.name for f in fields(cls)}


def _batch_value(v) -> int:
    if isinstance(v, str):
        m = re.fullmatch(r"\s*(\d+)\s*([kK]?)\s*", v)
        if not m:
            raise FormatError(f"cannot read batch size {v!r}")
        return int(m.group(1)) * (1000 if m.group(2) else 1)
    return int(v)


@dataclass
class TokenizerSettings:
    kind: str = "byte_bpe"
    vocab_size: int = 1000
    max_len: int = 64
    bert_model: str | None = None
    lowercase: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "TokenizerSettings":
        out = {}
        keys = {**_TOKENIZER_KEYS, **_field_keys(cls)}
        for k, v in doc.items():
            name = keys.get(_norm_key(k))
            if name is None:
                raise FormatError(f"unknown tokenizer key {k!r}")
            if name == "kind":
                kind = _TOKENIZER_KINDS.get(str(v).lower())
                if kind is None:
                    raise FormatError(f"unknown tokenizer type {v!r}")
                v = kind
            out[name] = v
        return cls(**out)


@dataclass
class TrainSettings:
    """One training stage: schedule, optimizer and loop sizes.

    ``batch_size`` is the configured (full-scale) value; a
    ``desk_batch_size`` overrides it when present.
    """

    peak_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    decay: str = "linear_warmup_linear_decay"
    warmup_steps: int | None = None
    warmup_ratio: float = 0.06
    shrink: float = 0.5
    patience: int = 1
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    clip_norm: float = 0.0
    desk_batch_size: int | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainSettings":
        out = {}
        keys = {**_TRAIN_KEYS, **_field_keys(cls)}
        for k, v in doc.items():
            name = keys.get(_norm_key(k))
            if name is None:
                raise FormatError(f"unknown training key {k!r}")
            if name == "decay":
                decay = _DECAYS.get(_norm_key(str(v)))
                if decay is None:
                    raise FormatError(f"unknown learning rate decay {v!r}")
                v = decay
            elif name in ("batch_size", "desk_batch_size") and v is not None:
                v = _batch_value(v)
            out[name] = v
        return cls(**out)

    @property
    def effective_batch_size(self) -> int:
        return self.desk_batch_size or self.batch_size

    def schedule(self) -> train.Schedule:
        return train.Schedule(
            kind=self.decay,
            peak_rate=self.peak_rate,
            warmup_steps=self.warmup_steps,
            warmup_ratio=self.warmup_ratio,
            shrink=self.shrink,
            patience=self.patience,
        )

    def adam(self) -> train.AdamConfig:
        return train.AdamConfig(self.beta1, self.beta2, self.eps, self.weight_decay, self.clip_norm)


@dataclass
class RunConfig:
    tokenizer: TokenizerSettings = field(default_factory=TokenizerSettings)
    model: dict = field(default_factory=dict)
    pretrain: TrainSettings = field(default_factory=lambda: TrainSettings(weight_decay=0.01))
    finetune: TrainSettings = field(default_factory=TrainSettings)
    seeds: dict[str, int] = field(default_factory=dict)
    paths: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {"tokenizer", "model", "pretrain", "finetune", "seeds", "paths", "description"}
        unknown = set(doc) - known
        if unknown:
            raise FormatError(f"unknown config sections {sorted(unknown)}")
        seeds = doc.get("seeds", {})
        bad = set(seeds) - set(STAGE_SEEDS)
        if bad:
            raise FormatError(f"unknown seed names {sorted(bad)}")
        if not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds.values()):
            raise FormatError("seeds must be integers")
        model = dict(doc.get("model", {}))
        encoder.ModelConfig.from_dict(model)  # validate keys early
        return cls(
            tokenizer=TokenizerSettings.from_dict(doc.get("tokenizer", {})),
            model=model,
            pretrain=TrainSettings.from_dict({"Weight Decay": 0.01, **doc.get("pretrain", {})}),
            finetune=TrainSettings.from_dict(doc.get("finetune", {})),
            seeds=dict(seeds),
            paths=dict(doc.get("paths", {})),
        )

    def to_dict(self) -> dict:
        return {
            "tokenizer": asdict(self.tokenizer),
            "model": self.model,
            "pretrain": asdict(self.pretrain),
            "finetune": asdict(self.finetune),
            "seeds": dict(self.seeds),
            "paths": dict(self.paths),
        }

    def seed(self, stage: str) -> int:
        if stage not in self.seeds:
            raise InvalidArgument(f"no seed given for stage {stage!r}")
        return self.seeds[stage]

    def model_config(self, vocab_size: int) -> encoder.ModelConfig:
        doc = {"max_positions": self.tokenizer.max_len, **self.model, "vocab_size": vocab_size}
        cfg = encoder.ModelConfig.from_dict(doc)
        if cfg.max_positions < self.tokenizer.max_len:
            raise FormatError(f"max positions {cfg.max_positions} < tokens per sample {self.tokenizer.max_len}")
        return cfg


def preset_path(name: str) -> str:
    if name not in PRESETS:
        raise InvalidArgument(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return str(resources.files("urltran").joinpath(f"presets/{name}.json"))


def _read_json(path: str | os.PathLike):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None


def load_run_config(path: str | os.PathLike | None) -> RunConfig:
    """Config file (or preset name) to RunConfig; None gives the desk preset."""
    if path is None:
        path = preset_path("desk")
    elif str(path) in PRESETS:
        path = preset_path(str(path))
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise FormatError("config must be a JSON object")
    return RunConfig.from_dict(doc)


# --------------------------------------------------------------------------
# Building blocks shared by commands


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _apply_overrides(settings: TrainSettings, args) -> None:
    if getattr(args, "epochs", None) is not None:
        settings.epochs = args.epochs
    if getattr(args, "batch_size", None) is not None:
        settings.desk_batch_size = args.batch_size
    if getattr(args, "lr", None) is not None:
        settings.peak_rate = args.lr


def build_vocab(cfg: RunConfig, urls) -> tokenize.Vocabulary:
    tok = cfg.tokenizer
    if tok.kind == "wordpiece":
        return tokenize.load_wordpiece_vocab(tokenize.bundled_wordpiece_path())
    return tokenize.train_bpe(urls, tok.vocab_size, kind=tok.kind, lowercase=tok.lowercase)


def run_pretrain(cfg: RunConfig, ds, v, seed: int, out: Path) -> train.TrainResult:
    s = cfg.pretrain
    res = train.pretrain_mlm(
        cfg.model_config(len(v)), s.schedule(), ds, v, s.epochs, s.effective_batch_size, seed,
        max_len=cfg.tokenizer.max_len, adam=s.adam(),
    )
    _save_run(res, out)
    return res


def run_finetune(cfg: RunConfig, p, ds_train, ds_valid, v, seed: int, out: Path) -> train.TrainResult:
    s = cfg.finetune
    res = train.finetune(
        p, s.schedule(), ds_train, ds_valid, v, s.epochs, s.effective_batch_size, seed,
        max_len=cfg.tokenizer.max_len, adam=s.adam(),
    )
    _save_run(res, out)
    return res


def _save_run(res: train.TrainResult, out: Path) -> None:
    encoder.save_checkpoint(res.params, out)
    stem = out.with_suffix("")
    _write_text(stem.with_name(stem.name + ".steps.tsv"), res.step_log())
    _write_text(stem.with_name(stem.name + ".epochs.jsonl"), res.epoch_log())


def derive_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1, np.uint64)[0] >> 1)


# --------------------------------------------------------------------------
# Commands


def cmd_train_tokenizer(args) -> int:
    cfg = load_run_config(args.config)
    if args.kind:
        cfg.tokenizer.kind = args.kind
    if args.vocab_size:
        cfg.tokenizer.vocab_size = args.vocab_size
    ds = corpus.load_dataset(args.input)
    v = build_vocab(cfg, ds.urls)
    v.save(args.output)
    print(json.dumps({"kind": v.kind, "size": len(v), "merges": len(v.merges)}))
    return 0


def cmd_pretrain(args) -> int:
    cfg = load_run_config(args.config)
    _apply_overrides(cfg.pretrain, args)
    v = tokenize.load_vocab(args.vocab)
    ds = corpus.load_dataset(args.train)
    res = run_pretrain(cfg, ds, v, args.seed, Path(args.output))
    print(json.dumps({"epochs": res.epochs}))
    return 0


def cmd_finetune(args) -> int:
    cfg = load_run_config(args.config)
    _apply_overrides(cfg.finetune, args)
    v = tokenize.load_vocab(args.vocab)
    p = encoder.load_checkpoint(args.init)
    ds_train = corpus.load_dataset(args.train)
    ds_valid = corpus.load_dataset(args.valid) if args.valid else None
    res = run_finetune(cfg, p, ds_train, ds_valid, v, args.seed, Path(args.output))
    print(json.dumps({"epochs": res.epochs}))
    return 0


def cmd_attack(args) -> int:
    table = adversary.load_homoglyph_table(args.homoglyphs)
    words = adversary.load_dictionary(args.dictionary)
    ds = corpus.load_dataset(args.input)
    if args.attack == "augment":
        out = adversary.build_adversarial_dataset(ds, table, words, args.seed)
    else:
        records = []
        for i, rec in enumerate(ds.records):
            try:
                if args.attack == "homoglyph":
                    records.append(adversary.homoglyph_attack(rec.url, table, [args.seed, i]))
                elif args.attack == "compound":
                    records.append(adversary.compound_attack(rec.url, words))
                else:
                    records.append(adversary.reorder_params(rec.url, [args.seed, i], rec.label))
            except UrlTranError as exc:
                log.debug("record %d skipped: %s", i, exc)
        out = corpus.Dataset(records)
    corpus.save_dataset(out, args.output, with_origin=True)
    print(json.dumps({"input": len(ds), "output": len(out)}))
    return 0


def cmd_score(args) -> int:
    v = tokenize.load_vocab(args.vocab)
    p = encoder.load_checkpoint(args.checkpoint)
    ds = corpus.load_dataset(args.input)
    preds = evaluation.score_dataset(p, v, ds, args.batch_size, args.max_len, args.workers)
    evaluation.write_predictions(preds, args.output)
    return 0


def cmd_evaluate(args) -> int:
    preds = evaluation.read_predictions(args.predictions)
    if not preds:
        raise EmptyDatasetError(f"{args.predictions}: no predictions")
    fprs = args.fpr or [1e-4, 1e-3, 1e-2]
    report = evaluation.roc_report(preds, fprs, args.threshold)
    m = report["metrics"]
    for t in fprs:
        print(f"tpr@fpr={t:g}\t{m['tpr_at_fpr'][repr(float(t))]['tpr']:.6f}")
    print(f"auroc\t{m['auroc']:.6f}")
    if args.report:
        evaluation.write_json(report, args.report)
    if args.plot:
        _write_text(Path(args.plot), evaluation.roc_svg({"model": evaluation.roc_curve(preds)}, min(fprs)))
    return 0


def run_demo(out_dir: str | os.PathLike, seed: int, cfg: RunConfig | None = None, size: int = 2000) -> dict:
    """Synthetic corpus -> tokenizer -> pretrain -> fine-tune -> attacks -> reports.

    Stage seeds not given in ``cfg`` derive from ``seed``; the resolved
    config is written next to the artifacts.  Returns the summary that is
    also written to ``metrics.json``.
    """
    cfg = cfg or load_run_config(None)
    for k, stage in enumerate(STAGE_SEEDS):
        cfg.seeds.setdefault(stage, derive_seed(seed, k))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}

    def mark(name, t0):
        timings[name] = time.perf_counter() - t0
        log.info("%s done in %.1fs", name, timings[name])

    t0 = time.perf_counter()
    full = synthetic.make_corpus(size, cfg.seed("corpus"))
    ds_train, ds_valid, ds_test = corpus.split_dataset(full, (0.7, 0.15, 0.15), cfg.seed("split"))
    corpus.save_dataset(full, out / "corpus.tsv")
    for name, ds in (("train", ds_train), ("valid", ds_valid), ("test", ds_test)):
        corpus.save_dataset(ds, out / f"{name}.tsv")
    v = build_vocab(cfg, ds_train.urls)
    v.save(out / "vocab.json")
    mark("data", t0)

    t0 = time.perf_counter()
    pre = run_pretrain(cfg, ds_train, v, cfg.seed("pretrain"), out / "pretrain.json")
    mark("pretrain", t0)

    t0 = time.perf_counter()
    clean = run_finetune(cfg, pre.params, ds_train, ds_valid, v, cfg.seed("finetune"), out / "clean.json")
    mark("finetune", t0)

    t0 = time.perf_counter()
    table, words = adversary.load_homoglyph_table(), adversary.load_dictionary()
    adv_sets = {}
    for k, (name, ds) in enumerate((("train", ds_train), ("valid", ds_valid), ("test", ds_test))):
        adv_sets[name] = adversary.build_adversarial_dataset(ds, table, words, derive_seed(cfg.seed("attack"), k))
        corpus.save_dataset(adv_sets[name], out / f"{name}_adv.tsv", with_origin=True)
    adv = run_finetune(cfg, pre.params, adv_sets["train"], adv_sets["valid"], v, cfg.seed("finetune"), out / "adv.json")
    mark("adversarial", t0)

    t0 = time.perf_counter()
    max_len = cfg.tokenizer.max_len
    runs = {
        "clean_on_test": (clean.params, ds_test),
        "clean_on_test_adv": (clean.params, adv_sets["test"]),
        "adv_on_test_adv": (adv.params, adv_sets["test"]),
    }
    curves, results = {}, {}
    for name, (p, ds) in runs.items():
        preds = evaluation.score_dataset(p, v, ds, 64, max_len)
        evaluation.write_predictions(preds, out / f"{name}.predictions.tsv")
        report = evaluation.roc_report(preds)
        evaluation.write_json(report, out / f"{name}.roc.json")
        curves[name] = evaluation.roc_curve(preds)
        results[name] = report["metrics"]["auroc"]
    _write_text(out / "roc.svg", evaluation.roc_svg(curves, min_fpr=1e-3))
    mark("evaluate", t0)

    mlm = [e["mlm_loss"] for e in pre.epochs]
    train_scores = evaluation.predict_scores(clean.params, v, ds_train.urls, 64, max_len)
    train_acc = float(np.mean((train_scores >= 0.5) == (ds_train.labels == 1)))
    summary = {
        "mlm_loss_first_epoch": mlm[0] if mlm else None,
        "mlm_loss_last_epoch": mlm[-1] if mlm else None,
        "train_accuracy": train_acc,
        "train_mean_score": {
            "phish": float(train_scores[ds_train.labels == 1].mean()),
            "benign": float(train_scores[ds_train.labels == 0].mean()),
        },
        "test_auroc": results["clean_on_test"],
        "test_tpr_at_fpr": {repr(t): evaluation.tpr_at_fpr(curves["clean_on_test"], t) for t in (1e-3, 1e-2, 1e-1)},
        "adv_test_auroc_clean_model": results["clean_on_test_adv"],
        "adv_test_auroc_adv_model": results["adv_on_test_adv"],
        "sizes": {name: len(ds) for name, ds in (("train", ds_train), ("valid", ds_valid), ("test", ds_test))}
        | {f"{name}_adv": len(ds) for name, ds in adv_sets.items()},
    }
    summary["checks"] = {
        "mlm_loss_decreased": bool(mlm) and mlm[-1] < mlm[0],
        "test_auroc_at_least_0.95": summary["test_auroc"] >= 0.95,
        "adversarial_training_helps": summary["adv_test_auroc_adv_model"] > summary["adv_test_auroc_clean_model"],
    }
    evaluation.write_json(cfg.to_dict(), out / "run_config.json")
    evaluation.write_json(summary, out / "metrics.json")
    summary["timings"] = timings  # not written: wall time would break byte equality
    return summary


def cmd_demo(args) -> int:
    cfg = load_run_config(args.config)
    _apply_overrides(cfg.finetune, args)
    summary = run_demo(args.out, args.seed, cfg, args.size)
    timings = summary.pop("timings")
    print(json.dumps(summary, indent=1, sort_keys=True))
    log.info("total %.1fs", sum(timings.values()))
    return 0 if all(summary["checks"].values()) else 1


# --------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message)
        sys.exit(EXIT_CODES["usage"])


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="urltran", description="Transformer-based phishing URL detection toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=func)
        return p

    def config_flag(p):
        p.add_argument("--config", help="run config JSON file or preset name (" + ", ".join(PRESETS) + ")")

    p = cmd("train-tokenizer", cmd_train_tokenizer, "Build a vocabulary from training URLs.")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--kind", choices=tokenize.KINDS)
    p.add_argument("--vocab-size", type=int)
    config_flag(p)

    for name, func, help in (
        ("pretrain", cmd_pretrain, "Masked-LM pre-training."),
        ("finetune", cmd_finetune, "Fine-tune the phishing classifier."),
    ):
        p = cmd(name, func, help)
        p.add_argument("--train", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--output", required=True, help="checkpoint manifest path (.json)")
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float, help="peak learning rate")
        config_flag(p)
        if name == "finetune":
            p.add_argument("--init", required=True, help="pre-trained checkpoint")
            p.add_argument("--valid")

    p = cmd("attack", cmd_attack, "Perturb URLs or build an augmented dataset.")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--attack", choices=("augment", "homoglyph", "compound", "reorder"), default="augment")
    p.add_argument("--homoglyphs", help="homoglyph table JSON (default: bundled)")
    p.add_argument("--dictionary", help="word list, one per line (default: bundled)")

    p = cmd("score", cmd_score, "Score a dataset with a checkpoint.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-len", type=int)
    p.add_argument("--workers", type=int, default=1)

    p = cmd("evaluate", cmd_evaluate, "ROC metrics from a predictions file.")
    p.add_argument("--predictions", required=True)
    p.add_argument("--fpr", type=float, action="append", help="target FPR (repeatable)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--report", help="write the JSON ROC report here")
    p.add_argument("--plot", help="write an SVG low-FPR ROC plot here")

    p = cmd("demo", cmd_demo, "Run the synthetic end-to-end pipeline.")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="demo_out")
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--epochs", type=int, help="override fine-tune epochs")
    config_flag(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _emit_error("missing_file", f"{exc.filename}: {exc.strerror}")
        return EXIT_CODES["missing_file"]
    except UrlTranError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_CODES.get(exc.kind, EXIT_CODES["error"])
    except (OSError, FloatingPointError) as exc:
        _emit_error("error", str(exc))
        return EXIT_CODES["error"]


if __name__ == "__main__":
    sys.exit(main())
