"""Time the compiled and pure-Python tokenizer kernels on the same inputs.

Usage::

    python benchmarks/bench_kernels.py [--urls 4000] [--vocab-size 2000] [--repeat 3]

Each stage runs with the kernels module pointed at one backend, and the
outputs of the two backends are compared before any time is reported.
"""

import argparse
import time
from contextlib import contextmanager

from urltran import kernels
from urltran.synthetic import make_corpus
from urltran.tokenize import bundled_wordpiece_path, content_ids, load_wordpiece_vocab, train_bpe


@contextmanager
def use_backend(backend):
    names = ("bpe_merge_word", "bpe_apply_merge", "wordpiece_word")
    saved = {n: getattr(kernels, n) for n in names}
    for n in names:
        setattr(kernels, n, getattr(backend, n))
    try:
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def best_of(repeat, fn):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--urls", type=int, default=4000)
    ap.add_argument("--vocab-size", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    urls = make_corpus(args.urls, seed=0).urls
    bert = load_wordpiece_vocab(bundled_wordpiece_path())
    backends = {"python": kernels.python_backend, "cython": kernels.compiled_backend}

    results = {}
    for name, backend in backends.items():
        with use_backend(backend):
            t_train, vocab = best_of(args.repeat, lambda: train_bpe(urls, args.vocab_size))
            t_enc, enc = best_of(args.repeat, lambda: [content_ids(vocab, u) for u in urls])
            t_wp, wp = best_of(args.repeat, lambda: [content_ids(bert, u) for u in urls])
        results[name] = {"bpe train": (t_train, vocab), "bpe encode": (t_enc, enc), "wordpiece encode": (t_wp, wp)}

    print(f"{args.urls} URLs, vocab {args.vocab_size}, best of {args.repeat}")
    print(f"{'stage':<18}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for stage in results["python"]:
        (tp, op), (tc, oc) = results["python"][stage], results["cython"][stage]
        if op != oc:
            raise SystemExit(f"{stage}: backends disagree")
        print(f"{stage:<18}{tp:>10.3f}{tc:>10.3f}{tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
