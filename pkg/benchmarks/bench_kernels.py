"""Compare the compiled and pure-Python kernels on synthetic data.

    python benchmarks/bench_kernels.py [--bytes 300000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from vocalign import kernels
from vocalign.cooccurrence import count_cooc
from vocalign.glove import GloveConfig, GloveParams
from vocalign.synthetic import topic_corpus
from vocalign.tokenizer import train_bpe


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bytes", type=int, default=300_000, help="synthetic corpus size")
    ap.add_argument("--vocab", type=int, default=300)
    ap.add_argument("--window", type=int, default=15)
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    lines = topic_corpus(args.bytes, seed=0)
    tok = train_bpe(lines, args.vocab)
    stream = tok.encode_lines(lines)
    table = count_cooc(stream, args.window, len(tok))
    order = np.random.default_rng(0).permutation(len(table)).astype(np.int64)
    cfg = GloveConfig(dim=args.dim)
    print(f"{len(stream)} tokens, vocab {len(tok)}, {len(table)} nonzero cells, dim {args.dim}")
    print(f"{'kernel':<14}{'backend':<10}{'seconds':>10}{'speedup':>10}")

    results = {}
    for name in sorted(kernels.BACKENDS):
        results["cooc", name] = best_of(
            lambda: count_cooc(stream, args.window, len(tok), backend=name), args.repeat)

        def epoch():
            p = GloveParams.init(len(tok), args.dim, np.random.default_rng(0))
            kernels.get(name).glove_epoch(
                p.w, p.w_tilde, p.b, p.b_tilde, p.grad_sq_w, p.grad_sq_w_tilde, p.grad_sq_b,
                p.grad_sq_b_tilde, table.rows, table.cols, table.vals, order,
                cfg.learning_rate, cfg.x_max, cfg.alpha, cfg.grad_clip)

        results["glove_epoch", name] = best_of(epoch, args.repeat)

    for kernel in ("cooc", "glove_epoch"):
        base = results[kernel, "python"]
        for name in sorted(kernels.BACKENDS):
            t = results[kernel, name]
            print(f"{kernel:<14}{name:<10}{t:>10.4f}{base / t:>9.1f}x")


if __name__ == "__main__":
    main()
