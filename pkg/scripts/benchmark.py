"""Compute-matched comparison of all model kinds on one corpus.

Every model gets the same training-FLOP budget; step counts then differ by
cost per byte. Writes results.csv (model_id,flops_per_byte,bpb) in the format
the `bytelm pareto` command reads, plus a frontier SVG and a wider table.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from bytelm.accounting import (
    ParetoPoint,
    count_params,
    pareto_frontier,
    svg_scatter,
    training_flops_per_byte,
)
from bytelm.bpe import bpe_train, bytes_per_token, save_vocab
from bytelm.cli import model_id
from bytelm.data import load_corpus, split_corpus, token_corpus
from bytelm.models import ModelConfig
from bytelm.train import TrainConfig, train_loop


def build_configs(vocab_size: int):
    # Matched byte contexts; subword context is scaled down by its patch rate.
    t = 192
    common = dict(dim=64, context=t)
    multi = dict(local_dim=64, global_context=48, global_layers=2, local_layers=2)
    return [
        ModelConfig(kind="spacebyte", **common, **multi),
        ModelConfig(kind="spacebyte_fixed", **common, **multi, patch=4),
        ModelConfig(kind="megabyte", dim=64, local_dim=64, patch=4,
                    global_context=48, context=192, global_layers=2, local_layers=2),
        ModelConfig(kind="window_transformer", **common, layers=2, window=48),
        ModelConfig(kind="transformer", **common, layers=2),
        ModelConfig(kind="transformer", dim=64, layers=2, context=48,
                    vocab_size=vocab_size),
    ]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus", default="data/corpus.jsonl")
    ap.add_argument("--out-dir", default="runs/benchmark")
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--ref-steps", type=int, default=1500,
                    help="steps the window transformer gets; fixes the budget")
    ap.add_argument("--vocab-size", type=int, default=1024)
    ap.add_argument("--bpe-train-bytes", type=int, default=1_000_000,
                    help="corpus prefix used to learn BPE merges")
    ap.add_argument("--eval-windows", type=int, default=48)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    corpus = load_corpus(args.corpus)
    train_c, eval_c = split_corpus(corpus, 0.1)
    print(f"corpus: {corpus.data.size} bytes, {corpus.n_docs} documents "
          f"({train_c.data.size} train / {eval_c.data.size} eval)")

    t0 = time.time()
    vocab = bpe_train(train_c.data[: args.bpe_train_bytes], args.vocab_size)
    save_vocab(out_dir / "vocab.json", vocab)
    bpt = bytes_per_token(vocab, train_c.data[: args.bpe_train_bytes])
    print(f"bpe: vocab {vocab.vocab_size}, {bpt:.3f} bytes/token "
          f"({time.time() - t0:.1f}s)")

    configs = build_configs(vocab.vocab_size)
    # Budget = what the window transformer spends in --ref-steps.
    ref = configs[3]
    budget = training_flops_per_byte(ref) * args.batch * ref.context * args.ref_steps
    print(f"budget: {budget:.3e} training FLOPs per model")

    points, rows = [], []
    for cfg in configs:
        mid = model_id(cfg)
        subword = cfg.vocab_size != 256
        if subword:
            tr, ev = token_corpus(train_c, vocab), token_corpus(eval_c, vocab)
            lens, model_bpt = vocab.byte_lengths(), bpt
        else:
            tr, ev = train_c, eval_c
            lens, model_bpt = None, 1.0

        tcfg = TrainConfig(batch_size=args.batch, flop_budget=budget,
                           eval_windows=args.eval_windows, seed=args.seed)
        t0 = time.time()
        res = train_loop(cfg, tcfg, tr, out_dir / mid, eval_corpus=ev,
                         byte_lengths=lens, bytes_per_token=model_bpt)
        fpb = training_flops_per_byte(cfg, bytes_per_token=model_bpt)
        points.append(ParetoPoint(fpb, res.final_eval.bpb, mid))
        rows.append((mid, count_params(cfg).total, fpb, res.steps,
                     res.final_eval.bpb, res.final_eval.stderr))
        print(f"{mid}: {res.steps} steps, eval bpb {res.final_eval.bpb:.4f} "
              f"+/- {res.final_eval.stderr:.4f} ({time.time() - t0:.1f}s)")

    with open(out_dir / "results.csv", "w", encoding="utf-8") as f:
        f.write("model_id,flops_per_byte,bpb\n")
        for p in points:
            f.write(f"{p.model_id},{p.flops_per_byte!r},{p.bpb!r}\n")

    frontier = pareto_frontier(points)
    svg_scatter(points, frontier, out_dir / "frontier.svg",
                title="compute-matched eval",
                xlabel="training FLOPs per byte", ylabel="bits per byte")

    header = f"{'model':<34}{'params':>10}{'flops/byte':>14}{'steps':>8}{'bpb':>10}{'stderr':>9}"
    print()
    print(header)
    print("-" * len(header))
    for mid, n, fpb, steps, bpb, se in sorted(rows, key=lambda r: r[4]):
        print(f"{mid:<34}{n:>10}{fpb:>14.3e}{steps:>8}{bpb:>10.4f}{se:>9.4f}")
    print(f"\nfrontier: {', '.join(p.model_id for p in frontier)}")
    print(f"wrote {out_dir}/results.csv and {out_dir}/frontier.svg")
    return 0


if __name__ == "__main__":
    sys.exit(main())
