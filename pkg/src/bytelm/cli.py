"""Command line entry points.

Exit codes: 0 success, 1 configuration or usage error, 2 data error
(missing or malformed files, bad byte streams), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .accounting import (
    ParetoPoint,
    count_params,
    flops_per_byte,
    grid_configs,
    pareto_frontier,
    svg_scatter,
    training_flops_per_byte,
)
from .bpe import bpe_train, bytes_per_token, decode, encode, load_vocab, save_vocab
from .checkpoint import load_checkpoint
from .data import build_corpus, load_corpus, load_documents, split_corpus, token_corpus
from .errors import ConfigError, DataError, NumericError
from .models import ModelConfig, generate
from .segment import as_byte_array, length_percentile, patch_stats, split_patches
from .train import TrainConfig, eval_bpb, train_loop

RUN_SECTIONS = {"model", "train", "data", "eval"}
DATA_KEYS = {"path", "split_fraction", "vocab"}
EVAL_KEYS = {"windows"}


def _read_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"config not found: {p}")
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DataError(f"malformed JSON in {p}: {e}")
    if not isinstance(d, dict):
        raise DataError(f"{p} must hold a JSON object")
    return d


def parse_run_config(d: dict) -> tuple[ModelConfig, TrainConfig, dict]:
    unknown = set(d) - RUN_SECTIONS
    if unknown:
        raise ConfigError(f"unknown run config sections: {sorted(unknown)}")
    if "model" not in d:
        raise ConfigError("run config needs a 'model' section")
    model_cfg = ModelConfig.from_dict(d["model"])
    train_cfg = TrainConfig.from_dict(d.get("train", {}))
    data = dict(d.get("data", {}))
    bad = set(data) - DATA_KEYS
    if bad:
        raise ConfigError(f"unknown data keys: {sorted(bad)}")
    ev = dict(d.get("eval", {}))
    bad = set(ev) - EVAL_KEYS
    if bad:
        raise ConfigError(f"unknown eval keys: {sorted(bad)}")
    if "windows" in ev:
        train_cfg.eval_windows = ev["windows"]
    return model_cfg, train_cfg, data


# -- subcommands ----------------------------------------------------------------


def cmd_segment(args) -> int:
    if args.text is not None:
        data = args.text.encode("utf-8")
        name = "-"
    else:
        p = Path(args.input)
        if not p.exists():
            raise DataError(f"input not found: {p}")
        data = p.read_bytes()
        name = p.name
    arr = as_byte_array(data)
    if args.stats:
        stats = patch_stats(arr)
        print("corpus,patch_count,mean_len,p50,p90")
        print(
            f"{name},{stats.count},{stats.mean_len:.3f},"
            f"{length_percentile(stats, 50):g},{length_percentile(stats, 90):g}"
        )
        return 0
    bounds = split_patches(arr)
    patches = [data[a:b] for a, b in bounds.spans()]
    print("|".join(p.decode("utf-8", errors="replace") for p in patches))
    return 0


def cmd_bpe_train(args) -> int:
    corpus = build_corpus(load_documents(args.input))
    vocab = bpe_train(corpus.data, args.vocab_size)
    save_vocab(args.out, vocab)
    bpt = bytes_per_token(vocab, corpus.data)
    print(f"vocab_size {vocab.vocab_size} merges {len(vocab.merges)} bytes_per_token {bpt:.4f}")
    return 0


def _load_eval_inputs(data_path, vocab_path):
    corpus = load_corpus(data_path)
    byte_lengths = None
    bpt = 1.0
    if vocab_path is not None:
        vocab = load_vocab(vocab_path)
        bpt = bytes_per_token(vocab, corpus.data)
        corpus = token_corpus(corpus, vocab)
        byte_lengths = vocab.byte_lengths()
    return corpus, byte_lengths, bpt


def cmd_train(args) -> int:
    model_cfg, train_cfg, data = parse_run_config(_read_json(args.config))
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.print_config:
        resolved = {
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "data": data,
        }
        print(json.dumps(resolved, indent=2, sort_keys=True))
        return 0
    if "path" not in data:
        raise ConfigError("data section needs a 'path' to train on")
    corpus, byte_lengths, bpt = _load_eval_inputs(data["path"], data.get("vocab"))
    frac = data.get("split_fraction", 0.1)
    train_c, eval_c = split_corpus(corpus, frac)
    res = train_loop(
        model_cfg,
        train_cfg,
        train_c,
        args.out,
        eval_corpus=eval_c,
        byte_lengths=byte_lengths,
        bytes_per_token=bpt,
        log=print,
    )
    if res.final_eval is not None:
        print(f"final eval_bpb {res.final_eval.bpb:.6f} stderr {res.final_eval.stderr:.6f}")
    print(f"wrote {res.metrics_path} {res.checkpoint_path} {res.run_path}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus, byte_lengths, _ = _load_eval_inputs(args.data, args.vocab)
    res = eval_bpb(model, corpus, limit=args.windows, byte_lengths=byte_lengths)
    print(
        f"bpb {res.bpb:.6f} stderr {res.stderr:.6f} "
        f"windows {res.n_windows} bytes {int(res.total_bytes)}"
    )
    return 0


def cmd_sample(args) -> int:
    model = load_checkpoint(args.checkpoint)
    vocab = None
    if model.cfg.vocab_size != 256:
        if args.vocab is None:
            raise ConfigError("subword checkpoints need --vocab to encode the prompt")
        vocab = load_vocab(args.vocab)
    prompt_bytes = args.prompt.encode("utf-8")
    if vocab is None:
        ids = np.concatenate([[model.cfg.bos_token], np.frombuffer(prompt_bytes, np.uint8)])
    else:
        ids = np.concatenate([[model.cfg.bos_token], encode(vocab, prompt_bytes)])
    rng = np.random.Generator(np.random.Philox(args.seed)) if args.temperature > 0 else None
    new = generate(model, ids, args.max_new, temperature=args.temperature, rng=rng)
    if vocab is None:
        text = bytes(new.astype(np.uint8)).decode("utf-8", errors="replace")
    else:
        text = decode(vocab, new).decode("utf-8", errors="replace")
    print(args.prompt + text)
    return 0


def cmd_flops(args) -> int:
    cfg = ModelConfig.from_dict(_read_json(args.config))
    counts = count_params(cfg)
    fb = flops_per_byte(cfg, args.bytes_per_token)
    print(f"m_global,{counts.m_global}")
    print(f"m_local,{counts.m_local}")
    print(f"params_total,{counts.total}")
    for name, value in fb.rows():
        print(f"{name},{value!r}")
    print(f"flops_per_byte,{fb.per_byte!r}")
    print(f"training_flops_per_byte,{training_flops_per_byte(cfg, args.bytes_per_token)!r}")
    return 0


def model_id(cfg: ModelConfig) -> str:
    """Short stable identifier used in grid and benchmark CSVs."""
    parts = [cfg.kind, f"d{cfg.dim}"]
    if cfg.kind in ("transformer", "window_transformer"):
        parts.append(f"l{cfg.layers}")
        if cfg.kind == "window_transformer":
            parts.append(f"w{cfg.window}")
    else:
        parts.append(f"g{cfg.global_layers}l{cfg.local_layers}")
        parts.append(f"ld{cfg.local_dim}")
        if cfg.patch is not None:
            parts.append(f"p{cfg.patch}")
    if cfg.vocab_size != 256:
        parts.append(f"v{cfg.vocab_size}")
    return "-".join(parts)


GRID_HEADER = (
    "model_id,kind,dim,local_dim,layers,global_layers,local_layers,"
    "patch,context,global_context,params,flops_per_byte"
)


def cmd_grid(args) -> int:
    cfgs = grid_configs(args.kind, args.tier, vocab_size=args.vocab_size)
    print(GRID_HEADER)
    for cfg in cfgs:
        fb = flops_per_byte(cfg, args.bytes_per_token)
        cells = [
            model_id(cfg), cfg.kind, cfg.dim, cfg.local_dim, cfg.layers,
            cfg.global_layers, cfg.local_layers, cfg.patch, cfg.context,
            cfg.global_context, count_params(cfg).total, repr(fb.per_byte),
        ]
        print(",".join("" if c is None else str(c) for c in cells))
    return 0


PARETO_HEADER = ["model_id", "flops_per_byte", "bpb"]


def read_pareto_csv(path) -> list[ParetoPoint]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"input not found: {p}")
    with open(p, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{p} is empty")
        if [h.strip() for h in header] != PARETO_HEADER:
            raise DataError(f"{p} header must be {','.join(PARETO_HEADER)}")
        points = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{p}:{i}: expected 3 columns, got {len(row)}")
            try:
                points.append(ParetoPoint(float(row[1]), float(row[2]), model_id=row[0]))
            except ValueError:
                raise DataError(f"{p}:{i}: non-numeric value")
    if not points:
        raise DataError(f"{p} has no data rows")
    return points


def cmd_pareto(args) -> int:
    points = read_pareto_csv(args.input)
    frontier = pareto_frontier(points)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PARETO_HEADER)
    for p in frontier:
        writer.writerow([p.model_id, repr(p.flops_per_byte), repr(p.bpb)])
    text = buf.getvalue()
    if args.out is not None:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out} ({len(frontier)} frontier points)")
    else:
        sys.stdout.write(text)
    if args.svg is not None:
        svg_scatter(points, frontier, args.svg)
        print(f"wrote {args.svg}")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bytelm", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="split text into word-aligned patches")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--text", help="literal text to segment")
    g.add_argument("--input", help="file of raw bytes to segment")
    p.add_argument("--stats", action="store_true", help="print patch length statistics as CSV")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("bpe-train", help="fit a byte-pair vocabulary")
    p.add_argument("--input", required=True, help="corpus file, directory, or .jsonl")
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--out", required=True, help="where to write vocab.json")
    p.set_defaults(func=cmd_bpe_train)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--print-config", action="store_true", help="show the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="bits per byte of a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", help="vocab.json for subword checkpoints")
    p.add_argument("--windows", type=int, help="cap on evaluation windows")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="generate text from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--max-new", type=int, default=64)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab", help="vocab.json for subword checkpoints")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("flops", help="parameter and FLOPs accounting for a model config")
    p.add_argument("--config", required=True, help="model config JSON")
    p.add_argument("--bytes-per-token", type=float, default=1.0)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("grid", help="print the model sweep for a kind and tier")
    p.add_argument("--kind", required=True)
    p.add_argument("--tier", required=True, choices=["small", "large"])
    p.add_argument("--vocab-size", type=int, default=256)
    p.add_argument("--bytes-per-token", type=float, default=1.0)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("pareto", help="compute the efficiency frontier from a results CSV")
    p.add_argument("--input", required=True, help="CSV with model_id,flops_per_byte,bpb")
    p.add_argument("--out", help="write the frontier CSV here instead of stdout")
    p.add_argument("--svg", help="also write a scatter plot")
    p.set_defaults(func=cmd_pareto)

    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if not e.code else 1
    try:
        return args.func(args)
    except ConfigError as e:  # ShapeError included
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
