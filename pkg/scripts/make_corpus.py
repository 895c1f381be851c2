"""Generate a synthetic JSONL corpus for benchmarking.

The corpus is produced by the bigram chain in bytelm.textgen, so runs are
reproducible from the seed alone and nothing external is downloaded.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from bytelm.segment import patch_stats
from bytelm.textgen import synth_corpus


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bytes", type=int, default=10_000_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="data/corpus.jsonl")
    args = ap.parse_args()

    docs = synth_corpus(args.bytes, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        for d in docs:
            f.write(json.dumps({"text": d.decode("utf-8")}) + "\n")

    sample = b" ".join(docs[:50])
    stats = patch_stats(sample)
    total = sum(len(d) for d in docs)
    print(f"wrote {out}: {len(docs)} documents, {total} bytes")
    print(f"word-aligned patches: mean length {stats.mean_len:.2f} over {stats.count} samples")
    return 0


if __name__ == "__main__":
    sys.exit(main())
