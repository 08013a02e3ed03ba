#!/usr/bin/env python3
"""Regenerate the bundled merge table from the bundled corpus."""

import argparse
from pathlib import Path

import sys

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from vltextdet.tokenizer import learn_merges, write_merge_file  # noqa: E402

RESOURCES = Path(__file__).resolve().parents[1] / "src" / "vltextdet" / "resources"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus", default=RESOURCES / "corpus.txt", type=Path)
    ap.add_argument("--out", default=RESOURCES / "merges.txt", type=Path)
    ap.add_argument("--num-merges", default=1024, type=int)
    args = ap.parse_args()

    merges = learn_merges(args.corpus.read_text(encoding="utf-8"), args.num_merges)
    write_merge_file(merges, args.out)
    print(f"wrote {len(merges)} merges to {args.out}")


if __name__ == "__main__":
    main()
