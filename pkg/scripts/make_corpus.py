"""Write the synthetic training text used for reference n-gram models.

    python3 scripts/make_corpus.py data/train.txt --bytes 1200000
"""

import argparse

from decodekit.corpus import CorpusSpec, write_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("path")
    ap.add_argument("--bytes", type=int, default=1_200_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    path = write_corpus(args.path, args.bytes, CorpusSpec(seed=args.seed))
    print(f"wrote {path} ({path.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
