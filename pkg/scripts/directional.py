"""Mode-seeking vs sampling on a trigram reference LM.

    python3 scripts/directional.py --workdir runs/directional
"""

import argparse
import tempfile

from decodekit.experiments import directional_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", default=None, help="keep artifacts here (default: temporary folder)")
    ap.add_argument("--inputs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        res = directional_experiment(args.workdir or tmp, n_inputs=args.inputs, seed=args.seed, workers=args.workers)
    print(f"corpus {res.corpus_bytes} bytes, {res.n_inputs} inputs, {res.n_records} generations, {res.seconds:.1f}s")
    for e in res.effects:
        print(("holds  " if e.holds else "FAILS  ") + e.line())


if __name__ == "__main__":
    main()
