#!/usr/bin/env python3
"""Write the synthetic toy dataset (disjoint bright shapes per modality)."""

import argparse

from dualfuse.toydata import write_toy_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/toy", help="output directory")
    parser.add_argument("--pairs", type=int, default=8)
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    files = write_toy_dataset(args.out, args.pairs, args.size, args.seed)
    print("wrote %d files to %s" % (len(files), args.out))


if __name__ == "__main__":
    main()
