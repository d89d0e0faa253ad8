"""Write a synthetic PGM/PPM dataset with train/ and test/ splits.

    python3 scripts/make_synthetic_data.py data/desk --train 20 --test 10 --size 64
"""

import argparse

from drdn.data import write_synthetic_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("root")
    p.add_argument("--train", type=int, default=20)
    p.add_argument("--test", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--channels", type=int, choices=[1, 3], default=1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    root = write_synthetic_dataset(args.root, args.train, args.test, args.size, args.channels, args.seed)
    print(root)


if __name__ == "__main__":
    main()
