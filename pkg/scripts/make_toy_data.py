"""Regenerate the in-repo toy image sets under data/.

Usage: python scripts/make_toy_data.py [out_dir]

Both sets are 8x8 single-channel images drawn from fixed seeds, so the
files are identical on every run:

* bars   - 2 classes (horizontal vs vertical bar), 2000 train / 500 test
* digits - 10 classes (3x5 digit glyphs), 1500 train / 500 test
"""

import sys
from pathlib import Path

from latent.datasets import write_toy_datasets


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data"
    for path in write_toy_datasets(out):
        print(path)


if __name__ == "__main__":
    main()
