#!/usr/bin/env python3
"""Coupled-map drift: exact-mode I_1 drift 0 -> 1 in q^2 steps, plus the
full synchronized construction report (certificates, prime schedule)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from udham import cli  # noqa: E402


def main():
    out = Path("runs/ms_exact")
    code = cli.main(["ms", "--mode", "exact", "--q", "100",
                     "--outdir", str(out)])
    print(f"ms exact: exit {code}")
    print((out / "manifest.txt").read_text())
    out2 = Path("runs/ms_construction")
    code = cli.main(["ms", "--mode", "pendulum", "--n", "3", "--j", "2",
                     "--s", "0.05", "--outdir", str(out2)])
    print(f"ms construction: exit {code}")
    print((out2 / "manifest.txt").read_text())


if __name__ == "__main__":
    main()
