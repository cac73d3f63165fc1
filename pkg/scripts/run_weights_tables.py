#!/usr/bin/env python3
"""Emit the weight-sequence tables (M/mu/N/nu, Cauchy, growth) for every
built-in family, plus matching diagnostics."""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from udham import cli, weights  # noqa: E402

FAMILIES = [("analytic", []), ("gevrey", ["--alpha", "1.5"]),
            ("gevrey", ["--alpha", "2"]), ("gevrey-log", ["--alpha", "1", "--beta", "1"]),
            ("exp-log", []), ("exp-sqrt", [])]


def main():
    base = Path("runs/weights")
    for i, (fam, extra) in enumerate(FAMILIES):
        out = base / f"{fam}{i}"
        code = cli.main(["weights", "--family", fam, "--l-max", "4096",
                         "--outdir", str(out)] + extra)
        print(f"{fam} {extra}: exit {code} -> {out}")
    # matching ratios for a matching and a non-matching family
    for fam, L, grid in [(weights.gevrey(1.5), 700_000, np.logspace(4, 8, 9)),
                         (weights.exp_sqrt(), 1 << 16, np.logspace(3, 7, 9))]:
        sp = weights.ScaleProfile(weights.build_sequence(fam, L))
        rep = sp.matching_report(grid)
        print(f"{fam.tag}: matching ratio in [{rep['min']:.3f}, {rep['max']:.3f}]")


if __name__ == "__main__":
    main()
