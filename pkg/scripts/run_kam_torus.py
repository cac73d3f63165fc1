#!/usr/bin/env python3
"""The headline invariant-torus experiment: golden frequency, Gevrey-2
weights, mechanical Hamiltonian |I|^2/2 + eps f(theta); runs the dyadic
arithmetic test, the geometric-schedule iteration, and writes the
embedding plus per-iteration defects."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from udham import cli  # noqa: E402


def main():
    out = Path("runs/kam_golden")
    code = cli.main(["kam", "--family", "gevrey", "--alpha", "2",
                     "--omega", "golden", "--k-max", "32", "--eps", "1e-4",
                     "--s", "0.5", "--n-iter", "6", "--tol", "1e-9",
                     "--outdir", str(out)])
    print(f"kam: exit {code}")
    print((out / "manifest.txt").read_text())


if __name__ == "__main__":
    main()
