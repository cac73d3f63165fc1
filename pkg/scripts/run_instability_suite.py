#!/usr/bin/env python3
"""Linear-diffusion drift sweep plus the single-resonance (Liouville)
certificates, then a consolidated report over the produced manifests."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from udham import cli  # noqa: E402


def main():
    manifests = []
    for j in range(3, 9):
        out = Path(f"runs/diffuse_j{j}")
        code = cli.main(["diffuse", "--omega", "golden", "--j", str(j),
                         "--outdir", str(out)])
        print(f"diffuse j={j}: exit {code}")
        manifests.append(str(out / "manifest.txt"))
    out = Path("runs/bessi")
    code = cli.main(["bessi", "--alpha", "4", "--outdir", str(out)])
    print(f"bessi: exit {code}")
    manifests.append(str(out / "manifest.txt"))
    rep = Path("runs/report")
    code = cli.main(["report"] + manifests + ["--outdir", str(rep)])
    print(f"report: exit {code}")
    print((rep / "report.csv").read_text())


if __name__ == "__main__":
    main()
