"""Beam patterns of the RIS and MS codebooks, level by level.

    python scripts/beam_patterns.py --level 2 --out results/patterns_l2.csv [--plot results/patterns_l2.png]

Patterns are |a(u)^H c| over the sine grid u in (-1, 1).  The CSV has one column per codeword.
"""
import argparse
from pathlib import Path

import numpy as np

from risloc.codebook import build_ms_codebook, build_ris_codebook
from risloc.geometry import ScenarioGeometry


def patterns(codewords: np.ndarray, u: np.ndarray) -> np.ndarray:
    n = np.arange(codewords.shape[0])
    return np.abs(np.exp(1j * np.pi * np.outer(u, n)).conj() @ codewords)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--level", type=int, default=1)
    ap.add_argument("--points", type=int, default=1024)
    ap.add_argument("--out", default="results/patterns.csv")
    ap.add_argument("--plot")
    args = ap.parse_args()

    geom = ScenarioGeometry()
    ris, ms = build_ris_codebook(geom), build_ms_codebook(geom)
    u = -1 + (np.arange(args.points) + 0.5) * 2 / args.points
    books = {"ris": patterns(ris.level(args.level), u), "ms": patterns(ms.level(args.level), u)}

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    k = books["ris"].shape[1]
    header = ["u"] + [f"ris_{i + 1}" for i in range(k)] + [f"ms_{i + 1}" for i in range(k)]
    table = np.column_stack([u, books["ris"], books["ms"]])
    np.savetxt(args.out, table, delimiter=",", header=",".join(header), comments="", fmt="%.8g")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 2, figsize=(11, 4), sharey=True)
        for ax, (name, pat) in zip(axes, books.items()):
            ax.plot(u, pat)
            ax.set_title(f"{name.upper()} level {args.level}")
            ax.set_xlabel("sin(angle)")
        axes[0].set_ylabel("|a(u)^H c|")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()
