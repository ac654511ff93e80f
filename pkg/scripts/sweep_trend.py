"""SNR sweep for every scheme, then per-point medians and means.

    python scripts/sweep_trend.py --trials 100 --out results/sweep.csv [--plot results/sweep.png]

The raw CSV keeps one row per trial; the aggregate table is printed to stdout.  ``--plot``
needs matplotlib.
"""
import argparse
from pathlib import Path

from risloc.harness import SimulationConfig, aggregate, emit_csv, format_aggregate, load_config, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="key = value config; defaults to the reference scene")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--snr-db", default="-20,-15,-10,-5,0,5,10,15,20")
    ap.add_argument("--out", default="results/sweep.csv")
    ap.add_argument("--plot")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else SimulationConfig()
    cfg.trials_per_point = args.trials
    cfg.snr_list_db = [float(v) for v in args.snr_db.split(",")]
    cfg.validate()

    records = run_sweep(cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    emit_csv(records, args.out)
    rows = aggregate(records)
    print(format_aggregate(rows), end="")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 3, figsize=(13, 4))
        for scheme in cfg.schemes:
            sub = [r for r in rows if r["scheme"] == scheme]
            snr = [r["snr_db"] for r in sub]
            axes[0].semilogy(snr, [r["mean_pe_m2"] for r in sub], marker="o", label=scheme)
            axes[1].semilogy(snr, [r["mean_oe_rad2"] for r in sub], marker="o", label=scheme)
            axes[2].plot(snr, [r["mean_rate_bits"] for r in sub], marker="o", label=scheme)
        for ax, name in zip(axes, ["position MSE (m^2)", "orientation MSE (rad^2)", "rate (bits/symbol)"]):
            ax.set_xlabel("SNR (dB)")
            ax.set_ylabel(name)
            ax.grid(True, which="both", alpha=0.3)
        axes[0].legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()
