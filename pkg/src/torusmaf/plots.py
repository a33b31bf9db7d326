"""Optional SVG figures (distance and energy against time).  Requires matplotlib."""
from __future__ import annotations

from pathlib import Path


def write_plots(out_dir, records, report=None) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed metadata keeps the SVG text stable between runs
    meta = {"Date": None, "Creator": None}
    d = Path(out_dir) / "plots"
    d.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r.t for r in records], [r.nu for r in records], label="nu")
    ax.plot([r.t for r in records], [r.dissipation for r in records], label="dissipation")
    ax.set_xlabel("t")
    ax.legend()
    fig.tight_layout()
    p = d / "energy.svg"
    fig.savefig(p, metadata=meta)
    plt.close(fig)
    written.append(p)

    if report is not None:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        t = [x.t for x in report.distances]
        ax.semilogy(t, [max(x.sup, 1e-16) for x in report.distances], "o-", label="sup")
        ax.semilogy(t, [max(x.masked_l2, 1e-16) for x in report.distances], "s-", label="masked L2")
        ax.set_xlabel("t")
        ax.set_ylabel("|u - psi|")
        ax.legend()
        fig.tight_layout()
        p = d / "distance.svg"
        fig.savefig(p, metadata=meta)
        plt.close(fig)
        written.append(p)
    return written
