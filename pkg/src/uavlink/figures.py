"""Matplotlib rendering for the report path: per-slot power, rate, utility,
and estimation-error trends next to the delimited output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import SlotRecord


def render_figures(records: list[SlotRecord], out_dir) -> list[str]:
    """Write the trend figures for a finished run; returns the file paths."""
    t = [r.t for r in records]
    paths = []

    fig, ax1 = plt.subplots(figsize=(7, 3.2))
    ax1.plot(t, [r.tr_v_w for r in records], color="tab:blue", lw=1.2,
             label="tr(V) [W]")
    ax1.set_xlabel("time slot t")
    ax1.set_ylabel("tr(V) [W]", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(t, [r.p_w for r in records], color="tab:red", lw=1.2,
             label="p [W]")
    ax2.set_ylabel("UAV power p [W]", color="tab:red")
    ax1.set_title("Transmit power vs time slot")
    fig.tight_layout()
    path = str(out_dir / "power_vs_slot.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    paths.append(path)

    fig, ax1 = plt.subplots(figsize=(7, 3.2))
    ax1.plot(t, [r.r_dl_bps / 1e6 for r in records], color="tab:green",
             lw=1.2)
    ax1.set_xlabel("time slot t")
    ax1.set_ylabel("downlink rate [Mbit/s]", color="tab:green")
    ax2 = ax1.twinx()
    ax2.plot(t, [r.e_eu for r in records], color="tab:purple", lw=1.2)
    ax2.set_ylabel("energy utility", color="tab:purple")
    ax1.set_title("Rate and energy utility vs time slot")
    fig.tight_layout()
    path = str(out_dir / "rate_utility_vs_slot.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(t, [r.mape_ul for r in records], lw=1.2, label="uplink nets")
    ax.plot(t, [r.mape_dl for r in records], lw=1.2, label="downlink nets")
    ax.set_xlabel("time slot t")
    ax.set_ylabel("windowed MAPE")
    ax.set_title("Estimation error vs time slot")
    ax.legend()
    fig.tight_layout()
    path = str(out_dir / "mape_vs_slot.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    paths.append(path)

    return paths
