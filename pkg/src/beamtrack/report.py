"""Run reporting: the stats document and the rendered figures that land next
to the delimited outputs."""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_stats(stats: dict, out_dir: Path) -> Path:
    path = Path(out_dir) / "stats.json"
    path.write_text(json.dumps(stats, sort_keys=True, indent=1))
    return path


def render_figures(
    out_dir: Path,
    error_samples: list[tuple[float, float, float]],
    response_ms: list[float],
    track: list[tuple[float, float, float]],
) -> list[Path]:
    """Render the run figures: pointing error over time, response-time
    histogram, and the route map colored by received power (falls back to
    pointing error when no power samples exist).

    error_samples: (t_s, tx_error_deg, rx_error_deg)
    track: (lon_deg, lat_deg, color_value)
    """
    out_dir = Path(out_dir)
    produced: list[Path] = []

    if error_samples:
        t = [s[0] for s in error_samples]
        fig, ax = plt.subplots(figsize=(8, 3.2))
        ax.plot(t, [s[1] for s in error_samples], lw=0.8, label="TX")
        ax.plot(t, [s[2] for s in error_samples], lw=0.8, label="RX")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("pointing error [deg]")
        ax.legend(loc="upper right", fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / "pointing_error.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        produced.append(path)

    if response_ms:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.hist(response_ms, bins=40, color="#3b6ea5")
        ax.axvline(float(np.mean(response_ms)), color="k", ls="--", lw=1,
                   label=f"mean {np.mean(response_ms):.1f} ms")
        ax.set_xlabel("response time [ms]")
        ax.set_ylabel("interactions")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / "response_hist.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        produced.append(path)

    if track:
        lon = [p[0] for p in track]
        lat = [p[1] for p in track]
        val = [p[2] for p in track]
        finite = [v for v in val if math.isfinite(v)]
        fig, ax = plt.subplots(figsize=(6, 6))
        sc = ax.scatter(lon, lat, c=val, s=8, cmap="inferno")
        if finite:
            fig.colorbar(sc, ax=ax, shrink=0.8)
        ax.set_xlabel("longitude [deg]")
        ax.set_ylabel("latitude [deg]")
        ax.set_aspect("equal", adjustable="datalim")
        fig.tight_layout()
        path = out_dir / "route_map.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        produced.append(path)

    return produced
