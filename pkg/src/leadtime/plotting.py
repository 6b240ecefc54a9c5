"""Reliability diagrams rendered to SVG with matplotlib."""

from __future__ import annotations

from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .calibration import CalibrationCurve  # noqa: E402

RC = {
    "svg.hashsalt": "leadtime",
    "svg.fonttype": "none",
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def reliability_diagram(curves: Mapping[str, CalibrationCurve], path, title: str = "Calibration") -> None:
    """Write one curve per model plus the dashed identity line to ``path``."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot([0, 1], [0, 1], linestyle="--", color="0.6", label="perfect calibration")
        for name, curve in curves.items():
            ax.plot(curve.levels, curve.empirical, marker="o", markersize=3, label=name)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("predicted level")
        ax.set_ylabel("observed frequency")
        ax.set_title(title)
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
        # no timestamp so repeated runs give identical bytes
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
