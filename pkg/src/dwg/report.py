"""Convergence diagnostics: JSONL/CSV tables and a convergence figure."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "legend.frameon": False,
}

CSV_FIELDS = ("iteration", "iso_value", "metric", "faces", "unreached", "boundary_crossings",
              "field_s", "marching_cubes_s", "scatter_s", "refresh_s")


def _as_dict(rec) -> dict:
    if isinstance(rec, dict):
        return rec
    return json.loads(rec.to_json())


def read_diagnostics(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in map(_as_dict, records):
            sec = r.get("seconds", {})
            w.writerow([r["iteration"], repr(r["iso_value"]), repr(r["metric"]), r["faces"],
                        r["unreached"], r["boundary_crossings"],
                        *(f"{sec.get(k, float('nan')):.6f}"
                          for k in ("field", "marching_cubes", "scatter", "refresh"))])


def plot_convergence(records, path, epsilon_deg: float | None = None, title: str | None = None) -> Path:
    """Top-fraction normal change and iso value per iteration, written to ``path``."""
    import matplotlib

    recs = [_as_dict(r) for r in records]
    if not recs:
        raise ValueError("no iterations to plot")
    it = [r["iteration"] for r in recs]
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(6.4, 2.6), layout="constrained")
        ax1, ax2 = fig.subplots(1, 2)
        ax1.semilogy(it, [max(r["metric"], 1e-6) for r in recs], "o-", ms=2.5, lw=1.0, color="C0")
        if epsilon_deg is not None:
            ax1.axhline(epsilon_deg, ls="--", lw=0.8, color="0.4", label=f"threshold {epsilon_deg:g} deg")
            ax1.legend(loc="upper right")
        ax1.set_xlabel("iteration")
        ax1.set_ylabel("top-1% normal change (deg)")
        ax2.plot(it, [r["iso_value"] for r in recs], "o-", ms=2.5, lw=1.0, color="C1")
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("iso value")
        if title:
            fig.suptitle(title)
        path = Path(path)
        fig.savefig(path)
    return path


def write_report(records, stem, epsilon_deg: float | None = None) -> dict[str, Path]:
    """``stem.jsonl``, ``stem.csv`` and ``stem.png`` side by side."""
    stem = Path(stem)
    recs = [_as_dict(r) for r in records]
    out = {"jsonl": stem.with_suffix(".jsonl"), "csv": stem.with_suffix(".csv"),
           "png": stem.with_suffix(".png")}
    with open(out["jsonl"], "w") as fh:
        for r in recs:
            fh.write(json.dumps(r) + "\n")
    write_csv(recs, out["csv"])
    plot_convergence(recs, out["png"], epsilon_deg)
    return out
