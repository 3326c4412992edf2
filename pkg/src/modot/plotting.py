"""Report rendering: delimited metric tables plus matplotlib figures written to files."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402
from .metrics import DEPTH_KEYS, OB_KEYS  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def colorize_depth(depth: np.ndarray, vmin: float, vmax: float, cmap: str = "magma_r") -> np.ndarray:
    norm = np.clip((np.asarray(depth, float) - vmin) / max(vmax - vmin, 1e-12), 0, 1)
    return (matplotlib.colormaps[cmap](norm)[..., :3] * 255).astype(np.uint8)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return "" if v is None else str(v)


def write_tables(report: dict, out: Path) -> dict[str, Path]:
    files = {}
    summary = [("depth", k, report["depth"][k]) for k in DEPTH_KEYS]
    if "ob" in report:
        summary += [("ob", k, report["ob"][k]) for k in (*OB_KEYS, "threshold", "tp", "fp", "fn")]
    if report.get("boundary_contrast") is not None:
        summary.append(("depth", "boundary_contrast", report["boundary_contrast"]))
    files["summary_csv"] = out / "summary.csv"
    with files["summary_csv"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "metric", "value"])
        w.writerows((g, k, _fmt(v)) for g, k, v in summary)

    cols = ["sample_id", *DEPTH_KEYS, "boundary_contrast"] + (
        [*OB_KEYS, "tp", "fp", "fn"] if "ob" in report else [])
    files["per_image_csv"] = out / "per_image.csv"
    with files["per_image_csv"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in report["per_image"]:
            w.writerow([_fmt(row.get(c)) for c in cols])

    if "ob_pr_curve" in report:
        files["pr_csv"] = out / "ob_pr_curve.csv"
        with files["pr_csv"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "recall", "precision", "fscore"])
            for p in report["ob_pr_curve"]:
                w.writerow([_fmt(float(p[k])) for k in ("threshold", "recall", "precision", "fscore")])

    lines = ["| metric | value |", "|---|---|"] + [f"| {k} | {_fmt(v)} |" for _, k, v in summary]
    files["summary_md"] = out / "summary.md"
    files["summary_md"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return files


def plot_pr_curve(curve: list[dict], threshold: float, path: Path) -> Path:
    r = np.array([p["recall"] for p in curve])
    pr = np.array([p["precision"] for p in curve])
    t = np.array([p["threshold"] for p in curve])
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7.0, 3.0))
        ax0.plot(r, pr, "o-", ms=3)
        k = int(np.argmin(np.abs(t - threshold)))
        ax0.plot(r[k], pr[k], "s", color="C3", label=f"t = {t[k]:.2f}")
        ax0.set(xlabel="OB recall", ylabel="OB precision", xlim=(0, 1.02), ylim=(0, 1.02), title="Precision / recall")
        ax0.legend(frameon=False)
        for key, style in (("recall", "-"), ("precision", "--"), ("fscore", ":")):
            ax1.plot(t, [p[key] for p in curve], style, label=key)
        ax1.axvline(threshold, color="0.6", lw=0.8)
        ax1.set(xlabel="probability threshold", ylim=(0, 1.02), title="Scores vs threshold")
        ax1.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_depth_metrics(report: dict, path: Path) -> Path:
    rows = report["per_image"]
    errs = ("rmse", "abs_rel", "sq_rel", "log10", "rmse_log")
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7.0, 3.0))
        data = [[row[k] for row in rows] for k in errs]
        ax0.boxplot(data)
        ax0.set_xticks(range(1, len(errs) + 1), errs, rotation=30)
        ax0.set_title("Per-image depth errors")
        deltas = [report["depth"][k] for k in ("delta1", "delta2", "delta3")]
        ax1.bar(["δ1", "δ2", "δ3"], deltas, color=["C0", "C1", "C2"])
        ax1.set(ylim=(0, 1.05), title="Threshold accuracy")
        for i, v in enumerate(deltas):
            ax1.text(i, v + 0.01, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
        fig.savefig(path)
        plt.close(fig)
    return path


def render_report(report_path: str | Path, out_dir: str | Path) -> dict[str, str]:
    try:
        report = json.loads(Path(report_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {report_path}: {exc}") from exc
    for key in ("depth", "per_image"):
        if key not in report:
            raise DataError(f"{report_path}: report lacks {key!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = write_tables(report, out)
    files["depth_png"] = plot_depth_metrics(report, out / "depth_metrics.png")
    if "ob_pr_curve" in report:
        files["pr_png"] = plot_pr_curve(report["ob_pr_curve"], report["ob"]["threshold"], out / "ob_pr_curve.png")
    return {k: str(v) for k, v in files.items()}
