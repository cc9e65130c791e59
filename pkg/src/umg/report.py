"""Report files: per-image score CSVs, a JSON summary, score histograms and
a 2-D PCA scatter of deepest-tap encoder features (all deterministic)."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .detection import ScoreRecord
from .protocols import EvalReport

SCORE_HEADER = ("protocol", "arm", "seed", "held_out", "train_sensor", "test_sensor", "image_id", "truth",
                "material", "sensor", "score", "patch_count")


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "umg"  # stable element ids
    return plt


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def _fmt(v) -> str:
    return "" if v is None else str(v)


def write_scores_csv(reports: list[EvalReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for r in reports:
            for s in r.scores:
                w.writerow([r.protocol, r.arm, r.seed, _fmt(r.held_out), _fmt(r.train_sensor), _fmt(r.test_sensor),
                            s.image_id, s.truth, _fmt(s.material), _fmt(s.sensor), repr(s.score), s.patch_count])


def read_scores_csv(path: str | Path) -> list[EvalReport]:
    """Rebuild report shells (scores only) from a score CSV, grouped by run."""
    from .protocols import evaluate

    groups: dict[tuple, list[ScoreRecord]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCORE_HEADER:
            raise ValueError(f"{path}: not a score file")
        for row in reader:
            key = (row["protocol"], row["arm"], int(row["seed"]), row["held_out"] or None,
                   row["train_sensor"] or None, row["test_sensor"] or None)
            groups.setdefault(key, []).append(ScoreRecord(row["image_id"], row["truth"], row["material"] or None,
                                                          row["sensor"] or None, float(row["score"]),
                                                          int(row["patch_count"])))
    return [evaluate(recs, *key) for key, recs in groups.items()]


def write_summary(reports: list[EvalReport], path: str | Path, extra: dict | None = None) -> None:
    body = {"reports": [r.summary() for r in reports]}
    for r in body["reports"]:
        r.pop("seconds", None)  # wall-clock time would break byte-identical reruns
    if extra:
        body.update(extra)
    Path(path).write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")


def score_histogram(report: EvalReport, path: str | Path, bins: int = 20) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    edges = np.linspace(0, 1, bins + 1)
    live = [s.score for s in report.scores if s.truth == "live"]
    spoof = [s.score for s in report.scores if s.truth == "spoof"]
    ax.hist(live, bins=edges, alpha=0.6, label=f"live (n={len(live)})", color="tab:blue")
    ax.hist(spoof, bins=edges, alpha=0.6, label=f"spoof (n={len(spoof)})", color="tab:red")
    title = f"{report.protocol} / {report.arm}"
    if report.held_out:
        title += f" / held out {report.held_out}"
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("spoofness")
    ax.set_ylabel("images")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save_svg(fig, Path(path))
    plt.close(fig)


def pca_2d(features: np.ndarray) -> np.ndarray:
    """Project rows onto the top two principal axes (sign fixed so the
    largest-magnitude loading of each axis is positive)."""
    x = np.asarray(features, dtype=np.float64)
    x = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    axes = vt[:2]
    signs = np.sign(axes[np.arange(len(axes)), np.argmax(np.abs(axes), axis=1)])
    return x @ (axes * signs[:, None]).T


def feature_scatter(features: np.ndarray, labels: list[str], path: str | Path, title: str = "") -> np.ndarray:
    """PCA scatter of per-patch feature vectors coloured by class label."""
    plt = _plt()
    xy = pca_2d(features)
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, name in enumerate(sorted(set(labels))):
        idx = [k for k, lab in enumerate(labels) if lab == name]
        ax.scatter(xy[idx, 0], xy[idx, 1], s=6, alpha=0.7, label=name, color=plt.cm.tab10(i % 10))
    ax.set_title(title or "deepest-tap features (PCA)", fontsize=9)
    ax.legend(fontsize=7, markerscale=2)
    fig.tight_layout()
    _save_svg(fig, Path(path))
    plt.close(fig)
    return xy


def pooled_features(encoder, pixels: np.ndarray, chunk: int = 32) -> np.ndarray:
    """Channel means and stds of the deepest tap, one row per patch."""
    from .autodiff import no_grad
    from .style import channel_stat_vector

    out = []
    with no_grad():
        for i in range(0, len(pixels), chunk):
            out.append(channel_stat_vector(encoder.taps(pixels[i:i + chunk])[-1]))
    return np.concatenate(out) if out else np.zeros((0, 0))
