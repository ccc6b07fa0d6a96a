"""Figure rendering for report data: every chart mirrors one table.

Figures are a convenience view over the delimited outputs; nothing is
computed here, and deleting the figures directory loses no information.
Uses the non-interactive backend so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

FIGURE_DPI = 120


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=FIGURE_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def confusion_heatmap(classification: dict, path: Path) -> Path:
    """Row-normalized confusion matrix with class ids on both axes."""
    classes = classification["confusion"]["classes"]
    grid = classification["confusion"]["normalized"]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(classes)),) * 2)
    image = ax.imshow(grid, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(classes)), classes, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(classes)), classes, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title("Normalized confusion")
    for i, row in enumerate(grid):
        for j, value in enumerate(row):
            if value > 0:
                ax.text(
                    j,
                    i,
                    f"{value:.2f}",
                    ha="center",
                    va="center",
                    fontsize=7,
                    color="white" if value > 0.5 else "black",
                )
    fig.colorbar(image, ax=ax, fraction=0.046)
    return _save(fig, path)


def f1_bars(classification: dict, path: Path) -> Path:
    """Per-class F1, sorted ascending so the weakest classes lead."""
    rows = sorted(classification["per_class"], key=lambda r: (r["f1"], r["class"]))
    names = [r["class"] for r in rows]
    values = [r["f1"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, max(2.5, 0.35 * len(names))))
    ax.barh(range(len(names)), values, color="#4878a8")
    ax.set_yticks(range(len(names)), names, fontsize=8)
    ax.set_xlim(0, 1)
    ax.set_xlabel("F1")
    ax.set_title("Per-class F1")
    return _save(fig, path)


def top_k_bars(classification: dict, path: Path) -> Path:
    items = list(classification["top_k_accuracy"].items())
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(
        range(len(items)),
        [v for _, v in items],
        tick_label=[f"Top-{k}" for k, _ in items],
        color="#4878a8",
    )
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.set_title("Top-k accuracy")
    for i, (_, v) in enumerate(items):
        ax.text(i, v, f"{v * 100:.1f}%", ha="center", va="bottom", fontsize=8)
    return _save(fig, path)


def sep_histogram(sep: dict, path: Path) -> Path:
    """Distance histogram with the case threshold marked."""
    histogram = sep["histogram"]
    width = histogram["bin_width"]
    lo = histogram["range"][0]
    counts = histogram["counts"]
    edges = [lo + i * width for i in range(len(counts))]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(edges, counts, width=width, align="edge", color="#4878a8", edgecolor="white")
    ax.axvline(sep["threshold"], color="#a84848", linestyle="--", label="case threshold")
    ax.set_xlabel("semantic distance")
    ax.set_ylabel("pairs")
    ax.set_title("Error-pair distance distribution")
    ax.legend(fontsize=8)
    return _save(fig, path)


def sep_case_means(sep: dict, path: Path) -> Path:
    cases = [c for c in ("mismatch", "similarity") if c in sep["mean_by_case"]]
    values = [sep["mean_by_case"][c] for c in cases]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(range(len(cases)), values, tick_label=cases, color=["#a84848", "#48a868"][: len(cases)])
    ax.set_ylabel("mean d_sem")
    ax.set_title("Mean distance by error case")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
    return _save(fig, path)


def render_figures(
    run_dir: str | Path, classification: dict | None, sep: dict | None
) -> list[Path]:
    """Render every figure whose table exists; returns the files written."""
    figures_dir = Path(run_dir) / "figures"
    written: list[Path] = []
    if classification is not None:
        written.append(confusion_heatmap(classification, figures_dir / "confusion.png"))
        written.append(f1_bars(classification, figures_dir / "per_class_f1.png"))
        written.append(top_k_bars(classification, figures_dir / "top_k.png"))
    if sep is not None and sep["pair_count"] > 0:
        written.append(sep_histogram(sep, figures_dir / "sep_histogram.png"))
        written.append(sep_case_means(sep, figures_dir / "sep_case_means.png"))
    return written
