"""Figure rendering for the train/eval/bench report paths.

Figures are written next to the delimited outputs (PNG via the Agg backend);
they are plain result displays, never an interactive surface.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loss_curve(history: list[tuple], path: str) -> None:
    """history rows: (epoch, step, loss, lr, wall_ms)."""
    steps = [row[1] for row in history]
    losses = [row[2] for row in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    _save(fig, path)


def per_joint_bar(per_joint_mm, joint_names, path: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(range(len(per_joint_mm)), per_joint_mm, color="#4878a8")
    ax.set_xticks(range(len(per_joint_mm)))
    ax.set_xticklabels(joint_names, rotation=90, fontsize=6)
    ax.set_ylabel("mean error (mm)")
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)


def error_histogram(errors_mm, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(errors_mm, bins=40, color="#4878a8")
    ax.set_xlabel("per-joint error (mm)")
    ax.set_ylabel("count")
    ax.grid(alpha=0.3)
    _save(fig, path)


def bench_chart(rows: list[tuple[str, float, float]], path: str) -> None:
    """rows: (stage, median_ms, p95_ms)."""
    names = [r[0] for r in rows]
    med = [r[1] for r in rows]
    p95 = [r[2] for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar([i - 0.2 for i in x], med, width=0.4, label="median")
    ax.bar([i + 0.2 for i in x], p95, width=0.4, label="p95")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("wall time (ms)")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)
