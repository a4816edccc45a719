"""Matplotlib renderings of the standard report artifacts.

Every CLI subcommand that emits delimited output can also render its figure
next to it: policy heatmaps, score box plots, sensitivity curves, fit traces,
and model-selection bars. All renderers write PNG files and never open a
display (Agg backend).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

from .policy import PolicyTable  # noqa: E402
from .simulate import SensitivityRow  # noqa: E402

ACTION_COLORS = {"N": "#4878cf", "H": "#e1812c", "D": "#6acc65", "wait": "#d0d0d0"}


def save_policy_heatmap(policy: PolicyTable, path: str | Path, title: str = "") -> Path:
    """Action regions over (b_H, q), one colored cell per state."""
    grid = policy.grid
    order = ["N", "H", "D", "wait"]
    codes = np.zeros((policy.max_length + 1, grid.num_points), dtype=int)
    for q in range(policy.max_length + 1):
        for i, b in enumerate(grid.points):
            codes[q, i] = order.index(policy.lookup(q, float(b)))
    present = sorted(set(codes.ravel()))
    remap = {c: i for i, c in enumerate(present)}
    img = np.vectorize(remap.get)(codes)
    cmap = ListedColormap([ACTION_COLORS[order[c]] for c in present])

    fig, ax = plt.subplots(figsize=(5.2, 5.8))
    ax.imshow(
        img, origin="lower", aspect="auto", cmap=cmap, interpolation="nearest",
        extent=(-grid.step / 2, 1 + grid.step / 2, -0.5, policy.max_length + 0.5),
    )
    ax.set_xlabel("high-workload belief $b_H$")
    ax.set_ylabel("queue length $q$")
    ax.set_title(title or f"{len(policy.action_set)}-action policy "
                          f"($\\gamma$={policy.gamma:g}, step={policy.grid_step:g})")
    handles = [Patch(color=ACTION_COLORS[order[c]], label=order[c]) for c in present]
    ax.legend(handles=handles, loc="upper left", fontsize=8, framealpha=0.9)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_score_boxplot(scores_by_policy: dict[str, np.ndarray], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(scores_by_policy), 4.2))
    names = list(scores_by_policy)
    ax.boxplot([scores_by_policy[n] for n in names], tick_labels=names, medianprops={"color": "red"})
    ax.set_ylabel("episode score")
    ax.set_title("episode score by policy")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_sensitivity_chart(rows: list[SensitivityRow], path: str | Path) -> Path:
    kinds = sorted({r.kind for r in rows})
    fig, axes = plt.subplots(1, len(kinds), figsize=(4.4 * len(kinds), 3.6), squeeze=False)
    labels = {"transition_pct": "transition perturbation (%)",
              "reaction_sigma": "reaction noise sigma (ms)"}
    for ax, kind in zip(axes[0], kinds):
        pts = sorted((r.value, r.abs_pct_reward_change) for r in rows if r.kind == kind)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-")
        ax.set_xlabel(labels.get(kind, kind))
        ax.set_ylabel("abs. % change in mean score")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_loglik_trace(traces: list[list[float]], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for i, tr in enumerate(traces):
        ax.plot(tr, alpha=0.8, label=f"restart {i}" if len(traces) <= 6 else None)
    ax.set_xlabel("EM iteration")
    ax.set_ylabel("log-likelihood")
    if len(traces) <= 6:
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_criteria_bars(table: list[dict], path: str | Path) -> Path:
    ks = [row["k"] for row in table]
    x = np.arange(len(ks))
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    width = 0.38
    ax.bar(x - width / 2, [row["aic"] for row in table], width, label="AIC")
    ax.bar(x + width / 2, [row["bic"] for row in table], width, label="BIC")
    ax.set_xticks(x, [str(k) for k in ks])
    ax.set_xlabel("hidden states")
    ax.set_ylabel("criterion")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
