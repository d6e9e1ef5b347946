"""Report tables (CSV, authoritative) and matching PNG figures."""

from __future__ import annotations

import csv
import json
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PNG_META = {"Software": None}


def write_table(path, header: Sequence[str], rows: Iterable[Sequence], comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in r])


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def read_trials(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(l) for l in fh if l.strip()]


def hm_vs_tau_rows(trials_by_kind: dict[str, list[dict]]) -> list[tuple]:
    """(model, trial, status, tau_e, hm) for every trial that produced a score."""
    rows = []
    for kind in sorted(trials_by_kind):
        for t in trials_by_kind[kind]:
            if t["hm"] is not None:
                rows.append((kind, t["trial_id"], t["status"], float(t["tau_e"]), float(t["hm"])))
    return rows


def regret_rows(trials_by_kind: dict[str, list[dict]]) -> list[tuple]:
    rows = []
    for kind in sorted(trials_by_kind):
        for t in trials_by_kind[kind]:
            for s in t["trace"]:
                rows.append(
                    (kind, t["trial_id"], s["step"], float(s["tau_e"]), float(s["hm"]), float(s["r_t"]),
                     float(s["r_pt"]), float(s["ror"]), float(s["rv"]))
                )
    return rows


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=90, metadata=PNG_META)
    plt.close(fig)


def plot_hm_vs_tau(rows: list[tuple], grid: list[tuple[float, float]] | None, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for kind in sorted({r[0] for r in rows}):
        pts = [(r[3], r[4]) for r in rows if r[0] == kind]
        ax.scatter([p[0] for p in pts], [p[1] for p in pts], label=kind, s=18)
    if grid:
        ax.plot([g[0] for g in grid], [g[1] for g in grid], color="k", lw=1, label="ensemble")
    ax.set_xlabel("tau_e")
    ax.set_ylabel("HM")
    ax.legend()
    _save(fig, path)


def plot_regret(rows: list[tuple], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for kind in sorted({r[0] for r in rows}):
        per_trial: dict[int, float] = {}
        for r in rows:
            if r[0] == kind:
                per_trial[r[1]] = r[5] + r[6]  # last step's summed regret
        xs = sorted(per_trial)
        ax.plot(xs, [per_trial[x] for x in xs], marker="o", ms=3, label=kind)
    ax.set_xlabel("trial")
    ax.set_ylabel("R_t + R_Pt (last inner step)")
    ax.legend()
    _save(fig, path)


def plot_importance(rows: list[tuple], path, top: int = 15) -> None:
    by_model: dict[str, list[tuple[str, float]]] = {}
    for model, feat, score in rows:
        by_model.setdefault(model, []).append((feat, score))
    n = max(1, len(by_model))
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 4), squeeze=False)
    for ax, model in zip(axes[0], sorted(by_model)):
        items = sorted(by_model[model], key=lambda x: -x[1])[:top][::-1]
        ax.barh([i[0] for i in items], [i[1] for i in items])
        ax.set_title(model)
    _save(fig, path)


def plot_trajectory(rows: list[tuple], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for who in sorted({r[0] for r in rows}):
        pts = [(r[1], r[2]) for r in rows if r[0] == who]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker=".", label=who)
    ax.set_xlabel("inner step")
    ax.set_ylabel("tau_e")
    ax.legend(fontsize=7)
    _save(fig, path)


def is_unimodal(values: Sequence[float], tol: float = 0.01) -> bool:
    """Rises to the peak and falls after it, allowing dips/bumps up to ``tol``."""
    if not values:
        return False
    k = max(range(len(values)), key=lambda i: values[i])
    rising = all(values[i] <= values[j] + tol for i in range(k + 1) for j in range(i, k + 1))
    falling = all(values[j] <= values[i] + tol for i in range(k, len(values)) for j in range(i, len(values)))
    return rising and falling
