"""Metrics and report emission: AUC, accuracy, generalization and transfer matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


REPORT_SCHEMA_VERSION = 1


def _tied_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; ties contribute one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be 1-d and equally long")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs at least one positive and one negative label")
    ranks = _tied_ranks(s)
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of thresholded predictions (score > threshold => fake) that match."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1 or len(s) == 0:
        raise MetricError("scores and labels must be 1-d, equally long, non-empty")
    pred = (s > threshold).astype(y.dtype)
    return float((pred == y).mean())


@dataclass
class EvalReport:
    """Per-cell metrics plus metadata, serialized as deterministic JSON."""

    cells: dict = field(default_factory=dict)  # key -> {"auc": .., "acc": ..} or {"skipped": reason}
    transfer: dict = field(default_factory=dict)  # key -> adversarial accuracy
    metadata: dict = field(default_factory=dict)

    @staticmethod
    def cell_key(train_condition: str, family: str, quality: str) -> str:
        return f"{train_condition}|{family}|{quality}"

    @staticmethod
    def transfer_key(source: str, target: str, attack: str) -> str:
        return f"{source}->{target}|{attack}"

    def add_cell(self, key: str, scores, labels) -> None:
        self.cells[key] = {"auc": auc(scores, labels), "acc": accuracy(scores, labels)}

    def mark_skipped(self, key: str, reason: str) -> None:
        self.cells[key] = {"skipped": reason}

    def to_json(self) -> str:
        doc = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "cells": self.cells,
            "transfer": self.transfer,
            "metadata": self.metadata,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema: {doc.get('schema_version')}")
        return cls(cells=doc["cells"], transfer=doc["transfer"], metadata=doc["metadata"])

    def flat_table(self) -> str:
        """Human-readable fixed-width table of the cell metrics."""
        lines = [f"{'cell':<40} {'auc':>8} {'acc':>8}"]
        for key in sorted(self.cells):
            cell = self.cells[key]
            if "skipped" in cell:
                lines.append(f"{key:<40} {'skip':>8} {cell['skipped']}")
            else:
                lines.append(f"{key:<40} {cell['auc']:>8.4f} {cell['acc']:>8.4f}")
        for key in sorted(self.transfer):
            lines.append(f"{key:<40} {self.transfer[key]:>8.4f}")
        return "\n".join(lines) + "\n"


def transfer_matrix(models: dict, craft_fn, score_fn, images, labels) -> dict:
    """Adversarial accuracy for every (source, target) model pair.

    ``craft_fn(model, images, labels)`` returns adversarial images crafted
    against ``model``; ``score_fn(model, images)`` returns fake-probability
    scores. Entry (source, target) is the target's accuracy on examples
    crafted against the source; the diagonal is white-box.
    """
    if len(models) < 2:
        raise MetricError("transfer matrix needs at least two models")
    out = {}
    crafted = {name: craft_fn(model, images, labels) for name, model in models.items()}
    for src, adv in crafted.items():
        for tgt, model in models.items():
            out[(src, tgt)] = accuracy(score_fn(model, adv), labels)
    return out


def plot_metric_bars(report: EvalReport, path) -> None:
    """Render cell AUCs as a bar chart into a vector-graphics file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    keys = [k for k in sorted(report.cells) if "auc" in report.cells[k]]
    vals = [report.cells[k]["auc"] for k in keys]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(keys)), 3.2))
    ax.bar(range(len(keys)), vals)
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=60, ha="right", fontsize=6)
    ax.set_ylabel("AUC")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
