"""Detection metrics and the CSV sinks shared by federation and harness.

P_d is the probability of detecting an occupied RB, P_fa the probability
of declaring a free RB occupied. Either is undefined (None) when its
denominator is zero; the CSV renders undefined values as empty fields
rather than zeros so averaged curves are never corrupted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class Metrics:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def p_d(self) -> Optional[float]:
        pos = self.tp + self.fn
        return self.tp / pos if pos > 0 else None

    @property
    def p_fa(self) -> Optional[float]:
        neg = self.fp + self.tn
        return self.fp / neg if neg > 0 else None

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics(self.tp + other.tp, self.fn + other.fn,
                       self.fp + other.fp, self.tn + other.tn)


def compute_pd_pfa(decisions: np.ndarray, truth) -> Metrics:
    """Confusion counts of a decision grid against the ground truth."""
    d = np.asarray(decisions).astype(bool)
    y = np.asarray(getattr(truth, "mask", truth)).astype(bool)
    if d.shape != y.shape:
        raise ShapeError(f"decision shape {d.shape} != truth shape {y.shape}")
    tp = int(np.count_nonzero(d & y))
    fn = int(np.count_nonzero(~d & y))
    fp = int(np.count_nonzero(d & ~y))
    tn = int(np.count_nonzero(~d & ~y))
    return Metrics(tp, fn, fp, tn)


def pooled_pd_pfa(pairs: Iterable[tuple[np.ndarray, object]]) -> Metrics:
    """Counts summed over (decisions, truth) pairs before dividing."""
    total = Metrics(0, 0, 0, 0)
    for decisions, truth in pairs:
        total = total + compute_pd_pfa(decisions, truth)
    return total


def averaged_pd_pfa(pairs: Iterable[tuple[np.ndarray, object]]) -> tuple[Optional[float], Optional[float]]:
    """Per-pattern ratios averaged over patterns (the non-pooled variant)."""
    pds, pfas = [], []
    for decisions, truth in pairs:
        m = compute_pd_pfa(decisions, truth)
        if m.p_d is not None:
            pds.append(m.p_d)
        if m.p_fa is not None:
            pfas.append(m.p_fa)
    return (
        float(np.mean(pds)) if pds else None,
        float(np.mean(pfas)) if pfas else None,
    )


@dataclass(frozen=True)
class MetricsRow:
    round_index: int
    node: str
    p_d: Optional[float]
    p_fa: Optional[float]
    accepted_count: int


@dataclass
class MetricsSeries:
    rows: list[MetricsRow]

    def __len__(self) -> int:
        return len(self.rows)

    def extend(self, rows: Sequence[MetricsRow]) -> None:
        self.rows.extend(rows)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def render_csv(series: MetricsSeries) -> str:
    """Deterministic CSV text: header, then rows sorted by (round, node)."""
    lines = ["round,node,p_d,p_fa,accepted_count"]
    for row in sorted(series.rows, key=lambda r: (r.round_index, r.node)):
        lines.append(
            f"{row.round_index},{row.node},{_fmt(row.p_d)},{_fmt(row.p_fa)},{row.accepted_count}"
        )
    return "\n".join(lines) + "\n"


def emit_csv(series: MetricsSeries, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(render_csv(series))
    except OSError as exc:
        raise OSError(f"cannot write metrics CSV to {path}: {exc}") from exc


def render_filter_csv(reports) -> str:
    """Per-round filter outcomes: round,node_id,mean_accordance,accepted_flag."""
    lines = ["round,node_id,mean_accordance,accepted_flag"]
    for report in reports:
        if report.filter_report is None:
            continue
        fr = report.filter_report
        for node_id in fr.node_ids:
            lines.append(
                f"{report.round_index},{node_id},"
                f"{fr.mean_accordance[node_id]:.6f},"
                f"{int(node_id in fr.accepted)}"
            )
    return "\n".join(lines) + "\n"


def emit_filter_csv(reports, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(render_filter_csv(reports))
    except OSError as exc:
        raise OSError(f"cannot write filter CSV to {path}: {exc}") from exc
