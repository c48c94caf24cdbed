"""Ranking metrics, operating points, prevalence tables, and impact analysis.

All metrics are computed per trigger. The classification rule everywhere is
``score >= threshold`` counts as positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from typing import Iterable, Mapping, Sequence

import numpy as np

from .claims import ClaimTimeline, CodeSet, first_occurrence
from .errors import DataError
from .triggers import TASKS, Horizons, DEFAULT_HORIZONS


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    sensitivity: float
    specificity: float


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.ndim != 1 or s.shape != y.shape:
        raise DataError("scores and labels must be 1-d and the same length")
    if s.size == 0:
        raise DataError("empty scored set")
    return s, y


def roc_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties at 1/2.

    Computed from sorted tie groups in O(n log n); exact integer pair counts
    feed one final float division.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("undefined metric: roc_auc needs both classes present")
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    boundaries = np.flatnonzero(np.diff(s_sorted)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [s.size]])
    pos_cum = np.concatenate([[0], np.cumsum(y_sorted)])
    wins = 0
    ties = 0
    for a, b in zip(starts, ends):
        group_pos = int(pos_cum[b] - pos_cum[a])
        group_neg = int(b - a) - group_pos
        pos_below = int(pos_cum[a])
        pos_above = n_pos - pos_below - group_pos
        wins += group_neg * pos_above
        ties += group_neg * group_pos
    return float(2 * wins + ties) / float(2 * n_pos * n_neg)


def pr_auc(scores, labels) -> float:
    """Average precision: step-wise area, no interpolation, tie groups merged."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("undefined metric: pr_auc needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s_desc = s[order]
    y_desc = y[order]
    group_ends = np.concatenate([np.flatnonzero(np.diff(s_desc)) + 1, [s.size]])
    tp = np.cumsum(y_desc)[group_ends - 1]
    predicted = group_ends
    precision = tp / predicted
    recall_step = np.diff(np.concatenate([[0], tp])) / n_pos
    return float(np.sum(precision * recall_step))


def _confusion_curve(s: np.ndarray, y: np.ndarray):
    """Per distinct threshold (ascending): tp, fp counts under score >= t."""
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(s_sorted)) + 1])
    thresholds = s_sorted[starts]
    pos_cum = np.concatenate([[0], np.cumsum(y_sorted)])
    n_pos = int(pos_cum[-1])
    n = s.size
    tp = n_pos - pos_cum[starts]
    predicted_pos = n - starts
    fp = predicted_pos - tp
    return thresholds, tp.astype(np.int64), fp.astype(np.int64), n_pos, n - n_pos


def gmean_operating_point(scores, labels) -> OperatingPoint:
    """Threshold among the observed scores maximizing sqrt(sens * spec).

    Ties resolve to the lowest threshold.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("undefined operating point: both classes required")
    thresholds, tp, fp, n_pos, n_neg = _confusion_curve(s, y)
    best = None
    for i in range(thresholds.size):  # ascending => keeps lowest on ties
        sens = tp[i] / n_pos
        spec = (n_neg - fp[i]) / n_neg
        product = sens * spec
        if best is None or product > best[0]:
            best = (product, float(thresholds[i]), float(sens), float(spec))
    assert best is not None
    return OperatingPoint(best[1], best[2], best[3])


def threshold_at_sensitivity(scores, labels, target: float) -> OperatingPoint:
    """Highest observed threshold whose sensitivity reaches the target."""
    s, y = _as_arrays(scores, labels)
    if int(y.sum()) == 0:
        raise DataError("undefined operating point: no positives present")
    thresholds, tp, fp, n_pos, n_neg = _confusion_curve(s, y)
    for i in range(thresholds.size - 1, -1, -1):  # descending thresholds
        sens = tp[i] / n_pos
        if sens >= target:
            spec = (n_neg - fp[i]) / n_neg if n_neg else float("nan")
            return OperatingPoint(float(thresholds[i]), float(sens), float(spec))
    # unreachable: the minimum score classifies everything positive
    raise AssertionError("sensitivity target unreachable")


def prevalence_table(
    labels_by_task: Mapping[str, np.ndarray], horizons: Horizons = DEFAULT_HORIZONS
) -> dict[str, list[float]]:
    """Per task, the fraction of triggers positive at each overlapping horizon.

    Input labels are disjoint class indices; horizon i is positive when the
    class falls in windows 0..i.
    """
    out = {}
    n_windows = len(horizons.overlapping)
    for task, classes in labels_by_task.items():
        c = np.asarray(classes, dtype=np.int64)
        if c.size == 0:
            out[task] = [0.0] * n_windows
            continue
        out[task] = [float(np.mean(c <= i)) for i in range(n_windows)]
    return out


@dataclass(frozen=True)
class ImpactTrigger:
    """One scored test trigger for the dialysis task at the longest horizon."""

    beneficiary_id: str
    trigger_date: date
    score: float
    event_within_horizon: bool


@dataclass(frozen=True)
class ImpactResult:
    target_sensitivity: float
    operating_point: OperatingPoint
    n_identified: int
    pct_without_prior_access: float


def access_before_onset(
    timeline: ClaimTimeline, dialysis: CodeSet, access: CodeSet
) -> bool | None:
    """Whether an access-creation code precedes the first dialysis code.

    None when the timeline has no dialysis onset.
    """
    onset = first_occurrence(timeline, dialysis)
    if onset is None:
        return None
    for claim in timeline.claims:
        if claim.service_date >= onset:
            break
        if any(item in access for item in claim.items):
            return True
    return False


def impact_analysis(
    triggers: Sequence[ImpactTrigger],
    had_access: Mapping[str, bool],
    targets: Iterable[float],
) -> list[ImpactResult]:
    """Share of flagged dialysis-onset beneficiaries with no prior access work.

    For each target sensitivity, a threshold is chosen on the per-trigger
    scored set; a beneficiary counts once, at the earliest trigger that is
    both truly positive and flagged, and contributes by whether any
    access-creation code predates the dialysis onset.
    """
    scores = np.asarray([t.score for t in triggers])
    labels = np.asarray([1 if t.event_within_horizon else 0 for t in triggers])
    results = []
    for target in targets:
        op = threshold_at_sensitivity(scores, labels, target)
        identified: dict[str, date] = {}
        for trig in triggers:
            if not trig.event_within_horizon or trig.score < op.threshold:
                continue
            prev = identified.get(trig.beneficiary_id)
            if prev is None or trig.trigger_date < prev:
                identified[trig.beneficiary_id] = trig.trigger_date
        if not identified:
            raise DataError("impact analysis: no flagged true positives")
        missing = [bid for bid in identified if bid not in had_access]
        if missing:
            raise DataError(
                f"impact analysis: no access status for beneficiaries {missing[:3]}..."
            )
        n_without = sum(1 for bid in identified if not had_access[bid])
        results.append(
            ImpactResult(
                target_sensitivity=target,
                operating_point=op,
                n_identified=len(identified),
                pct_without_prior_access=100.0 * n_without / len(identified),
            )
        )
    return results


# ---------------------------------------------------------------------------
# Report assembly


def horizon_metrics(
    scores_by_horizon: np.ndarray, classes: np.ndarray, horizons: Horizons = DEFAULT_HORIZONS
) -> list[dict]:
    """ROC-AUC, PR-AUC, and the g-mean operating point per overlapping horizon.

    scores_by_horizon has one column per horizon (cumulative probabilities).
    Cells whose metric is undefined (single-class horizon) are reported null.
    """
    out = []
    for i, horizon in enumerate(horizons.overlapping):
        y = (classes <= i).astype(np.int64)
        s = scores_by_horizon[:, i]
        cell: dict = {"horizon_days": horizon, "n": int(y.size), "n_pos": int(y.sum())}
        try:
            cell["roc_auc"] = roc_auc(s, y)
            cell["pr_auc"] = pr_auc(s, y)
            op = gmean_operating_point(s, y)
            cell["threshold"] = op.threshold
            cell["sensitivity"] = op.sensitivity
            cell["specificity"] = op.specificity
        except DataError:
            cell.setdefault("roc_auc", None)
            cell.setdefault("pr_auc", None)
            cell["threshold"] = cell["sensitivity"] = cell["specificity"] = None
        out.append(cell)
    return out


def render_report_text(report: dict) -> str:
    """Human-readable tables mirroring the machine-readable report dict."""
    lines = []
    horizons = report["horizon_days"]
    lines.append("Label prevalence (eligible triggers)")
    header = f"{'horizon':>9}" + "".join(f"{t:>14}" for t in TASKS)
    lines.append(header)
    for i, h in enumerate(horizons):
        row = f"{h:>8}d"
        for task in TASKS:
            row += f"{100 * report['prevalence'][task][i]:>13.3f}%"
        lines.append(row)
    lines.append("")
    lines.append("Test-set ranking and g-mean operating points")
    for task in TASKS:
        cells = report["performance"].get(task)
        if not cells:
            continue
        lines.append(f"  task: {task}")
        lines.append(
            f"{'horizon':>9}{'ROC-AUC':>10}{'PR-AUC':>10}{'sens':>8}{'spec':>8}{'pos':>8}"
        )
        for cell in cells:
            def fmt(v, width=10, nd=3):
                return f"{v:>{width}.{nd}f}" if v is not None else f"{'n/a':>{width}}"

            lines.append(
                f"{cell['horizon_days']:>8}d"
                + fmt(cell["roc_auc"])
                + fmt(cell["pr_auc"])
                + fmt(cell["sensitivity"], 8)
                + fmt(cell["specificity"], 8)
                + f"{cell['n_pos']:>8}"
            )
    lines.append("")
    if report.get("impact"):
        lines.append("Dialysis-access impact (dialysis task, longest horizon)")
        lines.append(f"{'sens target':>12}{'sens':>8}{'spec':>8}{'% no access':>13}{'n':>7}")
        for row in report["impact"]:
            lines.append(
                f"{100 * row['target_sensitivity']:>11.0f}%"
                f"{row['sensitivity']:>8.3f}"
                f"{row['specificity']:>8.3f}"
                f"{row['pct_without_prior_access']:>12.2f}%"
                f"{row['n_identified']:>7}"
            )
    lines.append("")
    return "\n".join(lines)
