"""Monthly candidate triggers: eligibility screening and event labeling.

A candidate trigger is a (beneficiary, first-of-month) pair. It is eligible
when, at the trigger date ``t``, the beneficiary

  1. is 65 or older (by birth year),
  2. has a chronic-kidney-disease code on some claim strictly before ``t``,
  3. has no renal-replacement code dated at or before ``t``,
  4. has claims history reaching back at least 365 days, and
  5. filed at least one claim in the 30 days before ``t``.

Eligible triggers get, per task, a one-hot label over five disjoint
day-offset windows (0,30], (30,60], (60,90], (90,180], (180,365] plus an
explicit no-event class; an event at offset 50 labels the second window.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_left
from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from typing import IO, Iterable, Iterator, Sequence

from .claims import ClaimTimeline, CodeSet, CodeSetLibrary, first_occurrence
from .errors import ConfigError, DataError

TASKS = ("rrt", "dialysis", "transplant")


class IneligibilityReason(str, Enum):
    UNDER_65 = "under_65"
    NO_CKD_DX = "no_ckd_dx"
    RRT_ALREADY_INITIATED = "rrt_already_initiated"
    INSUFFICIENT_HISTORY = "insufficient_history"
    NO_RECENT_CLAIM = "no_recent_claim"


@dataclass(frozen=True)
class Horizons:
    """Overlapping prediction horizons and the disjoint windows that tile them."""

    overlapping: tuple[int, ...] = (30, 60, 90, 180, 365)
    disjoint: tuple[tuple[int, int], ...] = ((0, 30), (30, 60), (60, 90), (90, 180), (180, 365))

    def validate(self) -> None:
        lo = 0
        for (a, b), h in zip(self.disjoint, self.overlapping):
            if a != lo or b != h:
                raise ConfigError("disjoint windows must tile (0, max horizon] at the horizons")
            lo = b
        if len(self.disjoint) != len(self.overlapping):
            raise ConfigError("horizons and disjoint windows must align")

    @property
    def n_classes(self) -> int:
        return len(self.disjoint) + 1


DEFAULT_HORIZONS = Horizons()


@dataclass(frozen=True)
class Trigger:
    beneficiary_id: str
    trigger_date: date
    eligible: bool
    reasons: frozenset[IneligibilityReason]
    # task name -> one-hot disjoint label; None for ineligible triggers
    labels: dict[str, tuple[int, ...]] | None = None


def month_firsts(start: date, end: date) -> list[date]:
    """All first-of-month dates d with start <= d <= end."""
    if start > end:
        return []
    first = date(start.year, start.month, 1)
    if first < start:
        month = start.year * 12 + start.month  # next month
        first = date(month // 12, month % 12 + 1, 1)
    out = []
    y, m = first.year, first.month
    while date(y, m, 1) <= end:
        out.append(date(y, m, 1))
        m += 1
        if m == 13:
            y, m = y + 1, 1
    return out


@dataclass(frozen=True)
class _TimelineFacts:
    birth_year: int
    claim_ordinals: tuple[int, ...]  # sorted
    first_ckd: int | None
    first_rrt: int | None
    first_by_task: dict[str, int | None]


def _facts(timeline: ClaimTimeline, library: CodeSetLibrary) -> _TimelineFacts:
    ordinals = tuple(c.service_date.toordinal() for c in timeline.claims)
    fo = {task: first_occurrence(timeline, library.task_codeset(task)) for task in TASKS}
    ckd = first_occurrence(timeline, library.ckd)
    return _TimelineFacts(
        birth_year=timeline.beneficiary.birth_year,
        claim_ordinals=ordinals,
        first_ckd=ckd.toordinal() if ckd else None,
        first_rrt=fo["rrt"].toordinal() if fo["rrt"] else None,
        first_by_task={k: (v.toordinal() if v else None) for k, v in fo.items()},
    )


def _eligibility(facts: _TimelineFacts, t: date) -> frozenset[IneligibilityReason]:
    t_ord = t.toordinal()
    reasons = set()
    if t.year - facts.birth_year < 65:
        reasons.add(IneligibilityReason.UNDER_65)
    if facts.first_ckd is None or facts.first_ckd >= t_ord:
        reasons.add(IneligibilityReason.NO_CKD_DX)
    if facts.first_rrt is not None and facts.first_rrt <= t_ord:
        reasons.add(IneligibilityReason.RRT_ALREADY_INITIATED)
    days = facts.claim_ordinals
    if not days or days[0] > t_ord - 365:
        reasons.add(IneligibilityReason.INSUFFICIENT_HISTORY)
    if bisect_left(days, t_ord - 30) >= bisect_left(days, t_ord):
        reasons.add(IneligibilityReason.NO_RECENT_CLAIM)
    return frozenset(reasons)


def check_eligibility(
    timeline: ClaimTimeline, t: date, library: CodeSetLibrary
) -> tuple[bool, frozenset[IneligibilityReason]]:
    reasons = _eligibility(_facts(timeline, library), t)
    return (not reasons, reasons)


def _label_from_offset(offset: int | None, horizons: Horizons) -> tuple[int, ...]:
    n = horizons.n_classes
    cls = n - 1
    if offset is not None and offset >= 1:
        edges = horizons.overlapping
        if offset <= edges[-1]:
            cls = bisect_left(edges, offset)
    return tuple(1 if i == cls else 0 for i in range(n))


def label_trigger(
    timeline: ClaimTimeline,
    t: date,
    task: CodeSet,
    horizons: Horizons = DEFAULT_HORIZONS,
) -> tuple[int, ...]:
    """One-hot disjoint-window label for the first task event strictly after t."""
    offset = None
    for claim in timeline.claims:
        if claim.service_date <= t:
            continue
        if any(item in task for item in claim.items):
            offset = (claim.service_date - t).days
            break
    return _label_from_offset(offset, horizons)


def enumerate_triggers(
    timeline: ClaimTimeline,
    trigger_range: tuple[date, date],
    library: CodeSetLibrary,
    dataset_end: date,
    horizons: Horizons = DEFAULT_HORIZONS,
) -> list[Trigger]:
    """One candidate trigger per first-of-month in trigger_range, labeled.

    The last trigger must leave a full censoring buffer before dataset_end so
    every label is fully observed.
    """
    start, end = trigger_range
    max_horizon = horizons.overlapping[-1]
    if end + timedelta(days=max_horizon) > dataset_end:
        raise ConfigError(
            f"trigger range end {end} needs {max_horizon} days of buffer before "
            f"dataset end {dataset_end}"
        )
    facts = _facts(timeline, library)
    out = []
    for t in month_firsts(start, end):
        reasons = _eligibility(facts, t)
        if reasons:
            out.append(Trigger(timeline.beneficiary.id, t, False, reasons))
            continue
        t_ord = t.toordinal()
        labels = {}
        for task in TASKS:
            first = facts.first_by_task[task]
            offset = None if first is None else first - t_ord
            labels[task] = _label_from_offset(offset, horizons)
        out.append(Trigger(timeline.beneficiary.id, t, True, frozenset(), labels))
    return out


def split_beneficiaries(
    ids: Iterable[str],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[set[str], set[str], set[str]]:
    """Deterministic beneficiary-level train/valid/test partition.

    Each id is ranked by a salted hash so the assignment is independent of
    input order; cut points are the half-up-rounded cumulative ratios.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"need 3 non-negative split ratios, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios!r}")
    ranked = sorted(
        set(ids),
        key=lambda i: (hashlib.sha256(f"{seed}|{i}".encode("utf-8")).hexdigest(), i),
    )
    n = len(ranked)
    cut1 = int(ratios[0] * n + 0.5)
    cut2 = int((ratios[0] + ratios[1]) * n + 0.5)
    return set(ranked[:cut1]), set(ranked[cut1:cut2]), set(ranked[cut2:])


# ---------------------------------------------------------------------------
# Trigger table IO
#
# One row per candidate trigger:
#   beneficiary_id TAB trigger_date TAB eligible(0|1) TAB reasons TAB
#   rrt_label TAB dialysis_label TAB transplant_label
# Reasons are comma-joined and sorted; labels are bit strings like 010000,
# or "-" for ineligible triggers.


def trigger_row(trigger: Trigger) -> str:
    reasons = ",".join(sorted(r.value for r in trigger.reasons))
    if trigger.eligible:
        labels = [
            "".join(str(v) for v in trigger.labels[task])  # type: ignore[index]
            for task in TASKS
        ]
    else:
        labels = ["-"] * len(TASKS)
    return "\t".join(
        [trigger.beneficiary_id, trigger.trigger_date.isoformat(), str(int(trigger.eligible)), reasons]
        + labels
    )


def parse_trigger_row(line: str) -> Trigger:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 4 + len(TASKS):
        raise DataError(f"bad trigger row: {line!r}")
    bid, date_raw, eligible_raw, reasons_raw = fields[:4]
    eligible = eligible_raw == "1"
    reasons = frozenset(
        IneligibilityReason(r) for r in reasons_raw.split(",") if r
    )
    labels = None
    if eligible:
        labels = {}
        for task, bits in zip(TASKS, fields[4:]):
            labels[task] = tuple(int(b) for b in bits)
    return Trigger(bid, date.fromisoformat(date_raw), eligible, reasons, labels)


def iter_trigger_rows(source) -> Iterator[Trigger]:
    from .claims import _iter_lines  # shared line handling

    for line in _iter_lines(source):
        if not line.strip() or line.startswith("#"):
            continue
        yield parse_trigger_row(line)


def write_trigger_rows(triggers: Iterable[Trigger], handle: IO[str]) -> None:
    for trig in triggers:
        handle.write(trigger_row(trig) + "\n")
