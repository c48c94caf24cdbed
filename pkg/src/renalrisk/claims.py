"""Domain model for beneficiaries, coded claims, and per-beneficiary timelines.

The on-disk claims format is line-delimited UTF-8 text with tab-separated
fields. Two record kinds are distinguished by a leading tag:

    B <TAB> id <TAB> sex <TAB> race <TAB> birth_year <TAB> enrollment_date <TAB> death_date
    C <TAB> beneficiary_id <TAB> service_date <TAB> claim_type <TAB> SYSTEM:code ...

Dates are ISO-8601 (``YYYY-MM-DD``); ``death_date`` may be empty. A claim may
carry zero or more ``SYSTEM:code`` items. A beneficiary record must appear
before any of its claims. Blank lines and lines starting with ``#`` are
ignored. The parser rejects unknown tags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Union

from .errors import ConfigError, DataError, ParseError


class Sex(str, Enum):
    FEMALE = "female"
    MALE = "male"
    UNKNOWN = "unknown"


class Race(str, Enum):
    ASIAN = "asian"
    BLACK = "black"
    HISPANIC = "hispanic"
    NATIVE_AMERICAN = "native_american"
    WHITE = "white"
    OTHER = "other"
    UNKNOWN = "unknown"


class ClaimType(str, Enum):
    INPATIENT = "inpatient"
    OUTPATIENT = "outpatient"
    HOME_HEALTH = "home_health"
    SKILLED_NURSING = "skilled_nursing"
    CARRIER = "carrier"


class CodeSystem(str, Enum):
    """Coded feature streams carried by claim items.

    Condition, procedure, encounter, and medication streams are kept separate
    even when the underlying code space overlaps (e.g. a principal diagnosis
    is a distinct stream from an ordinary diagnosis).
    """

    ICD9_DX = "ICD9_DX"
    ICD10_DX = "ICD10_DX"
    CCS_DX = "CCS_DX"
    HCC = "HCC"
    ICD9_PX = "ICD9_PX"
    ICD10_PX = "ICD10_PX"
    CCS_PX = "CCS_PX"
    CPT = "CPT"
    HCPCS = "HCPCS"
    HCPCS_ALPHA = "HCPCS_ALPHA"
    PERFORMER_ROLE = "PERFORMER_ROLE"
    ENCOUNTER_CLASS = "ENCOUNTER_CLASS"
    ADMIT_SOURCE = "ADMIT_SOURCE"
    DISCHARGE_DISPOSITION = "DISCHARGE_DISPOSITION"
    PRINCIPAL_DX_ICD9 = "PRINCIPAL_DX_ICD9"
    PRINCIPAL_DX_ICD10 = "PRINCIPAL_DX_ICD10"
    ENCOUNTER_CCS = "ENCOUNTER_CCS"
    ENCOUNTER_HCC = "ENCOUNTER_HCC"
    REVENUE_CODE = "REVENUE_CODE"
    MED_HCPCS = "MED_HCPCS"
    RXNORM = "RXNORM"


@dataclass(frozen=True, slots=True)
class Beneficiary:
    id: str
    sex: Sex
    race: Race
    birth_year: int
    enrollment_date: date
    death_date: date | None = None

    def validate(self) -> None:
        if self.birth_year >= self.enrollment_date.year:
            raise DataError(
                f"beneficiary {self.id}: birth_year {self.birth_year} not before "
                f"enrollment year {self.enrollment_date.year}"
            )
        if self.death_date is not None and self.death_date < self.enrollment_date:
            raise DataError(f"beneficiary {self.id}: death_date precedes enrollment_date")


@dataclass(frozen=True, slots=True)
class CodedItem:
    system: CodeSystem
    code: str


@dataclass(slots=True)
class Claim:
    beneficiary_id: str
    service_date: date
    claim_type: ClaimType
    items: list[CodedItem] = field(default_factory=list)


@dataclass(slots=True)
class ClaimTimeline:
    """A beneficiary's claims in ascending service-date order.

    Equal-date claims keep their input order (stable sort), so a timeline is
    reproducible from any permutation of the input lines up to such ties.
    """

    beneficiary: Beneficiary
    claims: list[Claim] = field(default_factory=list)

    def sort(self) -> None:
        self.claims.sort(key=lambda c: c.service_date)


@dataclass(frozen=True)
class CodeSet:
    """Named set of (system, code) pairs, e.g. the dialysis procedure codes."""

    name: str
    codes: frozenset[tuple[CodeSystem, str]]

    def __contains__(self, item: CodedItem) -> bool:
        return (item.system, item.code) in self.codes

    def union(self, other: "CodeSet", name: str) -> "CodeSet":
        return CodeSet(name, self.codes | other.codes)


# Shipped defaults. Clinical definitions are configuration, not code: any of
# these can be overridden by a codesets JSON file (see load_codeset_library).
DEFAULT_CODESETS: dict[str, dict[str, list[str]]] = {
    "ckd": {
        "ICD9_DX": ["5851", "5852", "5853", "5854", "5855", "5856", "5859"],
        "ICD10_DX": ["N181", "N182", "N183", "N184", "N185", "N186", "N189"],
    },
    "dialysis": {
        "CPT": [str(c) for c in range(90951, 90971)],
    },
    "transplant": {
        "CPT": ["50360", "50365"],
    },
    "access_creation": {
        "CPT": ["36818", "36819", "36820", "36821", "36825", "36830", "49324", "49421"],
    },
}


@dataclass(frozen=True)
class CodeSetLibrary:
    """The four configured code sets plus the derived RRT union."""

    ckd: CodeSet
    dialysis: CodeSet
    transplant: CodeSet
    access_creation: CodeSet

    @property
    def rrt(self) -> CodeSet:
        return self.dialysis.union(self.transplant, "rrt")

    def task_codeset(self, task: str) -> CodeSet:
        if task == "rrt":
            return self.rrt
        if task == "dialysis":
            return self.dialysis
        if task == "transplant":
            return self.transplant
        raise ConfigError(f"unknown task {task!r}")


def _codeset_from_mapping(name: str, mapping: dict[str, list[str]]) -> CodeSet:
    pairs = set()
    for system_name, codes in mapping.items():
        try:
            system = CodeSystem(system_name)
        except ValueError:
            raise ConfigError(f"codeset {name!r}: unknown code system {system_name!r}")
        for code in codes:
            if not code:
                raise ConfigError(f"codeset {name!r}: empty code under {system_name}")
            pairs.add((system, str(code)))
    return CodeSet(name, frozenset(pairs))


def default_codeset_library() -> CodeSetLibrary:
    return _library_from_dict(DEFAULT_CODESETS)


def _library_from_dict(raw: dict) -> CodeSetLibrary:
    required = ("ckd", "dialysis", "transplant", "access_creation")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ConfigError(f"codesets file missing sections: {', '.join(missing)}")
    return CodeSetLibrary(*(_codeset_from_mapping(k, raw[k]) for k in required))


def load_codeset_library(path: Union[str, Path, None]) -> CodeSetLibrary:
    """Load code sets from a JSON file, or the shipped defaults when None."""
    if path is None:
        return default_codeset_library()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"codesets file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"codesets file {path}: invalid JSON ({exc})")
    return _library_from_dict(raw)


def first_occurrence(timeline: ClaimTimeline, codeset: CodeSet) -> date | None:
    """Earliest service date of any claim carrying a code from ``codeset``."""
    for claim in timeline.claims:
        for item in claim.items:
            if item in codeset:
                return claim.service_date
    return None


# ---------------------------------------------------------------------------
# Line-delimited IO


LineSource = Union[str, Path, IO[str], Iterable[str]]


def _iter_lines(source: LineSource) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            yield from handle
    else:
        yield from source


def _parse_date(raw: str, line_no: int, what: str) -> date:
    try:
        return date.fromisoformat(raw)
    except ValueError:
        raise ParseError(line_no, f"bad {what} {raw!r} (expected YYYY-MM-DD)")


def _parse_beneficiary(fields: list[str], line_no: int) -> Beneficiary:
    if len(fields) != 7:
        raise ParseError(line_no, f"beneficiary record needs 7 fields, got {len(fields)}")
    _, bid, sex_raw, race_raw, birth_raw, enroll_raw, death_raw = fields
    if not bid:
        raise ParseError(line_no, "empty beneficiary id")
    try:
        sex = Sex(sex_raw)
    except ValueError:
        raise ParseError(line_no, f"bad sex {sex_raw!r}")
    try:
        race = Race(race_raw)
    except ValueError:
        raise ParseError(line_no, f"bad race {race_raw!r}")
    try:
        birth_year = int(birth_raw)
    except ValueError:
        raise ParseError(line_no, f"bad birth_year {birth_raw!r}")
    enrollment = _parse_date(enroll_raw, line_no, "enrollment_date")
    death = _parse_date(death_raw, line_no, "death_date") if death_raw else None
    bene = Beneficiary(bid, sex, race, birth_year, enrollment, death)
    try:
        bene.validate()
    except DataError as exc:
        raise ParseError(line_no, str(exc))
    return bene


def _parse_claim(fields: list[str], line_no: int) -> Claim:
    if len(fields) < 4:
        raise ParseError(line_no, f"claim record needs at least 4 fields, got {len(fields)}")
    _, bid, date_raw, type_raw = fields[:4]
    if not bid:
        raise ParseError(line_no, "claim with empty beneficiary_id")
    service_date = _parse_date(date_raw, line_no, "service_date")
    try:
        claim_type = ClaimType(type_raw)
    except ValueError:
        raise ParseError(line_no, f"bad claim_type {type_raw!r}")
    items = []
    for token in fields[4:]:
        system_raw, sep, code = token.partition(":")
        if not sep or not code:
            raise ParseError(line_no, f"bad item {token!r} (expected SYSTEM:code)")
        try:
            system = CodeSystem(system_raw)
        except ValueError:
            raise ParseError(line_no, f"unknown code system {system_raw!r}")
        items.append(CodedItem(system, code))
    return Claim(bid, service_date, claim_type, items)


def _parse_records(source: LineSource) -> Iterator[tuple[int, Beneficiary | Claim]]:
    for line_no, line in enumerate(_iter_lines(source), start=1):
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        tag = fields[0]
        if tag == "B":
            yield line_no, _parse_beneficiary(fields, line_no)
        elif tag == "C":
            yield line_no, _parse_claim(fields, line_no)
        else:
            raise ParseError(line_no, f"unknown record tag {tag!r}")


def parse_claims(source: LineSource) -> dict[str, ClaimTimeline]:
    """Parse a claims stream into one timeline per beneficiary.

    Beneficiaries without claims are retained with empty timelines. Claims
    for an id with no prior beneficiary record, and duplicate beneficiary
    records, are errors.
    """
    timelines: dict[str, ClaimTimeline] = {}
    for line_no, record in _parse_records(source):
        if isinstance(record, Beneficiary):
            if record.id in timelines:
                raise ParseError(line_no, f"duplicate beneficiary record {record.id!r}")
            timelines[record.id] = ClaimTimeline(record)
        else:
            timeline = timelines.get(record.beneficiary_id)
            if timeline is None:
                raise ParseError(
                    line_no, f"claim references unknown beneficiary {record.beneficiary_id!r}"
                )
            timeline.claims.append(record)
    for timeline in timelines.values():
        timeline.sort()
    return timelines


def iter_timelines(source: LineSource) -> Iterator[ClaimTimeline]:
    """Stream timelines from a file whose claims are grouped by beneficiary.

    This is the constant-memory path used by the pipeline stages. It enforces
    the same record-level contracts as parse_claims but requires each
    beneficiary's claims to directly follow its B record.
    """
    seen: set[str] = set()
    current: ClaimTimeline | None = None
    for line_no, record in _parse_records(source):
        if isinstance(record, Beneficiary):
            if record.id in seen:
                raise ParseError(line_no, f"duplicate beneficiary record {record.id!r}")
            seen.add(record.id)
            if current is not None:
                current.sort()
                yield current
            current = ClaimTimeline(record)
        else:
            if current is None or record.beneficiary_id != current.beneficiary.id:
                if record.beneficiary_id in seen:
                    raise DataError(
                        f"line {line_no}: claims not grouped by beneficiary; "
                        "use parse_claims for interleaved input"
                    )
                raise ParseError(
                    line_no, f"claim references unknown beneficiary {record.beneficiary_id!r}"
                )
            current.claims.append(record)
    if current is not None:
        current.sort()
        yield current


def beneficiary_line(bene: Beneficiary) -> str:
    death = bene.death_date.isoformat() if bene.death_date else ""
    return "\t".join(
        (
            "B",
            bene.id,
            bene.sex.value,
            bene.race.value,
            str(bene.birth_year),
            bene.enrollment_date.isoformat(),
            death,
        )
    )


def claim_line(claim: Claim) -> str:
    fields = [
        "C",
        claim.beneficiary_id,
        claim.service_date.isoformat(),
        claim.claim_type.value,
    ]
    fields.extend(f"{item.system.value}:{item.code}" for item in claim.items)
    return "\t".join(fields)


def write_claims(timelines: dict[str, ClaimTimeline], sink: Union[str, Path, IO[str]]) -> None:
    """Serialize timelines grouped by beneficiary, in beneficiary-id order.

    parse_claims(write_claims(parse_claims(x))) reproduces the same dataset.
    """

    def _write(handle: IO[str]) -> None:
        for bid in sorted(timelines):
            timeline = timelines[bid]
            handle.write(beneficiary_line(timeline.beneficiary) + "\n")
            for claim in timeline.claims:
                handle.write(claim_line(claim) + "\n")

    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as handle:
            _write(handle)
    else:
        _write(sink)
