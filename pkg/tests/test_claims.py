import io
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renalrisk.claims import (
    CodeSet,
    CodeSystem,
    ParseError,
    default_codeset_library,
    first_occurrence,
    iter_timelines,
    load_codeset_library,
    parse_claims,
    write_claims,
)
from renalrisk.errors import ConfigError

from conftest import make_beneficiary, make_claim, timeline_with

B_LINE = "B\tb1\tfemale\twhite\t1940\t2011-01-01\t"
C_LINE = "C\tb1\t2013-05-02\toutpatient\tICD10_DX:N183"


def test_empty_stream_gives_empty_dataset():
    assert parse_claims([]) == {}


def test_sort_keeps_equal_dates_in_input_order():
    lines = [
        B_LINE,
        "C\tb1\t2013-05-02\toutpatient\tCPT:11111",
        "C\tb1\t2012-01-01\tcarrier",
        "C\tb1\t2013-05-02\tinpatient\tCPT:22222",
    ]
    tl = parse_claims(lines)["b1"]
    assert [c.service_date.isoformat() for c in tl.claims] == [
        "2012-01-01",
        "2013-05-02",
        "2013-05-02",
    ]
    # the 2013-05-02 pair keeps input order
    assert tl.claims[1].items[0].code == "11111"
    assert tl.claims[2].items[0].code == "22222"


def test_zero_claim_beneficiary_retained():
    data = parse_claims([B_LINE])
    assert list(data) == ["b1"]
    assert data["b1"].claims == []


def test_missing_field_error_names_line():
    lines = [B_LINE, "C\tb1\toutpatient"]
    with pytest.raises(ParseError, match="line 2"):
        parse_claims(lines)


def test_bad_date_error_names_line():
    with pytest.raises(ParseError, match="line 2.*service_date"):
        parse_claims([B_LINE, "C\tb1\tnot-a-date\toutpatient"])


def test_unknown_tag_rejected():
    with pytest.raises(ParseError, match="unknown record tag"):
        parse_claims(["X\tstuff"])


def test_claim_for_unknown_beneficiary_rejected():
    with pytest.raises(ParseError, match="unknown beneficiary"):
        parse_claims([C_LINE])


def test_duplicate_beneficiary_rejected():
    with pytest.raises(ParseError, match="duplicate beneficiary"):
        parse_claims([B_LINE, B_LINE])


def test_unknown_code_system_rejected():
    with pytest.raises(ParseError, match="unknown code system"):
        parse_claims([B_LINE, "C\tb1\t2013-01-01\toutpatient\tNOPE:123"])


def test_birth_year_must_precede_enrollment():
    with pytest.raises(ParseError, match="birth_year"):
        parse_claims(["B\tb1\tfemale\twhite\t2012\t2011-01-01\t"])


def test_death_before_enrollment_rejected():
    with pytest.raises(ParseError, match="death_date"):
        parse_claims(["B\tb1\tfemale\twhite\t1940\t2011-01-01\t2010-12-31"])


def test_iter_timelines_matches_parse_on_grouped_input():
    lines = [B_LINE, C_LINE, "B\tb2\tmale\tblack\t1935\t2011-02-01\t"]
    grouped = {tl.beneficiary.id: tl for tl in iter_timelines(lines)}
    assert grouped == parse_claims(lines)


# -- round trip -------------------------------------------------------------

_sexes = st.sampled_from(["female", "male", "unknown"])
_races = st.sampled_from(["white", "black", "asian", "other"])
_codes = st.text(alphabet="ABCDEFG0123456789", min_size=1, max_size=6)
_systems = st.sampled_from([s.value for s in CodeSystem])
_days = st.integers(min_value=0, max_value=2100)


@st.composite
def datasets(draw):
    n_bene = draw(st.integers(min_value=0, max_value=4))
    lines = []
    for i in range(n_bene):
        bid = f"p{i}"
        death = draw(st.one_of(st.none(), st.integers(min_value=30, max_value=2190)))
        death_txt = (date(2011, 1, 1) + __import__("datetime").timedelta(days=death)).isoformat() if death else ""
        lines.append(
            f"B\t{bid}\t{draw(_sexes)}\t{draw(_races)}\t{draw(st.integers(1920, 1950))}\t2011-01-01\t{death_txt}"
        )
    for _ in range(draw(st.integers(min_value=0, max_value=12))):
        if not n_bene:
            break
        bid = f"p{draw(st.integers(0, n_bene - 1))}"
        day = date(2011, 1, 1) + __import__("datetime").timedelta(days=draw(_days))
        items = "\t".join(
            f"{draw(_systems)}:{draw(_codes)}" for _ in range(draw(st.integers(0, 3)))
        )
        row = f"C\t{bid}\t{day.isoformat()}\toutpatient"
        if items:
            row += "\t" + items
        lines.append(row)
    return lines


@given(datasets())
@settings(max_examples=60, deadline=None)
def test_parse_serialize_parse_round_trip(lines):
    first = parse_claims(lines)
    buf = io.StringIO()
    write_claims(first, buf)
    buf.seek(0)
    again = parse_claims(buf)
    assert again == first


@given(datasets(), st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_timeline_invariant_under_claim_line_permutation(lines, rnd):
    """Shuffling claim lines never changes a timeline, except equal-date ties."""
    bene_lines = [l for l in lines if l.startswith("B")]
    claim_lines = [l for l in lines if l.startswith("C")]
    rnd.shuffle(claim_lines)
    base = parse_claims(lines)
    shuffled = parse_claims(bene_lines + claim_lines)
    for bid, tl in base.items():
        dates = [c.service_date for c in tl.claims]
        assert [c.service_date for c in shuffled[bid].claims] == sorted(dates)
        if len(set(dates)) == len(dates):  # no ties: full equality
            assert shuffled[bid] == tl


# -- first_occurrence --------------------------------------------------------


def _single_code_set(name, system, code):
    return CodeSet(name, frozenset({(CodeSystem(system), code)}))


def test_first_occurrence_absent_without_match():
    tl = timeline_with(
        make_beneficiary(), make_claim("b1", date(2012, 1, 1), [("CPT", "00000")])
    )
    assert first_occurrence(tl, _single_code_set("d", "CPT", "90951")) is None


def test_first_occurrence_takes_min_date():
    tl = timeline_with(
        make_beneficiary(),
        make_claim("b1", date(2014, 6, 1), [("CPT", "90951")]),
        make_claim("b1", date(2014, 3, 1), [("CPT", "90955")]),
    )
    lib = default_codeset_library()
    assert first_occurrence(tl, lib.dialysis) == date(2014, 3, 1)


def test_first_occurrence_union_semantics():
    lib = default_codeset_library()
    tl = timeline_with(
        make_beneficiary(), make_claim("b1", date(2013, 7, 4), [("CPT", "50360")])
    )
    assert first_occurrence(tl, lib.transplant) == date(2013, 7, 4)
    assert first_occurrence(tl, lib.rrt) == date(2013, 7, 4)
    assert first_occurrence(tl, lib.dialysis) is None


@given(
    st.lists(
        st.tuples(st.integers(0, 400), st.sampled_from(["90951", "50360", "11111"])),
        max_size=8,
    )
)
@settings(max_examples=100, deadline=None)
def test_first_occurrence_of_union_is_min_of_parts(events):
    from datetime import timedelta

    lib = default_codeset_library()
    claims = [
        make_claim("b1", date(2012, 1, 1) + timedelta(days=d), [("CPT", code)])
        for d, code in events
    ]
    tl = timeline_with(make_beneficiary(), *claims)
    inf = date.max
    d = first_occurrence(tl, lib.dialysis) or inf
    t = first_occurrence(tl, lib.transplant) or inf
    u = first_occurrence(tl, lib.rrt) or inf
    assert u == min(d, t)


def test_rrt_is_union_of_dialysis_and_transplant(library):
    assert library.rrt.codes == library.dialysis.codes | library.transplant.codes


def test_codeset_file_override(tmp_path):
    path = tmp_path / "codesets.json"
    path.write_text(
        '{"ckd": {"ICD10_DX": ["N185"]}, "dialysis": {"CPT": ["1"]},'
        ' "transplant": {"CPT": ["2"]}, "access_creation": {"CPT": ["3"]}}'
    )
    lib = load_codeset_library(path)
    assert (CodeSystem.CPT, "1") in lib.dialysis.codes
    assert len(lib.rrt.codes) == 2


def test_codeset_unknown_system_rejected(tmp_path):
    path = tmp_path / "codesets.json"
    path.write_text(
        '{"ckd": {"BOGUS": ["x"]}, "dialysis": {}, "transplant": {}, "access_creation": {}}'
    )
    with pytest.raises(ConfigError, match="unknown code system"):
        load_codeset_library(path)
