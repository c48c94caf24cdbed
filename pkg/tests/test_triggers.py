from datetime import date, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renalrisk.claims import default_codeset_library, first_occurrence
from renalrisk.errors import ConfigError
from renalrisk.triggers import (
    DEFAULT_HORIZONS,
    IneligibilityReason as R,
    check_eligibility,
    enumerate_triggers,
    label_trigger,
    month_firsts,
    parse_trigger_row,
    split_beneficiaries,
    trigger_row,
)

from conftest import make_beneficiary, make_claim, monthly_claims, timeline_with

LIB = default_codeset_library()
DATASET_END = date(2016, 12, 31)
RANGE = (date(2012, 1, 1), date(2015, 12, 1))


def test_48_monthly_triggers_in_study_range(eligible_timeline):
    triggers = enumerate_triggers(eligible_timeline, RANGE, LIB, DATASET_END)
    assert len(triggers) == 48
    assert all(t.trigger_date.day == 1 for t in triggers)
    assert triggers[0].trigger_date == date(2012, 1, 1)
    assert triggers[-1].trigger_date == date(2015, 12, 1)


def test_buffer_precondition_enforced(eligible_timeline):
    with pytest.raises(ConfigError, match="buffer"):
        enumerate_triggers(eligible_timeline, (date(2012, 1, 1), date(2016, 2, 1)), LIB, DATASET_END)


def test_no_claims_beneficiary_gets_three_reasons():
    tl = timeline_with(make_beneficiary())
    for trig in enumerate_triggers(tl, RANGE, LIB, DATASET_END):
        assert not trig.eligible
        assert trig.reasons == {
            R.NO_CKD_DX,
            R.INSUFFICIENT_HISTORY,
            R.NO_RECENT_CLAIM,
        }


def test_post_onset_triggers_ineligible():
    bid = "b1"
    claims = monthly_claims(bid, date(2012, 1, 1), 40)
    claims.append(make_claim(bid, date(2012, 2, 2), [("ICD10_DX", "N184")]))
    claims.append(make_claim(bid, date(2014, 3, 15), [("CPT", "90960")]))
    tl = timeline_with(make_beneficiary(bid), *claims)
    by_date = {
        t.trigger_date: t for t in enumerate_triggers(tl, RANGE, LIB, DATASET_END)
    }
    assert by_date[date(2014, 3, 1)].eligible
    after = by_date[date(2014, 4, 1)]
    assert not after.eligible and R.RRT_ALREADY_INITIATED in after.reasons


def test_rrt_on_trigger_date_is_ineligible():
    bid = "b1"
    claims = monthly_claims(bid, date(2012, 1, 1), 40)
    claims.append(make_claim(bid, date(2012, 2, 2), [("ICD10_DX", "N184")]))
    claims.append(make_claim(bid, date(2014, 3, 1), [("CPT", "90960")]))
    tl = timeline_with(make_beneficiary(bid), *claims)
    ok, reasons = check_eligibility(tl, date(2014, 3, 1), LIB)
    assert not ok and R.RRT_ALREADY_INITIATED in reasons


def test_transplant_blocks_dialysis_triggers_too():
    # criterion 3 is based on the union set: any renal replacement disqualifies
    bid = "b1"
    claims = monthly_claims(bid, date(2012, 1, 1), 40)
    claims.append(make_claim(bid, date(2012, 2, 2), [("ICD10_DX", "N184")]))
    claims.append(make_claim(bid, date(2013, 6, 10), [("CPT", "50360")]))
    tl = timeline_with(make_beneficiary(bid), *claims)
    ok, reasons = check_eligibility(tl, date(2013, 7, 1), LIB)
    assert not ok and reasons == {R.RRT_ALREADY_INITIATED}


def test_recent_claim_window_boundaries():
    bid = "b1"
    t = date(2013, 6, 1)
    base = [
        make_claim(bid, date(2012, 1, 10), [("ICD10_DX", "N183")]),
        make_claim(bid, date(2012, 4, 1)),
    ]
    # claim exactly 31 days back -> stale
    tl = timeline_with(make_beneficiary(bid), *base, make_claim(bid, t - timedelta(days=31)))
    ok, reasons = check_eligibility(tl, t, LIB)
    assert not ok and reasons == {R.NO_RECENT_CLAIM}
    # exactly 30 days back counts
    tl = timeline_with(make_beneficiary(bid), *base, make_claim(bid, t - timedelta(days=30)))
    ok, reasons = check_eligibility(tl, t, LIB)
    assert ok
    # a claim dated on the trigger day itself does not count as recent
    tl = timeline_with(make_beneficiary(bid), *base, make_claim(bid, t))
    ok, reasons = check_eligibility(tl, t, LIB)
    assert not ok and reasons == {R.NO_RECENT_CLAIM}


def test_history_boundary_364_vs_365_days():
    bid = "b1"
    t = date(2013, 6, 1)

    def tl_with_first_claim(days_back):
        return timeline_with(
            make_beneficiary(bid),
            make_claim(bid, t - timedelta(days=days_back), [("ICD10_DX", "N183")]),
            make_claim(bid, t - timedelta(days=10)),
        )

    ok, reasons = check_eligibility(tl_with_first_claim(364), t, LIB)
    assert not ok and reasons == {R.INSUFFICIENT_HISTORY}
    ok, reasons = check_eligibility(tl_with_first_claim(365), t, LIB)
    assert ok


def test_age_under_65_flagged():
    bid = "b1"
    claims = monthly_claims(bid, date(2012, 1, 1), 30)
    claims.append(make_claim(bid, date(2012, 2, 2), [("ICD10_DX", "N184")]))
    tl = timeline_with(make_beneficiary(bid, birth_year=1950), *claims)
    ok, reasons = check_eligibility(tl, date(2013, 6, 1), LIB)  # age 63 by birth year
    assert not ok and reasons == {R.UNDER_65}


def test_all_five_satisfied_is_eligible(eligible_timeline):
    ok, reasons = check_eligibility(eligible_timeline, date(2013, 6, 1), LIB)
    assert ok and reasons == frozenset()


def test_ckd_code_must_precede_trigger():
    bid = "b1"
    claims = monthly_claims(bid, date(2012, 1, 1), 30)
    claims.append(make_claim(bid, date(2013, 6, 1), [("ICD10_DX", "N184")]))
    tl = timeline_with(make_beneficiary(bid), *claims)
    ok, reasons = check_eligibility(tl, date(2013, 6, 1), LIB)
    assert not ok and R.NO_CKD_DX in reasons
    ok, reasons = check_eligibility(tl, date(2013, 7, 1), LIB)
    assert ok


# -- labels -------------------------------------------------------------------


def _timeline_with_event(offset_days, t=date(2014, 1, 1), code="90951"):
    bid = "b1"
    claims = [make_claim(bid, t + timedelta(days=offset_days), [("CPT", code)])]
    return timeline_with(make_beneficiary(bid), *claims)


def test_event_at_day_50_labels_second_window():
    tl = _timeline_with_event(50)
    assert label_trigger(tl, date(2014, 1, 1), LIB.rrt) == (0, 1, 0, 0, 0, 0)


def test_no_event_within_365_labels_negative_class():
    tl = _timeline_with_event(400)
    assert label_trigger(tl, date(2014, 1, 1), LIB.rrt) == (0, 0, 0, 0, 0, 1)


def test_boundary_offsets_fall_in_lower_window():
    for offset, cls in ((1, 0), (30, 0), (31, 1), (60, 1), (90, 2), (180, 3), (365, 4), (366, 5)):
        label = label_trigger(_timeline_with_event(offset), date(2014, 1, 1), LIB.rrt)
        assert label.index(1) == cls, (offset, label)


def brute_force_label(timeline, t, codeset, horizons=DEFAULT_HORIZONS):
    """Independent oracle: scan every day offset 1..366 against the raw claims."""
    edges = horizons.overlapping
    for offset in range(1, 367):
        day = t + timedelta(days=offset)
        hit = any(
            claim.service_date == day and any(item in codeset for item in claim.items)
            for claim in timeline.claims
        )
        if hit:
            if offset > edges[-1]:
                break
            for k, hi in enumerate(edges):
                if offset <= hi:
                    return tuple(1 if i == k else 0 for i in range(6))
    return (0, 0, 0, 0, 0, 1)


@given(
    st.lists(
        st.tuples(
            st.integers(min_value=-50, max_value=400),
            st.sampled_from(["90951", "90960", "50360", "11111", "N183"]),
        ),
        max_size=6,
    ),
    st.sampled_from(["rrt", "dialysis", "transplant"]),
)
@settings(max_examples=300, deadline=None)
def test_label_matches_brute_force_oracle(events, task):
    t = date(2014, 1, 1)
    bid = "b1"
    claims = []
    for offset, code in events:
        system = "ICD10_DX" if code.startswith("N") else "CPT"
        claims.append(make_claim(bid, t + timedelta(days=offset), [(system, code)]))
    tl = timeline_with(make_beneficiary(bid), *claims)
    codeset = LIB.task_codeset(task)
    assert label_trigger(tl, t, codeset) == brute_force_label(tl, t, codeset)


# -- splits -------------------------------------------------------------------


def test_split_sizes_10_ids():
    ids = {f"p{i}" for i in range(10)}
    train, valid, test = split_beneficiaries(ids, (0.8, 0.1, 0.1), seed=3)
    assert (len(train), len(valid), len(test)) == (8, 1, 1)


def test_split_deterministic_and_partition():
    ids = {f"x{i}" for i in range(57)}
    a = split_beneficiaries(ids, seed=12)
    b = split_beneficiaries(sorted(ids), seed=12)
    assert a == b
    train, valid, test = a
    assert train | valid | test == ids
    assert not (train & valid or train & test or valid & test)


def test_split_changes_with_seed():
    ids = {f"x{i}" for i in range(200)}
    assert split_beneficiaries(ids, seed=1) != split_beneficiaries(ids, seed=2)


def test_split_ratios_must_sum_to_one():
    with pytest.raises(ConfigError, match="sum to 1"):
        split_beneficiaries({"a"}, (0.5, 0.2, 0.2), seed=0)


@given(st.sets(st.text(min_size=1, max_size=8), max_size=40), st.integers(0, 2**32))
@settings(max_examples=60, deadline=None)
def test_split_is_always_a_partition(ids, seed):
    train, valid, test = split_beneficiaries(ids, seed=seed)
    assert train | valid | test == set(ids)
    assert len(train) + len(valid) + len(test) == len(ids)


# -- row round trip -------------------------------------------------------------


def test_trigger_row_round_trip(eligible_timeline):
    triggers = enumerate_triggers(eligible_timeline, RANGE, LIB, DATASET_END)
    for trig in triggers:
        assert parse_trigger_row(trigger_row(trig)) == trig


def test_month_firsts_mid_month_start():
    months = month_firsts(date(2012, 1, 15), date(2012, 4, 1))
    assert months == [date(2012, 2, 1), date(2012, 3, 1), date(2012, 4, 1)]


def test_enumeration_idempotent(eligible_timeline):
    a = enumerate_triggers(eligible_timeline, RANGE, LIB, DATASET_END)
    b = enumerate_triggers(eligible_timeline, RANGE, LIB, DATASET_END)
    assert a == b


def test_no_eligible_trigger_at_or_after_first_rrt():
    bid = "b1"
    claims = monthly_claims(bid, date(2012, 1, 1), 48)
    claims.append(make_claim(bid, date(2012, 2, 2), [("ICD10_DX", "N184")]))
    claims.append(make_claim(bid, date(2014, 7, 21), [("CPT", "90962")]))
    tl = timeline_with(make_beneficiary(bid), *claims)
    onset = first_occurrence(tl, LIB.rrt)
    for trig in enumerate_triggers(tl, RANGE, LIB, DATASET_END):
        if trig.eligible:
            assert trig.trigger_date < onset
