import io
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsrec.corpus import (DataError, Interaction, decompose_many, decompose_timestamp,
                            parse_catalog, parse_interactions, profile_time_series,
                            sentiment_to_rating, sessionize, split_timestamp_for, time_based_split,
                            tokenize)


def civil_from_days(z):
    """Days since 1970-01-01 to (year, month, day); Hinnant's integer algorithm."""
    z += 719468
    era = (z if z >= 0 else z - 146096) // 146097
    doe = z - era * 146097
    yoe = (doe - doe // 1460 + doe // 36524 - doe // 146096) // 365
    y = yoe + era * 400
    doy = doe - (365 * yoe + yoe // 4 - yoe // 100)
    mp = (5 * doy + 2) // 153
    m = mp + 3 if mp < 10 else mp - 9
    return (y + 1 if m <= 2 else y), m


def oracle_decompose(ts):
    days, secs = divmod(ts, 86400)
    year, month = civil_from_days(days)
    return (year, month, (days + 3) % 7, secs // 3600, (secs // 60) % 60, secs % 60)


def as_tuple(d):
    return (d.year, d.month, d.day_of_week, d.hour, d.minute, d.second)


# -- parsing ------------------------------------------------------------------

def test_parse_catalog_maps_fields():
    line = "N1\tsports\tbasketball\tRaptors win again\tThe Raptors won...\n"
    catalog, tally = parse_catalog(io.StringIO(line))
    item = catalog["N1"]
    assert item.category == "sports"
    assert item.subcategory == "basketball"
    assert item.title_tokens == ("raptors", "win", "again")
    assert item.snippet_tokens == ("the", "raptors", "won")
    assert tally.bad_lines == 0


def test_parse_catalog_empty_stream():
    catalog, tally = parse_catalog(io.StringIO(""))
    assert catalog == {}
    assert tally.to_dict() == {"bad_lines": 0, "unknown_items": 0}


def test_parse_catalog_duplicate_last_wins():
    text = "N1\tsports\t\tfirst\t\nN1\tnews\t\tsecond\t\n"
    catalog, tally = parse_catalog(io.StringIO(text))
    assert len(catalog) == 1
    assert catalog["N1"].category == "news"
    assert tally.duplicates == 1


def test_parse_catalog_bad_lines_are_tallied():
    text = "N1\tsports\n\tsports\t\tt\ts\nN2\tnews\t\tok\tfine\n"
    catalog, tally = parse_catalog(io.StringIO(text))
    assert list(catalog) == ["N2"]
    assert tally.bad_lines == 2
    assert tally.messages[0].startswith("line 1")


def test_parse_catalog_header_flag_skips_first_line():
    text = "item\tcat\tsub\ttitle\tsnippet\nN1\tsports\t\tt\ts\n"
    catalog, _ = parse_catalog(io.StringIO(text), header=True)
    assert list(catalog) == ["N1"]


def test_tokenize_splits_on_non_alphanumeric_runs():
    assert tokenize("Hello,  World--42!") == ["hello", "world", "42"]
    assert all(tokenize("a__b  c"))


def test_parse_interactions_rating_and_click():
    text = "u1\tN1\t1573800123\trating\t4.0\ts1\nu1\tN2\t1573800200\tclick\t\ts1\n"
    rows, tally = parse_interactions(io.StringIO(text))
    assert rows[0] == Interaction("u1", "N1", 1573800123, 4.0, "s1")
    assert rows[1].is_click and rows[1].session_id == "s1"
    assert tally.bad_lines == 0


@pytest.mark.parametrize("line", [
    "u1\tN1\t1573800123\tview\t\ts1",
    "u1\tN1\tnoon\tclick\t\ts1",
    "u1\tN1\t1573800123\trating\t7.5\ts1",
    "u1\tN1\t1573800123",
])
def test_parse_interactions_rejects_bad_lines(line):
    rows, tally = parse_interactions(io.StringIO(line + "\n"), (1.0, 5.0))
    assert rows == []
    assert tally.bad_lines == 1


def test_error_tally_json():
    _, tally = parse_interactions(io.StringIO("u1\tN1\tx\tclick\t\t\n"))
    assert tally.to_json() == '{"bad_lines": 1, "unknown_items": 0}'


# -- calendar -------------------------------------------------------------------

def test_decompose_epoch():
    assert as_tuple(decompose_timestamp(0)) == (1970, 1, 3, 0, 0, 0)


def test_decompose_known_friday():
    # 2019-11-15T07:42:03Z, checked against time.gmtime and the civil-date oracle
    assert oracle_decompose(1573803723) == (2019, 11, 4, 7, 42, 3)
    g = time.gmtime(1573803723)
    assert (g.tm_year, g.tm_mon, g.tm_wday, g.tm_hour, g.tm_min, g.tm_sec) == (2019, 11, 4, 7, 42, 3)
    assert as_tuple(decompose_timestamp(1573803723)) == (2019, 11, 4, 7, 42, 3)


def test_decompose_is_deterministic():
    assert decompose_timestamp(1573803723) == decompose_timestamp(1573803723)


def test_decompose_negative_raises():
    with pytest.raises(ValueError):
        decompose_timestamp(-1)


@settings(max_examples=300)
@given(st.integers(min_value=0, max_value=2 ** 36))
def test_decompose_matches_calendar_oracle(ts):
    expected = oracle_decompose(ts)
    assert as_tuple(decompose_timestamp(ts)) == expected
    parts = decompose_many([ts])
    assert tuple(int(parts[g][0]) for g in
                 ("year", "month", "day_of_week", "hour", "minute", "second")) == expected


# -- sentiment --------------------------------------------------------------------

@pytest.mark.parametrize("s, r", [(0.0, 3.0), (1.0, 5.0), (-0.5, 2.0), (-1.0, 1.0), (3.0, 5.0), (-9, 1.0)])
def test_sentiment_to_rating(s, r):
    assert sentiment_to_rating(s) == r


def test_sentiment_non_finite_raises():
    with pytest.raises(ValueError):
        sentiment_to_rating(float("nan"))


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_sentiment_monotone_onto_scale(a, b):
    lo, hi = sorted((a, b))
    assert 1.0 <= sentiment_to_rating(lo) <= sentiment_to_rating(hi) <= 5.0


# -- sessions ---------------------------------------------------------------------

def clicks(user, stamps, sid=None):
    return [Interaction(user, f"N{n}", t, None, sid) for n, t in enumerate(stamps)]


def test_sessionize_gap_rule():
    sessions = sessionize(clicks("u", [0, 100, 5000]), 1800)
    assert [[x.timestamp for x in s.interactions] for s in sessions] == [[0, 100], [5000]]


def test_sessionize_single_interaction():
    sessions = sessionize(clicks("u", [42]))
    assert len(sessions) == 1 and len(sessions[0].interactions) == 1


def test_sessionize_explicit_id_overrides_gaps():
    sessions = sessionize(clicks("u", [0, 10000, 99999], sid="s1"), 1800)
    assert len(sessions) == 1
    assert len(sessions[0].interactions) == 3


def test_sessionize_stable_on_ties():
    xs = [Interaction("u", "B", 5), Interaction("u", "A", 5), Interaction("u", "C", 1)]
    (s,) = sessionize(xs)
    assert [x.item_id for x in s.interactions] == ["C", "B", "A"]


@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 20000)), min_size=1, max_size=40),
       st.integers(1, 5000))
def test_sessionize_partitions_input(events, gap):
    xs = [Interaction(u, f"N{n}", t) for n, (u, t) in enumerate(events)]
    sessions = sessionize(xs, gap)
    out = sorted(x.item_id for s in sessions for x in s.interactions)
    assert out == sorted(x.item_id for x in xs)
    for s in sessions:
        assert len({x.user_id for x in s.interactions}) == 1
        ts = [x.timestamp for x in s.interactions]
        assert ts == sorted(ts)
        assert all(b - a <= gap for a, b in zip(ts, ts[1:]))


# -- splits ---------------------------------------------------------------------------

def events(stamps):
    return [Interaction("u", f"N{n}", t) for n, t in enumerate(stamps)]


def brute_force_cut(stamps, fraction):
    """Smallest observed t with share(ts <= t) >= fraction, by enumeration."""
    for t in sorted(set(stamps)):
        if sum(1 for s in stamps if s <= t) / len(stamps) >= fraction:
            return t


def test_split_distinct_integers():
    train, test, cut = time_based_split(events(range(1, 11)), 0.8)
    assert [x.timestamp for x in train] == list(range(1, 9))
    assert [x.timestamp for x in test] == [9, 10]
    assert cut == 8


def test_split_with_ties():
    stamps = [1, 1, 1, 9]
    assert brute_force_cut(stamps, 0.5) == 1
    train, test, cut = time_based_split(events(stamps), 0.5)
    assert [x.timestamp for x in train] == [1, 1, 1]
    assert [x.timestamp for x in test] == [9]


def test_split_keeps_test_non_empty():
    train, test, _ = time_based_split(events([1, 2]), 0.99)
    assert [x.timestamp for x in train] == [1]
    assert [x.timestamp for x in test] == [2]


def test_split_all_equal_raises():
    with pytest.raises(DataError):
        time_based_split(events([5, 5, 5]), 0.5)


def test_split_fraction_bounds():
    with pytest.raises(ValueError):
        split_timestamp_for([1, 2, 3], 1.0)


@given(st.lists(st.integers(0, 50), min_size=2, max_size=60), st.floats(0.01, 0.99))
def test_split_soundness(stamps, fraction):
    if len(set(stamps)) < 2:
        return
    train, test, cut = time_based_split(events(stamps), fraction)
    assert len(train) + len(test) == len(stamps)
    assert train and test
    assert max(x.timestamp for x in train) <= cut < min(x.timestamp for x in test)
    expected = brute_force_cut(stamps, fraction)
    if expected < max(stamps):
        assert cut == expected


# -- profile ------------------------------------------------------------------------------

def test_profile_empty():
    prof = profile_time_series([])
    assert prof["hour"] == [0] * 24 and prof["day_of_week"] == [0] * 7 and prof["month"] == {}


def test_profile_counts_hour():
    at_19 = 19 * 3600
    prof = profile_time_series(events([at_19, at_19 + 60, at_19 + 86400]))
    assert prof["hour"][19] == 3
    assert sum(prof["hour"]) == 3


@given(st.lists(st.integers(0, 2 ** 33), max_size=50))
def test_profile_conserves_counts(stamps):
    prof = profile_time_series(events(stamps))
    assert sum(prof["hour"]) == sum(prof["day_of_week"]) == sum(prof["month"].values()) == len(stamps)
    assert list(prof["month"]) == sorted(prof["month"])
