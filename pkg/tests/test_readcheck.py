import pytest
from hypothesis import given
from hypothesis import strategies as st

from livefed import readcheck as RC
from livefed import scenario as S
from livefed.errors import MalformedValidator
from livefed.session import Session
from livefed.store import Database, Rvv


@pytest.fixture
def stats():
    db = Database.memory("Statistics")
    Session(db).run_script(S.STATISTICS_SCRIPT)
    return db


def vec(db, sql):
    return Session(db).query(sql)[1]


def test_key_lookup_gives_row_stamp(stats):
    v = vec(stats, "select * from H where rCode = 2")
    (e,) = v
    assert isinstance(e, RC.RowStamp) and e.rvv == stats.row_rvv("H", 2)


def test_disjunction_of_keys_gives_row_stamps(stats):
    v = vec(stats, "select * from H where rCode = 1 or rCode = 3")
    assert [type(e) for e in v] == [RC.RowStamp, RC.RowStamp]


def test_missing_key_watches_table(stats):
    (e,) = vec(stats, "select * from H where rCode = 9")
    assert isinstance(e, RC.TableStamp)


def test_scan_gives_table_stamp(stats):
    (e,) = vec(stats, "select * from H where inhabitants > 1")
    assert isinstance(e, RC.TableStamp) and e.db == "Statistics"
    assert RC.render([e]) == f"Statistics|{e.position}|[{e.table_id}-0]"


def test_view_over_key_still_row_level(stats):
    (e,) = vec(stats, "select * from K where rCode = 1")
    assert isinstance(e, RC.RowStamp)


def test_render_parse_round_trip(stats):
    v = RC.combine(vec(stats, "select * from H where rCode = 1"), vec(stats, "select * from H"))
    text = RC.render(v)
    assert RC.parse(text) == RC.parse(f'"{text}"')
    assert RC.render(RC.parse(text)) == text


def test_combine_dedups():
    a = RC.ReadCheckVector((RC.RowStamp(Rvv("X", 1, 1)),))
    assert len(RC.combine(a, a)) == 1


def test_row_validator_blanks_aggregates():
    text = RC.render_row([RC.Absent("A"), RC.RowStamp(Rvv("B", 5, 2))])
    assert text == ",B:5:2"
    assert RC.parse_row(text) == [None, RC.RowStamp(Rvv("B", 5, 2))]


def test_split_sources():
    got = RC.split_sources("A|9|[3-0];B:4:1;A:7:2")
    assert got == {"A": "A|9|[3-0];A:7:2", "B": "B:4:1"}


@pytest.mark.parametrize("bad", ["x", "A:1", "A|1|[2-1]", "A|x|[1-0]", "A:1:2;;"])
def test_malformed(bad):
    with pytest.raises(MalformedValidator):
        RC.parse(bad)


def test_validation_row_and_table(stats):
    row = vec(stats, "select * from H where rCode = 2")
    table = vec(stats, "select * from H where inhabitants > 1")
    Session(stats).run_script("update H set inhabitants = 1 where rCode = 1")
    assert RC.validate(row, stats).fresh
    assert not RC.validate(table, stats).fresh
    Session(stats).run_script("delete from H where rCode = 2")
    assert RC.validate(row, stats).stale


def test_foreign_db_entries_are_stale(stats):
    assert not RC.entry_is_fresh(RC.RowStamp(Rvv("Other", 1, 1)), stats)


def test_fresh_after_parse_round_trip(stats):
    v = vec(stats, "select * from H where rCode = 2")
    assert RC.validate(RC.parse(RC.render(v)), stats).fresh


@given(st.lists(st.tuples(st.sampled_from("AB"), st.integers(0, 999), st.integers(0, 99)), max_size=6))
def test_rvv_lists_round_trip(items):
    v = RC.ReadCheckVector(tuple(RC.RowStamp(Rvv(d, p, t)) for d, p, t in items))
    assert RC.parse(RC.render(v)) == v
