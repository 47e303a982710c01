from decimal import Decimal

import pytest

from livefed import scenario as S
from livefed.coordinator import Coordinator
from livefed.engine import build_plan, eval_expr, plan_text, rewrite_over_views
from livefed.engine import plan as P
from livefed.engine.catalog import LocalCatalog, split_view_url
from livefed.dsl import parse, parse_expr
from livefed.errors import MalformedUrl, QueryTypeError, UnknownRelation
from livefed.session import Session
from livefed.store import Database
from livefed.wire import LocalTransport


@pytest.fixture
def hosp():
    db = Database.memory("Hospital")
    Session(db).run_script(S.HOSPITAL_SCRIPT)
    return Session(db)


def rows(sess, sql):
    return sorted(sess.query(sql)[0].rows)


def test_view_e_groups(hosp):
    got = [(r[0], r[1], r[5]) for r in rows(hosp, "select * from E")]
    assert got == [(1, 17, 1), (2, 6, 2), (2, 11, 1), (3, 4, 1)]


def test_projection_filter_and_arith(hosp):
    assert rows(hosp, "select ID * 10 + 1 as x from D where rCode = 2 and ID > 1") == [(21,), (51,)]


def test_natural_join_and_aggregates():
    s = Session(Database.memory("J"))
    s.run_script("""create table a (k int, x int, primary key (k));
    create table b (k int, y int, primary key (k));
    insert into a values (1, 10), (2, 20), (3, 30);
    insert into b values (2, 5), (3, 6), (4, 7);""")
    assert rows(s, "select * from a natural join b") == [(2, 20, 5), (3, 30, 6)]
    assert rows(s, "select count(*) as n, sum(x) as s, min(y) as lo, max(y) as hi from a natural join b") == [(2, 50, 5, 6)]
    assert rows(s, "select a.k as l, b.k as r from a inner join b on a.k < b.k where a.k = 3") == [(3, 4)]
    assert len(rows(s, "select * from a cross join b")) == 9


def test_unsupported_aggregate_rejected(hosp):
    with pytest.raises(QueryTypeError):
        hosp.query("select avg(ID) as m from D")


def test_integer_division_is_exact(hosp):
    assert eval_expr(parse_expr("1 / 3")) == Decimal(1) / Decimal(3)


def test_date_arithmetic():
    assert eval_expr(parse_expr("extract(year from (date'2014-10-06' - date'2007-10-10'))")) == 6
    assert eval_expr(parse_expr("extract(year from (date'2014-10-06' - date'2007-10-06'))")) == 7


def test_null_semantics():
    assert eval_expr(parse_expr("null = 1")) is None
    assert eval_expr(parse_expr("null is null")) is True


def test_unknown_relation_and_type_errors(hosp):
    with pytest.raises(UnknownRelation):
        hosp.query("select * from nope")
    with pytest.raises(QueryTypeError):
        hosp.query("select name + 1 from D")
    with pytest.raises(QueryTypeError):
        hosp.query("select * from D where count(*) > 1")


def test_key_predicate_becomes_keyscan(hosp):
    (st,) = parse("select name from D where ID = 3")
    p = build_plan(st.select, LocalCatalog(hosp.db.snapshot()))
    assert P.leaves(p, P.KeyScan)
    (st,) = parse("select name from D where rCode = 3")
    p = build_plan(st.select, LocalCatalog(hosp.db.snapshot()))
    assert not P.leaves(p, P.KeyScan) and P.leaves(p, P.PredScan)


def test_global_plan_pushes_predicates_to_sources():
    c = Coordinator("Requester", LocalTransport())
    c.run_script(S.REQUESTER_SCRIPT)
    subs, _ = rewrite_over_views(c.plan(S.PERCENTAGE_QUERY))
    where = {sq.url.rsplit("/", 1)[-1]: sq.where for sq in subs}
    assert where["K"] is None
    assert parse_expr(where["E"]) == parse_expr("age < 10")
    assert "RestGet" in plan_text(c.plan(S.PERCENTAGE_QUERY))


def test_split_view_url():
    assert split_view_url("http://servD1:8180/Hospital/Hospital/E") == ("http://servD1:8180", "Hospital", "Hospital", "E")
    with pytest.raises(MalformedUrl):
        split_view_url("ftp://x/y")
