import json

import pytest

from conftest import build_federation
from livefed import scenario as S
from livefed.coordinator import FRESH, STALE, UNKNOWN
from livefed.engine.catalog import RestViewDef
from livefed.errors import DuplicateView, NotUpdatable, SchemaMismatch, SourceUnavailable, StaleAfterRetry, StaleRead


def test_totals_query(fed):
    rows = sorted(fed.coord.execute_global(S.TOTALS_QUERY).rows)
    assert rows == [("Central Freetown", "bacterial infection", 1), ("East End Freetown", "Ebola", 3),
                    ("West End Freetown", "Ebola", 1)]


def test_duplicate_view_rejected(fed):
    with pytest.raises(DuplicateView):
        fed.coord.run_script("create view V1 of (rCode int) as get 'http://servD1:8180/Hospital/Hospital/E'")


def test_schema_mismatch_detected(fed):
    fed.coord.run_script("create view Bad of (rCode int, location int) as get 'http://servD2:8180/Statistics/Statistics/K'")
    with pytest.raises(SchemaMismatch):
        fed.coord.execute_global("select * from Bad")


def test_source_down(fed):
    fed.statistics.down = True
    with pytest.raises(SourceUnavailable):
        fed.coord.execute_global(S.PERCENTAGE_QUERY)


def test_check_still_current(fed):
    v = fed.coord.execute_global(S.PERCENTAGE_QUERY).validator
    assert fed.coord.check_still_current(v).fresh
    fed.hospital.session.run_script("update D set treatment = 'x' where ID = 1")
    f = fed.coord.check_still_current(v)
    assert f.sources == {"Hospital": STALE, "Statistics": FRESH} and f.stale == ["Hospital"]
    fed.statistics.down = True
    assert fed.coord.check_still_current(v).sources["Statistics"] == UNKNOWN


def test_revalidation_retries_then_gives_up(fed):
    calls = {"n": 0}

    def churn():
        calls["n"] += 1
        fed.hospital.session.run_script(f"update D set treatment = 't{calls['n']}' where ID = 1")

    real = fed.coord.fetch

    def fetch(sq, force=False):
        out = real(sq, force)
        if "Statistics" in sq.url:  # fetched after the hospital fragment
            churn()
        return out

    fed.coord.fetch = fetch
    with pytest.raises(StaleRead):
        fed.coord.execute_global(S.PERCENTAGE_QUERY)
    assert calls["n"] == 3


def test_one_change_then_settles(fed):
    state = {"done": False}
    real = fed.coord.fetch

    def fetch(sq, force=False):
        out = real(sq, force)
        if "Statistics" in sq.url and not state["done"]:
            state["done"] = True
            fed.hospital.session.run_script("update D set treatment = 'q' where ID = 1")
        return out

    fed.coord.fetch = fetch
    res = fed.coord.execute_global(S.PERCENTAGE_QUERY)
    assert res.attempts == 2 and len(res.rows) == 2


def test_update_through_global_view(fed):
    assert fed.coord.write_through(S.UPDATE_STATEMENT) == 1
    rows = fed.coord.execute_global("select inhabitants, under10 from V2 where rCode = 3").rows
    assert rows == [(199000, 49000)]


def test_non_updatable_targets(fed):
    with pytest.raises(NotUpdatable):
        fed.coord.write_through("delete from V where rCode = 3")
    with pytest.raises(NotUpdatable):
        fed.coord.write_through("update V set patients = 1 where rCode = 3")  # E aggregates
    with pytest.raises(NotUpdatable):
        fed.coord.write_through("update V set inhabitants = 1 where age = 6")  # predicate on the other source


def test_write_retry_after_concurrent_change(fed):
    real = fed.transport._send
    state = {"n": 0}

    def send(method, url, headers, body):
        if method == "PUT" and state["n"] == 0:
            state["n"] += 1
            fed.statistics.session.run_script("update H set lastUpdated = date'2015-01-01' where rCode = 3")
        return real(method, url, headers, body)

    fed.transport._send = send
    assert fed.coord.write_through(S.UPDATE_STATEMENT) == 1


def test_write_gives_up_after_second_conflict(fed):
    real = fed.transport._send

    def send(method, url, headers, body):
        if method == "PUT":
            fed.statistics.session.run_script("update H set lastUpdated = date'2015-01-01' where rCode = 3")
        return real(method, url, headers, body)

    fed.transport._send = send
    with pytest.raises(StaleAfterRetry):
        fed.coord.write_through(S.UPDATE_STATEMENT)


def test_http_surface(fed):
    c = fed.coord
    r = c.handle("POST", "/Requester/query", {}, S.PERCENTAGE_QUERY.encode())
    obj = r.json()
    assert r.status == 200 and len(obj["rows"]) == 2 and obj["rowValidators"]
    assert c.handle("POST", "/Requester/query", {}, b"select from").status == 400
    r = c.handle("GET", "/Requester/Requester/V2?where=rCode%20%3D%201", {}, b"")
    assert r.status == 200 and len(r.json()["rows"]) == 1
    assert c.handle("GET", "/Requester/Requester/V2?where=rCode%20%3D%201", {"if-none-match": r.header("ETag")}, b"").status == 304
    v = r.json()["etag"]
    res = c.handle("POST", "/Requester/validate", {}, json.dumps([v]).encode()).json()
    assert res["results"] == [{"Statistics": "fresh"}]
    assert c.handle("GET", "/Requester/txn/x", {}, b"").json()["decision"] == "unknown"


def test_requester_can_be_a_source(fed):
    """A global view published by one requester can be read by another."""
    from livefed.coordinator import Coordinator

    outer = Coordinator("Outer", fed.transport)
    outer.run_script("create view G of (rCode int, location char, inhabitants int, under10 int, lastUpdated date) "
                     "as get 'http://requester:9000/Requester/Requester/V2'")
    rows = outer.execute_global("select location from G where rCode = 2").rows
    assert rows == [("East End Freetown",)]


def test_register_view_programmatically(fed):
    fed.coord.register_view(RestViewDef("K2", (("rCode", fed.coord.rest_views["v2"].columns[0][1]),), "http://servD2:8180/Statistics/Statistics/K"))
    with pytest.raises(SchemaMismatch):
        fed.coord.execute_global("select * from K2")
