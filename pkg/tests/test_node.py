import json

import pytest

from livefed import scenario as S
from livefed.node import ContractorNode, NodeConfig
from livefed.wire import unquote_etag


@pytest.fixture
def node():
    n = ContractorNode(NodeConfig("Statistics"))
    n.session.run_script(S.STATISTICS_SCRIPT)
    return n


def call(node, method, target, headers=None, body=None):
    if isinstance(body, (dict, list)):
        body = json.dumps(body).encode()
    return node.handle(method, target, headers or {}, body or b"")


def test_get_view_and_not_modified(node):
    r = call(node, "GET", "/Statistics/Statistics/K")
    assert r.status == 200
    obj = r.json()
    assert [c["name"] for c in obj["columns"]] == ["rCode", "location", "inhabitants", "under10", "lastUpdated"]
    assert len(obj["rows"]) == 3 and obj["key"] == ["rCode"]
    r2 = call(node, "GET", "/Statistics/Statistics/K", {"If-None-Match": r.header("ETag")})
    assert r2.status == 304 and r2.body == b""


def test_where_rename_and_row_validators(node):
    r = call(node, "GET", "/Statistics/Statistics/K?where=code%20%3D%202&as=code,loc,inh,u10,upd&rc=1")
    obj = r.json()
    assert [c["name"] for c in obj["columns"]] == ["code", "loc", "inh", "u10", "upd"]
    assert obj["rows"][0][:2] == [2, "East End Freetown"]
    assert obj["rowValidators"] == [r.etag] and ":" in r.etag


def test_row_path(node):
    r = call(node, "GET", "/Statistics/Statistics/K/3")
    assert r.status == 200 and r.json()["rows"][0][0] == 3
    assert call(node, "GET", "/Statistics/Statistics/K/9").status == 404


def test_put_requires_if_match(node):
    assert call(node, "PUT", "/Statistics/Statistics/K/3", body={"inhabitants": 1}).status == 428


def test_put_with_row_validator(node):
    tag = call(node, "GET", "/Statistics/Statistics/K/3").etag
    r = call(node, "PUT", "/Statistics/Statistics/K/3", {"If-Match": f'"{tag}"'}, {"inhabitants": 199000})
    assert r.status == 204 and r.etag != tag
    # The old validator no longer matches.
    r = call(node, "PUT", "/Statistics/Statistics/K/3", {"If-Match": f'"{tag}"'}, {"inhabitants": 1})
    assert r.status == 412
    assert node.session.query("select inhabitants from H where rCode = 3")[0].rows == [(199000,)]


def test_validator_must_cover_row(node):
    tag = call(node, "GET", "/Statistics/Statistics/K/2").etag
    r = call(node, "DELETE", "/Statistics/Statistics/K/3", {"If-Match": f'"{tag}"'})
    assert r.status == 412


def test_table_validator_covers_rows(node):
    tag = call(node, "GET", "/Statistics/Statistics/K").etag
    assert call(node, "DELETE", "/Statistics/Statistics/K/1", {"If-Match": f'"{tag}"'}).status == 204
    # The table moved on, so the same table validator is now stale.
    assert call(node, "DELETE", "/Statistics/Statistics/K/2", {"If-Match": f'"{tag}"'}).status == 412


def test_post_insert(node):
    r = call(node, "POST", "/Statistics/Statistics/K", {}, {"rCode": 4, "location": "Kenema"})
    assert r.status == 201
    assert call(node, "POST", "/Statistics/Statistics/K", {}, {"rCode": 4}).status == 409


def test_aggregate_view_not_updatable():
    n = ContractorNode(NodeConfig("Hospital"))
    n.session.run_script(S.HOSPITAL_SCRIPT)
    tag = call(n, "GET", "/Hospital/Hospital/E").etag
    assert call(n, "DELETE", "/Hospital/Hospital/E/1", {"If-Match": f'"{tag}"'}).status == 405


def test_validate_endpoint(node):
    row = call(node, "GET", "/Statistics/Statistics/K/2").etag
    table = call(node, "GET", "/Statistics/Statistics/K").etag
    node.session.run_script("update H set under10 = 1 where rCode = 1")
    r = call(node, "POST", "/Statistics/validate", body=[row, table])
    res = r.json()
    assert [x["fresh"] for x in res["results"]] == [True, False] and res["fresh"] is False
    assert call(node, "POST", "/Statistics/validate", body=["Other:1:1"]).status == 400
    assert call(node, "POST", "/Statistics/validate", body=["junk"]).status == 400


def test_unpublished_and_permissions():
    cfg = NodeConfig("Statistics", views=["K"], permissions={"R": {"K": ["read"]}})
    n = ContractorNode(cfg)
    n.session.run_script(S.STATISTICS_SCRIPT)
    assert call(n, "GET", "/Statistics/Statistics/H", {"X-Requester": "R"}).status == 404
    assert call(n, "GET", "/Statistics/Statistics/K", {"X-Requester": "R"}).status == 200
    assert call(n, "GET", "/Statistics/Statistics/K", {"X-Requester": "Q"}).status == 403
    assert call(n, "POST", "/Statistics/sql", {"X-Requester": "R"}, b"select * from H").status == 403


def test_sql_endpoint_reports_errors(node):
    r = call(node, "POST", "/Statistics/sql", {}, b"insert into H values (9, 'x', 1, 1, 1, 1, 1, null); select from")
    assert r.status == 400 and r.json()["position"] is not None


def test_prepare_commit_flow(node):
    tag = call(node, "GET", "/Statistics/Statistics/K/1").etag
    body = {"readChecks": [tag], "writes": [{"op": "update", "view": "K", "key": {"RCODE": 1}, "values": {"under10": 5}}]}
    assert call(node, "POST", "/Statistics/txn/t1/prepare", body=body).json()["vote"] == "yes"
    assert call(node, "GET", "/Statistics/txn/t1").json()["state"] == "prepared"
    # Pinned row refuses direct writes until the decision arrives.
    fresh = call(node, "GET", "/Statistics/Statistics/K/1").etag
    assert call(node, "PUT", "/Statistics/Statistics/K/1", {"If-Match": f'"{fresh}"'}, {"under10": 9}).status == 409
    r = call(node, "POST", "/Statistics/txn/t1/commit")
    assert r.status == 200 and r.json()["validators"]
    assert call(node, "GET", "/Statistics/txn/t1").json()["state"] == "committed"
    # A second prepare with the old validator is refused.
    body["writes"][0]["values"] = {"under10": 6}
    r = call(node, "POST", "/Statistics/txn/t2/prepare", body=body)
    assert r.status == 409 and r.json()["stale"] == [tag]


def test_crash_and_restart_keep_intents(node):
    body = {"readChecks": [], "writes": [{"op": "delete", "view": "K", "key": {"rCode": 2}}]}
    node.faults["after_vote"] = "crash"
    assert call(node, "POST", "/Statistics/txn/t9/prepare", body=body) is None
    assert node.down
    node.restart()
    assert node.txn_state("t9") == "prepared"
    assert call(node, "POST", "/Statistics/txn/t9/abort").status == 200
    assert node.session.query("select * from H where rCode = 2")[0].rows


def test_config_files(tmp_path, monkeypatch):
    p = tmp_path / "n.conf"
    p.write_text("db_name = Hospital\nport = 9001\nviews = E, D\n")
    cfg = NodeConfig.from_file(p)
    assert (cfg.db_name, cfg.port, cfg.views) == ("Hospital", 9001, ["E", "D"])
    j = tmp_path / "n.json"
    j.write_text(json.dumps({"db_name": "X", "port": 1}))
    assert NodeConfig.from_file(j).port == 1
    assert NodeConfig("A").with_env({"LIVEFED_PORT": "7", "LIVEFED_DB": "a.log"}).port == 7
    j.write_text(json.dumps({"db_name": "X", "bogus": 1}))
    with pytest.raises(ValueError):
        NodeConfig.from_file(j)
