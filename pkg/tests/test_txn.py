import pytest

from conftest import build_federation
from livefed.errors import AlreadyFinished, QueryError
from livefed.txn import Aborted, Committed, CoordinatorCrashed, DecisionLog, FailureKind, TransactionManager, TxnState


def hd_treatment(fed, id_=1):
    return fed.hospital.session.query(f"select treatment from D where ID = {id_}")[0].rows[0][0]


def test_read_records_validators(txfed):
    tm = txfed.tm
    ctx = tm.begin()
    rs = tm.read(ctx, "select * from HH where rCode = 2")
    assert rs.rows and ctx.read_set[0][0] == "Statistics"
    assert tm.precheck(ctx) == {ctx.read_set[0][1]: "fresh"}


def test_cross_source_commit(txfed):
    tm = txfed.tm
    ctx = tm.begin()
    tm.read(ctx, "select * from HD where ID = 2")
    tm.stage_write(ctx, "HD", "update", {"ID": 2}, {"treatment": "rest"})
    tm.stage_write(ctx, "HH", "insert", None, {"rCode": 9, "location": "Bo"})
    out = tm.commit(ctx)
    assert isinstance(out, Committed) and out.committed and not out.pending
    assert set(out.validators) == {"Hospital", "Statistics"}
    assert hd_treatment(txfed, 2) == "rest"
    assert ctx.state is TxnState.COMMITTED
    with pytest.raises(AlreadyFinished):
        tm.commit(ctx)
    recs = [r["k"] for r in tm.log.records() if r["tid"] == ctx.tid]
    assert recs == ["prepare", "decision", "done"]


def test_read_only_source_is_validated(txfed):
    tm = txfed.tm
    ctx = tm.begin()
    tm.read(ctx, "select * from HH where rCode = 1")
    tm.stage_write(ctx, "HD", "update", {"ID": 1}, {"treatment": "x"})
    txfed.statistics.session.run_script("update H set under10 = 1 where rCode = 1")
    out = tm.commit(ctx)
    assert isinstance(out, Aborted) and out.kind is FailureKind.CONCURRENT_UPDATE
    assert hd_treatment(txfed) == "IV fluid, electrolytes"
    assert not txfed.hospital.db.intents


def test_stale_at_start(txfed):
    tm = txfed.tm
    ctx = tm.begin()
    tm.read(ctx, "select * from HH where rCode = 1")
    txfed.statistics.session.run_script("update H set under10 = 1 where rCode = 1")
    assert "stale" in tm.precheck(ctx).values()
    tm.stage_write(ctx, "HH", "update", {"rCode": 1}, {"under10": 2})
    assert tm.commit(ctx).kind is FailureKind.STALE_AT_START


def test_unavailable_participant_aborts(txfed):
    tm = txfed.tm
    ctx = tm.begin()
    tm.stage_write(ctx, "HD", "update", {"ID": 1}, {"treatment": "x"})
    tm.stage_write(ctx, "HH", "update", {"rCode": 1}, {"under10": 2})
    txfed.statistics.down = True
    out = tm.commit(ctx)
    assert isinstance(out, Aborted) and "unavailable" in out.reason
    assert not txfed.hospital.db.intents
    assert tm.decision(ctx.tid) == "abort"


def test_bad_staging(txfed):
    tm = txfed.tm
    ctx = tm.begin()
    with pytest.raises(QueryError):
        tm.stage_write(ctx, "V", "update", {"rCode": 1}, {})
    with pytest.raises(QueryError):
        tm.stage_write(ctx, "HD", "merge", {"ID": 1}, {})
    with pytest.raises(QueryError):
        tm.commit(ctx)


def test_coordinator_crash_recovered_from_log(tmp_path):
    fed = build_federation(str(tmp_path), with_txn=True, table_views=True)
    tm = fed.tm
    ctx = tm.begin()
    tm.stage_write(ctx, "HD", "update", {"ID": 1}, {"treatment": "z"})
    tm.stage_write(ctx, "HH", "update", {"rCode": 1}, {"under10": 7})
    tm.faults["after_decision"] = True
    with pytest.raises(CoordinatorCrashed):
        tm.commit(ctx)
    assert fed.hospital.txn_state(ctx.tid) == "prepared"
    again = TransactionManager(fed.coord, str(tmp_path / "decisions.log"))
    assert again.recover() == {ctx.tid: "commit"}
    assert hd_treatment(fed) == "z"
    assert again.recover() == {}


def test_participant_asks_coordinator(tmp_path):
    fed = build_federation(str(tmp_path), with_txn=True, table_views=True)
    tm = fed.tm
    ctx = tm.begin()
    tm.stage_write(ctx, "HD", "update", {"ID": 1}, {"treatment": "q"})
    tm.stage_write(ctx, "HH", "update", {"rCode": 1}, {"under10": 7})
    fed.hospital.faults["after_apply"] = "crash"
    fed.statistics.faults["after_vote"] = "crash_after_reply"
    out = tm.commit(ctx)
    assert isinstance(out, Committed) and set(out.pending) == {"Hospital", "Statistics"}
    fed.hospital.restart()
    fed.statistics.restart()
    assert fed.statistics.resolve_in_doubt(timeout=0) == {ctx.tid: "commit"}
    tm.retry_pending()
    assert ctx.tid not in tm.pending
    assert hd_treatment(fed) == "q"


def test_prepare_without_decision_becomes_abort(tmp_path):
    log = DecisionLog(tmp_path / "d.log")
    log.append({"k": "prepare", "tid": "R-1-1", "participants": []})
    fed = build_federation(str(tmp_path), table_views=True)
    tm = TransactionManager(fed.coord, log=DecisionLog(tmp_path / "d.log"))
    assert tm.recover() == {"R-1-1": "abort"}
    assert tm.decision("R-1-1") == "abort"


def test_tid_format(txfed):
    tid = txfed.tm.begin().tid
    name, ms, n = tid.split("-")
    assert name == "Requester" and ms.isdigit() and n.isdigit()
