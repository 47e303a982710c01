import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from livefed.errors import CorruptLog, DuplicateKey, NotFound, SerializationConflict, TxnClosed, TypeMismatch
from livefed.store import Database, Rvv, iter_records, record_boundaries, recover
from livefed.values import ColumnType as T


def make(name="S", path=None):
    db = Database.open(path, name) if path else Database.memory(name)
    db.create_table("t", [("k", T.INT), ("v", T.CHAR)], ["k"])
    return db


def put(db, *rows):
    tx = db.begin()
    for r in rows:
        tx.insert("t", r)
    return tx.commit()


def test_rvv_string_form():
    assert str(Rvv("S", 12, 3)) == "S:12:3"


def test_insert_assigns_row_and_table_stamps():
    db = make()
    n = put(db, (1, "a"), (2, "b"))
    r1 = db.row_rvv("t", 1)
    assert r1.txn_id == n and r1.db_name == "S"
    assert db.row_rvv("t", 2).log_position != r1.log_position
    assert db.table_rvv("t").txn_id == n


def test_update_changes_only_touched_row():
    db = make()
    put(db, (1, "a"), (2, "b"))
    before = db.row_rvv("t", 2)
    tx = db.begin()
    tx.update("t", 1, {"v": "z"})
    tx.commit()
    assert db.row_rvv("t", 2) == before
    assert db.snapshot().row(db.table("t").table_id, (1,)).values == (1, "z")


def test_expect_mismatch_is_a_conflict():
    db = make()
    put(db, (1, "a"))
    old = db.row_rvv("t", 1)
    tx = db.begin()
    tx.update("t", 1, {"v": "b"})
    tx.commit()
    tx = db.begin()
    tx.update("t", 1, {"v": "c"}, expect=old)
    with pytest.raises(SerializationConflict):
        tx.commit()
    assert tx.state == "aborted"


def test_duplicate_and_missing_keys():
    db = make()
    put(db, (1, "a"))
    tx = db.begin()
    with pytest.raises(DuplicateKey):
        tx.insert("t", (1, "x"))
    with pytest.raises(NotFound):
        tx.delete("t", 9)
    with pytest.raises(TypeMismatch):
        tx.update("t", 1, {"k": 4})


def test_snapshot_isolation_of_open_transaction():
    db = make()
    put(db, (1, "a"))
    tx = db.begin()
    put(db, (2, "b"))
    assert tx.snapshot.row(db.table("t").table_id, (2,)) is None


def test_closed_transaction_rejects_work():
    db = make()
    tx = db.begin()
    tx.insert("t", (1, "a"))
    tx.commit()
    with pytest.raises(TxnClosed):
        tx.insert("t", (2, "b"))


def test_reopen_from_file(tmp_path):
    p = tmp_path / "s.log"
    db = make(path=p)
    put(db, (1, "a"))
    db.close()
    again = Database.open(p)
    assert again.name == "S"
    assert again.row_rvv("t", 1) == db.row_rvv("t", 1)
    with pytest.raises(CorruptLog):
        Database.open(p, "Other")


def test_prepare_commit_and_abort():
    db = make()
    put(db, (1, "a"))
    tx = db.begin()
    tx.update("t", 1, {"v": "b"})
    db.prepare("x1", tx.changes, [])
    assert "x1" in db.intents
    # A competing write on the pinned row is refused.
    other = db.begin()
    other.update("t", 1, {"v": "c"})
    with pytest.raises(SerializationConflict):
        other.commit()
    n = db.commit_prepared("x1")
    assert db.commit_prepared("x1") == n  # idempotent
    assert db.outcomes["x1"] == ("committed", n)

    tx = db.begin()
    tx.delete("t", 1)
    db.prepare("x2", tx.changes, [])
    db.abort_prepared("x2")
    db.abort_prepared("x2")
    assert db.snapshot().row(db.table("t").table_id, (1,)) is not None
    with pytest.raises(TxnClosed):
        db.commit_prepared("x2")


def test_prepare_checks_read_validators():
    db = make()
    put(db, (1, "a"))
    stale = str(db.row_rvv("t", 1))
    tx = db.begin()
    tx.update("t", 1, {"v": "b"})
    tx.commit()
    tx = db.begin()
    tx.insert("t", (2, "c"))
    with pytest.raises(SerializationConflict):
        db.prepare("x3", tx.changes, [stale])


def test_intents_survive_recovery():
    db = make()
    put(db, (1, "a"))
    tx = db.begin()
    tx.update("t", 1, {"v": "b"})
    db.prepare("x", tx.changes, [], {"coordinator": "http://c/R"})
    back = recover(db.log_bytes())
    assert back.intents["x"].meta == {"coordinator": "http://c/R"}
    back.commit_prepared("x")
    assert back.snapshot().row(back.table("t").table_id, (1,)).values[1] == "b"


def test_corrupt_tail_is_dropped():
    db = make()
    put(db, (1, "a"))
    data = db.log_bytes()
    bad = data[:-1] + bytes([data[-1] ^ 0xFF])
    back = recover(bad)
    assert back.snapshot().rows.get(back.table("t").table_id, {}) == {}


def test_record_boundaries_cover_log():
    db = make()
    put(db, (1, "a"))
    data = db.log_bytes()
    b = record_boundaries(data)
    assert b == sorted(b) and b[-1] == len(data)
    assert len(b) == len(list(iter_records(data)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["ins", "upd", "del"]), st.integers(0, 5), st.text(max_size=4)), max_size=25))
def test_recovery_reproduces_state(ops):
    db = make()
    for op, k, v in ops:
        tx = db.begin()
        try:
            getattr(tx, {"ins": "insert", "upd": "update", "del": "delete"}[op])(
                "t", *(((k, v),) if op == "ins" else (k, {"v": v}) if op == "upd" else (k,)))
            tx.commit()
        except (DuplicateKey, NotFound):
            pass
    back = recover(db.log_bytes())
    tid = db.table("t").table_id
    assert back.snapshot().rows.get(tid) == db.snapshot().rows.get(tid)
    assert back.table_rvv("t") == db.table_rvv("t")
    assert back.positions == db.positions


def test_corruption_before_the_tail_is_reported():
    db = make()
    put(db, (1, "a"))
    put(db, (2, "b"))
    data = bytearray(db.log_bytes())
    data[40] ^= 0xFF  # inside the table record payload
    with pytest.raises(CorruptLog):
        recover(bytes(data))
