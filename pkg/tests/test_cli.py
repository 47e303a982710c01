import io
import os
import signal
import socket
import subprocess
import sys
import time

import pytest

from livefed import scenario as S
from livefed.cli import format_table, main, run_demo
from livefed.coordinator import Coordinator
from livefed.node import ContractorNode, NodeConfig
from livefed.store import Database
from livefed.wire import HttpTransport, Server


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_format_table_layout():
    out = format_table(["a", "long"], [[1, "x"], [22, None]], ["A:1:1", ""], "A|3|[1-0]")
    lines = out.splitlines()
    assert lines[0] == "a   long  validator"
    assert lines[2] == "1   x     A:1:1"
    assert lines[-2:] == ["(2 rows)", "ETags: A|3|[1-0]"]


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["load", "nofile.sql"]) == 1
    assert main(["serve"]) == 1


def test_load_into_log(tmp_path, capsys):
    script = tmp_path / "s.sql"
    script.write_text(S.STATISTICS_SCRIPT)
    log = tmp_path / "stats.log"
    assert main(["load", str(script), "--db", str(log), "--name", "Statistics"]) == 0
    assert "3 statements" in capsys.readouterr().out
    db = Database.open(log)
    assert db.name == "Statistics" and len(db.snapshot().rows[db.table("H").table_id]) == 3


def test_load_parse_error(tmp_path, capsys):
    script = tmp_path / "bad.sql"
    script.write_text("create table t (a int, primary key (a));\nselect from t;")
    assert main(["load", str(script), "--db", str(tmp_path / "x.log")]) == 3
    err = capsys.readouterr().err
    assert "offset" in err
    assert not (tmp_path / "x.log").exists()


@pytest.fixture
def live():
    ports = {db: free_port() for db in S.NETLOCS}
    transport = HttpTransport({S.NETLOCS[db]: f"127.0.0.1:{p}" for db, p in ports.items()})
    servers = []
    for db, port in ports.items():
        n = ContractorNode(NodeConfig(db), transport=transport)
        n.session.run_script(S.SCRIPTS[db])
        servers.append(Server(n, "127.0.0.1", port).start())
    c = Coordinator("Requester", transport)
    c.run_script(S.REQUESTER_SCRIPT)
    cs = Server(c, "127.0.0.1", free_port()).start()
    servers.append(cs)
    yield f"http://127.0.0.1:{cs.port}/Requester", ports
    for s in servers:
        s.stop()


def test_query_over_http(live, capsys, monkeypatch):
    url, _ = live
    assert main(["query", "--url", url, "-v", S.PERCENTAGE_QUERY]) == 0
    out = capsys.readouterr().out
    assert "East End Freetown" in out and "validator" in out and out.rstrip().splitlines()[-1].startswith("ETags: ")
    monkeypatch.setattr(sys, "stdin", io.StringIO(S.UPDATE_STATEMENT))
    assert main(["query", "--url", url]) == 0
    assert "1 rows affected" in capsys.readouterr().out
    assert main(["query", "--url", url, "select from"]) == 3


def test_load_over_http(live, tmp_path, capsys):
    _, ports = live
    script = tmp_path / "more.sql"
    script.write_text("insert into H values (4, 'Bo', 1, 1, 1, 1, 1, null);")
    assert main(["load", str(script), "--url", f"http://127.0.0.1:{ports['Statistics']}/Statistics"]) == 0
    assert "1 statements" in capsys.readouterr().out


def test_unreachable_coordinator():
    assert main(["query", "--url", f"http://127.0.0.1:{free_port()}/R", "select a from t"]) == 2


def test_demo_is_deterministic():
    a, b = io.StringIO(), io.StringIO()
    run_demo(free_port(), a)
    run_demo(free_port(), b)
    assert a.getvalue() == b.getvalue()
    text = a.getvalue()
    assert "ETags: Hospital|" in text and "1 row affected" in text


def _spawn(args, env=None):
    return subprocess.Popen([sys.executable, "-m", "livefed.cli", *args], stdout=subprocess.PIPE,
                            stderr=subprocess.PIPE, text=True, env={**os.environ, **(env or {})})


def test_serve_and_sigterm(tmp_path):
    port = free_port()
    p = _spawn(["serve", "--name", "Statistics", "--db", str(tmp_path / "s.log")], {"LIVEFED_PORT": str(port)})
    try:
        line = p.stdout.readline()
        assert f"127.0.0.1:{port}" in line
        r = HttpTransport().request("POST", f"http://127.0.0.1:{port}/Statistics/sql", {}, S.STATISTICS_SCRIPT)
        assert r.status == 200
        busy = _spawn(["serve", "--name", "Other", "--port", str(port)])
        assert busy.wait(10) == 2
    finally:
        p.send_signal(signal.SIGTERM)
        assert p.wait(10) == 0
    assert Database.open(tmp_path / "s.log").snapshot().has_table("H")
