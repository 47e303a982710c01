from __future__ import annotations

import os
from dataclasses import dataclass, field

import pytest

from livefed import scenario as S
from livefed.coordinator import Coordinator
from livefed.node import ContractorNode, NodeConfig
from livefed.txn import TransactionManager
from livefed.wire import LocalTransport

# Table-level REST views, so transactions can write to both sources.
TABLE_VIEWS = """
create view HD of (ID int, name char, rCode int, birthdate date, admission date, diagnosis char, treatment char)
  as get 'http://servD1:8180/Hospital/Hospital/D';
create view HH of (rCode int, location char, inhabitants int, under10 int, a int, b int, c int, lastUpdated date)
  as get 'http://servD2:8180/Statistics/Statistics/H';
"""

COORD_NETLOC = "requester:9000"


@dataclass
class Federation:
    transport: LocalTransport
    nodes: dict
    coord: Coordinator
    tm: TransactionManager | None = None
    tmpdir: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def hospital(self) -> ContractorNode:
        return self.nodes["Hospital"]

    @property
    def statistics(self) -> ContractorNode:
        return self.nodes["Statistics"]


def build_federation(tmpdir=None, with_txn=False, table_views=False) -> Federation:
    t = LocalTransport()
    nodes = {}
    for db, netloc in S.NETLOCS.items():
        path = os.path.join(tmpdir, f"{db}.log") if tmpdir else None
        n = ContractorNode(NodeConfig(db, log_path=path), transport=t)
        n.session.run_script(S.SCRIPTS[db])
        t.register(netloc, n)
        nodes[db] = n
    c = Coordinator("Requester", t)
    c.base_url = f"http://{COORD_NETLOC}"
    t.register(COORD_NETLOC, c)
    c.run_script(S.REQUESTER_SCRIPT + (TABLE_VIEWS if table_views else ""))
    fed = Federation(t, nodes, c, tmpdir=tmpdir)
    if with_txn:
        log = os.path.join(tmpdir, "decisions.log") if tmpdir else None
        fed.tm = TransactionManager(c, log)
    return fed


@pytest.fixture
def fed():
    return build_federation()


@pytest.fixture
def txfed(tmp_path):
    return build_federation(str(tmp_path), with_txn=True, table_views=True)


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
