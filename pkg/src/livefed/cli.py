"""Command line entry point: ``livefed serve|load|query|demo``."""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import signal
import sys
from decimal import Decimal
from pathlib import Path

from livefed import scenario as S
from livefed.coordinator import Coordinator
from livefed.dsl import parse
from livefed.errors import LiveFedError, SourceUnavailable, SqlError, StaleRead
from livefed.node import ContractorNode, NodeConfig
from livefed.session import Session
from livefed.store import Database
from livefed.txn import TransactionManager
from livefed.wire import HttpTransport, Server

EXIT_OK, EXIT_USAGE, EXIT_NETWORK, EXIT_PARSE = 0, 1, 2, 3


class UsageError(Exception):
    pass


# -- output -------------------------------------------------------------------


def fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, Decimal):
        n = v.normalize()
        return format(n, "f")
    if isinstance(v, dt.datetime):
        return v.isoformat(sep=" ") if v.time() != dt.time() else v.date().isoformat()
    if isinstance(v, dt.date):
        return v.isoformat()
    if hasattr(v, "iso"):
        return v.iso()
    return str(v)


def format_table(columns: list[str], rows: list[list], validators: list[str] | None = None,
                 etag: str | None = None) -> str:
    """Fixed-width text table; with ``validators`` a right-hand column and a footer."""
    header = list(columns)
    body = [[fmt_value(v) for v in r] for r in rows]
    if validators is not None:
        header.append("validator")
        body = [r + [val] for r, val in zip(body, validators)]
    widths = [len(h) for h in header]
    for r in body:
        widths = [max(w, len(c)) for w, c in zip(widths, r)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(header), line(["-" * w for w in widths])]
    out += [line(r) for r in body]
    out.append(f"({len(body)} row{'s' if len(body) != 1 else ''})")
    if validators is not None and etag is not None:
        out.append(f"ETags: {etag}")
    return "\n".join(out)


def print_result(obj: dict, verbose: bool) -> None:
    cols = [c["name"] for c in obj["columns"]]
    vals = obj.get("rowValidators") if verbose else None
    if verbose and vals is None:
        vals = [""] * len(obj["rows"])
    rows = obj["rows"]
    types = [c.get("type") for c in obj["columns"]]
    typed = []
    for r in rows:
        typed.append([Decimal(str(v)) if t == "numeric" and v is not None else v for v, t in zip(r, types)])
    print(format_table(cols, typed, vals, obj.get("etag") if verbose else None))


# -- commands ------------------------------------------------------------------


def _aliases(items) -> dict:
    out = {}
    for a in items or ():
        k, sep, v = a.partition("=")
        if not sep:
            raise UsageError(f"alias {a!r} is not host:port=host:port")
        out[k] = v
    return out


def cmd_serve(args) -> int:
    env = os.environ
    port = int(env.get("LIVEFED_PORT") or args.port or 8180)
    transport = HttpTransport(_aliases(args.alias))
    if args.coordinator:
        app = Coordinator(args.coordinator, transport)
        app.base_url = f"http://{args.host}:{port}"
        TransactionManager(app, args.decision_log)
        if args.script:
            app.run_script(Path(args.script).read_text())
        label = f"coordinator {args.coordinator}"
    else:
        if args.config:
            cfg = NodeConfig.from_file(args.config)
        else:
            db_path = env.get("LIVEFED_DB") or args.db
            if not db_path and not args.name:
                raise UsageError("serve needs --db, --config, --name or --coordinator")
            cfg = NodeConfig(args.name or Path(db_path).stem, log_path=db_path)
        cfg = cfg.with_env()
        if args.db and not env.get("LIVEFED_DB"):
            cfg.log_path = args.db
        cfg.port = port
        cfg.host = args.host
        app = ContractorNode(cfg, transport=transport)
        if args.script:
            Session(app.db).run_script(Path(args.script).read_text())
        app.start_in_doubt_monitor()
        label = f"node {cfg.db_name}"
    try:
        server = Server(app, args.host, port)
    except OSError as e:
        print(f"error: cannot listen on {args.host}:{port}: {e}", file=sys.stderr)
        return EXIT_NETWORK

    def stop(*_):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    print(f"{label} listening on http://{server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()
        if isinstance(app, ContractorNode):
            app.stop()
    return EXIT_OK


def cmd_load(args) -> int:
    text = Path(args.script).read_text(encoding="utf-8")
    stmts = parse(text)  # report syntax errors before touching anything
    if args.url:
        if not stmts:
            print("0 statements")
            return EXIT_OK
        r = HttpTransport().request("POST", args.url.rstrip("/") + "/sql", {"Content-Type": "text/plain"}, text)
        if r.status != 200:
            print(f"error: {(r.json() or {}).get('error', r.status)}", file=sys.stderr)
            return EXIT_PARSE if r.status == 400 else EXIT_NETWORK
        print(f"{r.json()['statements']} statements")
        return EXIT_OK
    db_path = os.environ.get("LIVEFED_DB") or args.db
    if not db_path:
        raise UsageError("load needs --db or --url")
    db = Database.open(db_path, args.name)
    try:
        sess = Session(db)
        for i, st in enumerate(stmts):
            try:
                sess.execute(st)
            except LiveFedError as e:
                pos = st.span[0] if st.span else "?"
                print(f"error: statement {i + 1} at offset {pos}: {e}", file=sys.stderr)
                return EXIT_USAGE
    finally:
        db.close()
    print(f"{len(stmts)} statements")
    return EXIT_OK


def cmd_query(args) -> int:
    text = args.statement if args.statement else sys.stdin.read()
    if not text.strip():
        raise UsageError("no statement given")
    url = args.url or os.environ.get("LIVEFED_URL")
    if not url:
        raise UsageError("query needs --url")
    r = HttpTransport().request("POST", url.rstrip("/") + "/query", {"Content-Type": "text/plain"}, text)
    obj = r.json() if r.body else {}
    if r.status != 200:
        print(f"error: {obj.get('error', r.status)}", file=sys.stderr)
        return EXIT_PARSE if r.status == 400 else EXIT_NETWORK
    if "columns" in obj:
        print_result(obj, args.verbose)
    elif "count" in obj:
        print(f"{obj['count']} rows affected")
    else:
        print("ok")
    return EXIT_OK


def run_demo(base_port: int = 18180, out=None) -> None:
    """Two contractor nodes and a requester on localhost, running the example."""
    out = out or sys.stdout
    ports = {"Hospital": base_port, "Statistics": base_port + 1}
    aliases = {S.NETLOCS[db]: f"127.0.0.1:{p}" for db, p in ports.items()}
    transport = HttpTransport(aliases)
    servers = []
    try:
        for db, port in ports.items():
            node = ContractorNode(NodeConfig(db, port=port), transport=transport)
            Session(node.db).run_script(S.SCRIPTS[db])
            servers.append(Server(node, "127.0.0.1", port).start())
        coord = Coordinator("Requester", transport)
        coord.run_script(S.REQUESTER_SCRIPT)

        def show(title, query):
            res = coord.execute_global(query)
            print(f"-- {title}", file=out)
            print(f"{query};", file=out)
            print(format_table(res.result.column_names, res.rows, res.row_validators, res.validator), file=out)
            print(file=out)

        show("percentage of patients under 10", S.PERCENTAGE_QUERY)
        show("treated patients by quarter and diagnosis", S.TOTALS_QUERY)
        for stmt in (S.UPDATE_STATEMENT, S.DELETE_STATEMENT):
            n = coord.write_through(stmt)
            print(f"-- {stmt};\n{n} row{'s' if n != 1 else ''} affected\n", file=out)
        show("percentage of patients under 10, after curation", S.PERCENTAGE_QUERY)
        show("treated patients by quarter and diagnosis, after curation", S.TOTALS_QUERY)
    finally:
        for s in servers:
            s.stop()


def cmd_demo(args) -> int:
    try:
        run_demo(args.base_port)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NETWORK
    return EXIT_OK


# -- wiring ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="livefed", description="Live federated queries with readCheck validators.")
    sub = p.add_subparsers(dest="mode", required=True)

    s = sub.add_parser("serve", help="run a contractor node or a coordinator")
    s.add_argument("--db", help="log file of the served database (created if missing)")
    s.add_argument("--name", help="database name when creating a new log")
    s.add_argument("--config", help="node config file (JSON or key=value)")
    s.add_argument("--port", type=int)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--script", help="statements to run after start-up")
    s.add_argument("--coordinator", metavar="NAME", help="serve a requester with this name instead of a node")
    s.add_argument("--decision-log", help="coordinator decision log file")
    s.add_argument("--alias", action="append", metavar="HOST:PORT=HOST:PORT",
                   help="reach a view URL's host through another address")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("load", help="run a script against a database or a node")
    s.add_argument("script")
    s.add_argument("--db")
    s.add_argument("--name")
    s.add_argument("--url", help="node or coordinator base URL, e.g. http://host:8180/Hospital")
    s.set_defaults(func=cmd_load)

    s = sub.add_parser("query", help="send one statement to a coordinator")
    s.add_argument("statement", nargs="?")
    s.add_argument("--url", help="coordinator base URL, e.g. http://host:9000/Requester")
    s.add_argument("-v", "--verbose", action="store_true", help="show row validators and ETags")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("demo", help="run the hospital/statistics example on localhost")
    s.add_argument("--base-port", type=int, default=18180)
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SqlError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (SourceUnavailable, StaleRead) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NETWORK
    except (LiveFedError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
