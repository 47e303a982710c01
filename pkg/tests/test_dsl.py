import datetime as dt

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from livefed import scenario as S
from livefed.dsl import ast as A
from livefed.dsl import parse, parse_expr, pretty, pretty_script, tokenize
from livefed.errors import LexError, ParseError, SqlError


def test_scripts_parse():
    for text in (S.HOSPITAL_SCRIPT, S.STATISTICS_SCRIPT, S.REQUESTER_SCRIPT):
        stmts = parse(text)
        assert stmts and parse(pretty_script(stmts)) == stmts


def test_create_table_details():
    (ct, *_) = parse(S.HOSPITAL_SCRIPT)
    assert isinstance(ct, A.CreateTable) and ct.primary_key == ("ID",)
    assert ct.columns[0].not_null and ct.columns[0].type_args == (11,)


def test_date_literal_and_extract():
    e = parse_expr("extract(year from (admission - date'2001-02-03'))")
    assert isinstance(e, A.Extract)
    assert e.field == "year"
    assert e.expr.right == A.Literal(dt.date(2001, 2, 3))


def test_rest_view():
    stmts = parse(S.REQUESTER_SCRIPT)
    rv = [s for s in stmts if isinstance(s, A.CreateViewRest)]
    assert len(rv) == 2 and rv[0].url.endswith("/Hospital/Hospital/E")


def test_identifier_starting_with_digit():
    (ct, *_) = parse(S.STATISTICS_SCRIPT)
    assert "10to20" in [c.name for c in ct.columns]


def test_precedence():
    e = parse_expr("a + b * c = d or not e < 1 and f is not null")
    assert e.op == "or"
    assert e.left.op == "=" and e.left.left.op == "+" and e.left.left.right.op == "*"
    assert e.right.op == "and" and isinstance(e.right.left, A.UnaryOp)


@pytest.mark.parametrize("text, pos", [
    ("select from t", 7),
    ("select * from", 13),
    ("create table t (a int", 21),
    ("select 'abc from t", 7),
])
def test_errors_have_positions(text, pos):
    with pytest.raises(SqlError) as ei:
        parse(text)
    assert ei.value.position == pos


def test_lex_error_kind():
    with pytest.raises(LexError):
        tokenize("select # from t")


def test_parse_error_lists_expected():
    with pytest.raises(ParseError) as ei:
        parse("select a from t where")
    assert ei.value.expected


def test_comments_skipped():
    assert parse("/* x */ select a from t -- tail\n;") == parse("select a from t")


idents = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True).filter(
    lambda s: s not in {"select", "from", "where", "and", "or", "not", "as", "is", "null", "group", "by", "join",
                        "natural", "inner", "on", "cross", "create", "table", "view", "of", "get", "insert", "into",
                        "values", "update", "set", "delete", "date", "extract", "primary", "key", "timestamp"})
lits = st.one_of(st.integers(0, 10**6).map(A.Literal), st.text("abc' ", max_size=5).map(A.Literal),
                 st.dates().map(A.Literal), st.just(A.Literal(None)))
exprs = st.recursive(
    st.one_of(lits, idents.map(A.ColumnRef)),
    lambda sub: st.one_of(
        st.tuples(st.sampled_from(["+", "-", "*", "/", "=", "<", ">=", "<>", "and", "or"]), sub, sub)
        .map(lambda t: A.BinOp(*t)),
        sub.map(lambda e: A.UnaryOp("not", e)),
    ),
    max_leaves=8,
)


@settings(max_examples=200, deadline=None)
@given(exprs, idents, idents)
def test_pretty_round_trip_random(e, col, table):
    (st_,) = parse(f"select {col} from {table} where {pretty_expr(e)}")
    (again,) = parse(pretty(st_))
    assert again == st_


def pretty_expr(e):
    from livefed.dsl.printer import expr
    return expr(e)
