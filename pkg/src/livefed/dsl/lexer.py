from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from decimal import Decimal
from typing import Any

from livefed.errors import LexError, TypeMismatch
from livefed.values import parse_date, parse_datetime

PUNCT2 = ("<=", ">=", "<>", "!=", "^^")
PUNCT1 = "(),;*+-/=<>.:"

KEYWORDS = frozenset(
    """select from where group by as natural join inner cross on create table view
    insert into values update set delete and or not null primary key of get extract
    is""".split()
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident | kw | number | string | date | timestamp | op | eof
    value: Any
    pos: int
    end: int
    quoted: bool = False

    def is_kw(self, *words: str) -> bool:
        return self.kind == "kw" and self.value in words

    def is_op(self, *ops: str) -> bool:
        return self.kind == "op" and self.value in ops


def _word_char(c: str) -> bool:
    return c.isascii() and (c.isalnum() or c == "_")


def _read_string(text: str, i: int) -> tuple[str, int]:
    """``text[i]`` is the opening quote; return (content, index after close)."""
    out = []
    j = i + 1
    n = len(text)
    while j < n:
        c = text[j]
        if c == "'":
            if j + 1 < n and text[j + 1] == "'":
                out.append("'")
                j += 2
                continue
            return "".join(out), j + 1
        out.append(c)
        j += 1
    raise LexError("unterminated string literal", i)


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise LexError("unterminated comment", i)
            i = j + 2
            continue
        if text.startswith("--", i):
            j = text.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if c == "'":
            s, j = _read_string(text, i)
            toks.append(Token("string", s, i, j))
            i = j
            continue
        if c == '"':
            j = text.find('"', i + 1)
            if j < 0:
                raise LexError("unterminated quoted identifier", i)
            if j == i + 1:
                raise LexError("empty quoted identifier", i)
            toks.append(Token("ident", text[i + 1:j], i, j + 1, quoted=True))
            i = j + 1
            continue
        if _word_char(c):
            j = i
            while j < n and _word_char(text[j]):
                j += 1
            word = text[i:j]
            if word.isdigit():
                if j + 1 < n and text[j] == "." and text[j + 1].isdigit():
                    k = j + 1
                    while k < n and text[k].isdigit():
                        k += 1
                    toks.append(Token("number", Decimal(text[i:k]), i, k))
                    i = k
                else:
                    toks.append(Token("number", int(word), i, j))
                    i = j
                continue
            low = word.lower()
            if low in ("date", "timestamp", "datetime") and j < n and text[j] == "'":
                s, k = _read_string(text, j)
                try:
                    if low == "date":
                        toks.append(Token("date", parse_date(s), i, k))
                    else:
                        toks.append(Token("timestamp", parse_datetime(s), i, k))
                except TypeMismatch as e:
                    raise LexError(str(e), i) from None
                i = k
                continue
            if low in KEYWORDS:
                toks.append(Token("kw", low, i, j))
            else:
                toks.append(Token("ident", word, i, j))
            i = j
            continue
        two = text[i:i + 2]
        if two in PUNCT2:
            toks.append(Token("op", "<>" if two == "!=" else two, i, i + 2))
            i += 2
            continue
        if c in PUNCT1:
            toks.append(Token("op", c, i, i + 1))
            i += 1
            continue
        raise LexError(f"unexpected character {c!r}", i)
    toks.append(Token("eof", None, n, n))
    return toks


def is_date_value(v) -> bool:
    return isinstance(v, dt.date) and not isinstance(v, dt.datetime)
