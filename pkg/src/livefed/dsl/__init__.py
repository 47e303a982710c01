"""SQL subset front end: tokenizer, parser, and canonical printer."""

from livefed.dsl.lexer import Token, tokenize
from livefed.dsl.parser import parse, parse_expr, parse_one, parse_select
from livefed.dsl.printer import script as pretty_script
from livefed.dsl.printer import statement as pretty

__all__ = ["Token", "tokenize", "parse", "parse_expr", "parse_one", "parse_select", "pretty", "pretty_script"]
