"""
Terminal output for the command line verbs, highlighted with Pygments.
"""

import json
import sys
from typing import Any, Optional, TextIO

from pygments import highlight
from pygments.formatters import TerminalFormatter
from pygments.lexers.data import JsonLexer, YamlLexer

JSON_LEXER = JsonLexer()
SUMMARY_LEXER = YamlLexer()


def _wants_color(stream: TextIO, color: Optional[bool]) -> bool:
    if color is not None:
        return color

    isatty = getattr(stream, "isatty", None)
    return bool(isatty and isatty())


def render_json(document: Any, stream: Optional[TextIO] = None,
                color: Optional[bool] = None) -> str:
    """
    Format a JSON document for the terminal.

    Args:
        document: Any JSON-serializable object.
        stream: Target stream, used to decide on color; defaults to stdout.
        color: Force color on or off instead of checking for a TTY.

    Returns:
        Indented JSON, with ANSI colors when enabled.
    """

    text = json.dumps(document, indent=2)
    if not _wants_color(stream or sys.stdout, color):
        return text + "\n"

    return highlight(text, JSON_LEXER, TerminalFormatter())


def print_json(document: Any, stream: Optional[TextIO] = None) -> None:
    stream = stream or sys.stdout
    stream.write(render_json(document, stream))


def print_summary(summary: str, stream: Optional[TextIO] = None) -> None:
    stream = stream or sys.stdout
    if _wants_color(stream, None):
        summary = highlight(summary, SUMMARY_LEXER, TerminalFormatter())

    stream.write(summary)
