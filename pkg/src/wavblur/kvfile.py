"""``key = value`` text files: one pair per line, ``#`` comments, any order."""

from pathlib import Path

from .errors import IoError, ParseError


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError("expected 'key = value'", lineno, 1)
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno, 1)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno, 1)
        out[key] = value
    return out


def read_kv(path) -> dict:
    try:
        return parse_kv(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def format_kv(pairs: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())
