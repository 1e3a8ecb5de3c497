"""Minimal TOML reader for experiment configs.

Prefers the stdlib ``tomllib`` (Python 3.11+).  The fallback covers the
subset that config files use: comments, bare/quoted keys, strings, ints,
floats, booleans, homogeneous arrays (multiline allowed), inline tables,
``[table]`` headers, and ``[[array-of-tables]]`` headers.  It is not a
general TOML implementation.
"""

from __future__ import annotations

import re

try:  # pragma: no cover - depends on interpreter version
    import tomllib as _tomllib
except ImportError:  # pragma: no cover
    _tomllib = None

__all__ = ["loads", "load_path"]

_KEY = re.compile(r'^\s*([A-Za-z0-9_\-]+|"[^"]*")\s*=\s*(.+?)\s*$')
_TABLE = re.compile(r"^\s*\[([A-Za-z0-9_\-\.]+)\]\s*$")
_ARRAY_TABLE = re.compile(r"^\s*\[\[([A-Za-z0-9_\-\.]+)\]\]\s*$")


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    quote = ""
    for ch in line:
        if in_str:
            out.append(ch)
            if ch == quote:
                in_str = False
        elif ch in "\"'":
            in_str = True
            quote = ch
            out.append(ch)
        elif ch == "#":
            break
        else:
            out.append(ch)
    return "".join(out).rstrip()


def _parse_value(text: str):
    text = text.strip()
    if text.startswith("["):
        return _parse_array(text)
    if text.startswith("{"):
        return _parse_inline_table(text)
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text.startswith("'") and text.endswith("'") and len(text) >= 2:
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    raise ValueError(f"cannot parse TOML value: {text!r}")


def _split_top_level(body: str) -> list[str]:
    items, depth, in_str, quote, cur = [], 0, False, "", []
    for ch in body:
        if in_str:
            cur.append(ch)
            if ch == quote:
                in_str = False
        elif ch in "\"'":
            in_str, quote = True, ch
            cur.append(ch)
        elif ch in "[{":
            depth += 1
            cur.append(ch)
        elif ch in "]}":
            depth -= 1
            cur.append(ch)
        elif ch == "," and depth == 0:
            items.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        items.append(tail)
    return items


def _parse_array(text: str):
    if not text.endswith("]"):
        raise ValueError(f"unterminated array: {text!r}")
    body = text[1:-1].strip()
    if not body:
        return []
    return [_parse_value(item) for item in _split_top_level(body)]


def _parse_inline_table(text: str):
    if not text.endswith("}"):
        raise ValueError(f"unterminated inline table: {text!r}")
    body = text[1:-1].strip()
    out = {}
    if not body:
        return out
    for item in _split_top_level(body):
        key, _, value = item.partition("=")
        if not _:
            raise ValueError(f"bad inline table entry: {item!r}")
        out[key.strip().strip('"')] = _parse_value(value)
    return out


def _descend(root: dict, dotted: str) -> dict:
    node = root
    for part in dotted.split("."):
        node = node.setdefault(part, {})
        if isinstance(node, list):
            node = node[-1]
    return node


def loads(text: str) -> dict:
    if _tomllib is not None:
        return _tomllib.loads(text)
    root: dict = {}
    current = root
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = _strip_comment(lines[i])
        i += 1
        if not line.strip():
            continue
        m = _ARRAY_TABLE.match(line)
        if m:
            parent = root
            parts = m.group(1).split(".")
            for part in parts[:-1]:
                parent = parent.setdefault(part, {})
            arr = parent.setdefault(parts[-1], [])
            if not isinstance(arr, list):
                raise ValueError(f"key {m.group(1)!r} is not an array of tables")
            arr.append({})
            current = arr[-1]
            continue
        m = _TABLE.match(line)
        if m:
            current = _descend(root, m.group(1))
            continue
        # accumulate continuation lines for multiline arrays
        while line.count("[") > line.count("]") or line.rstrip().endswith(","):
            if i >= len(lines):
                break
            line = line + " " + _strip_comment(lines[i])
            i += 1
        m = _KEY.match(line)
        if not m:
            raise ValueError(f"cannot parse TOML line: {line!r}")
        key = m.group(1).strip('"')
        current[key] = _parse_value(m.group(2))
    return root


def load_path(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read().decode("utf-8"))
