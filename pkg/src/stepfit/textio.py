"""Deterministic text output helpers.

Every number the package writes goes through one formatter so reruns
produce byte-identical files; JSON goes through one canonical dump.
"""

from __future__ import annotations

import json


def format_number(value) -> str:
    """Render a number with 12 significant digits (%.12g)."""
    return format(float(value), ".12g")


def format_row(values, sep: str = ",") -> str:
    """One delimited line; numbers formatted, everything else str()."""
    parts = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            parts.append(str(v))
        elif isinstance(v, int):
            parts.append(str(v))
        else:
            parts.append(format_number(v))
    return sep.join(parts)


def canonical_json(obj) -> str:
    """Stable JSON: sorted keys, no whitespace variance, exact floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_text(path, text: str) -> None:
    """Write with a trailing newline and unix line endings."""
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")
