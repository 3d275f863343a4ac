"""Flat ``key=value`` run configuration with an ``include <path>`` directive.

Includes are resolved relative to the including file and processed in place,
so later lines override earlier ones (including included ones).
"""

from __future__ import annotations

from pathlib import Path

from .tensor import FormatError


def load_config(path, _stack=()) -> dict[str, str]:
    path = Path(path).resolve()
    if path in _stack:
        raise FormatError(f"include cycle through {path}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc.strerror}") from None
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include ") or line.startswith("include\t"):
            target = Path(line.split(None, 1)[1].strip())
            if not target.is_absolute():
                target = path.parent / target
            values.update(load_config(target, _stack + (path,)))
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value or include")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values
