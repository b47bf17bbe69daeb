"""Flat key-value config text: ``section.key = value`` lines.

One line per key, ``#`` comments, values are scalars or whitespace
separated tuples. This is the on-disk format for both the CLI run config
and scene specs.
"""

import hashlib


def parse_config_text(text: str) -> dict:
    """Parse config text into an ordered {dotted_key: raw_string} dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def load_config_file(path) -> dict:
    with open(path, "r") as fh:
        return parse_config_text(fh.read())


def format_config(pairs: dict) -> str:
    width = max((len(k) for k in pairs), default=0)
    return "".join(f"{k.ljust(width)} = {v}\n" for k, v in pairs.items())


def as_int(raw, key):
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: expected an integer, got {raw!r}") from None


def as_float(raw, key):
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: expected a number, got {raw!r}") from None


def as_floats(raw, key, n=None):
    try:
        vals = tuple(float(v) for v in raw.split())
    except ValueError:
        raise ValueError(f"config key {key!r}: expected numbers, got {raw!r}") from None
    if n is not None and len(vals) != n:
        raise ValueError(f"config key {key!r}: expected {n} values, got {len(vals)}")
    return vals


def as_ints(raw, key, n=None):
    try:
        vals = tuple(int(v) for v in raw.split())
    except ValueError:
        raise ValueError(f"config key {key!r}: expected integers, got {raw!r}") from None
    if n is not None and len(vals) != n:
        raise ValueError(f"config key {key!r}: expected {n} values, got {len(vals)}")
    return vals


def sub_seed(root_seed: int, label: str) -> int:
    """Stable fan-out of one root seed into independent labeled streams."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
