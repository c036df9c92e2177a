"""Stable 64-bit hashing for reproducible generator decisions.

Python's builtin ``hash`` is salted per process, so every deterministic
choice in the benchmark pipeline goes through FNV-1a instead.  The hash is
computed over the UTF-8 encoding of the parts joined with ``|``.
"""

from __future__ import annotations

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def stable_hash64(*parts: object) -> int:
    """FNV-1a over ``"part1|part2|..."`` encoded as UTF-8."""
    data = "|".join(str(p) for p in parts).encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def stable_choice(options: list, *parts: object):
    """Pick one element of ``options`` by stable hash; options order matters."""
    if not options:
        raise ValueError("stable_choice requires a nonempty option list")
    return options[stable_hash64(*parts) % len(options)]
