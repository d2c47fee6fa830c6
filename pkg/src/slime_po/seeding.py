"""One master seed fanned out into independent sub-seeds.

``derive_seed(master, stream)`` runs splitmix64 on ``master`` XOR a fixed
per-stream constant, so streams ("data", "init", "shuffle", "heldout", ...)
never share a sequence and never depend on each other.
"""

import zlib

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, stream: str) -> int:
    tag = zlib.crc32(stream.encode("utf-8"))
    return splitmix64((int(master) & _MASK) ^ (tag << 32))
