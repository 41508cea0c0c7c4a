"""Fixed 64-bit FNV-1a hash.

Used wherever a bucket or a one-hot slot must be derived from text, so that
feature layouts are identical across runs, processes and platforms (Python's
builtin ``hash`` is salted per process).
"""

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes | str, seed: int = FNV64_OFFSET) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = seed
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK
    return h


def bucket(data: bytes | str, n_buckets: int) -> int:
    return fnv1a_64(data) % n_buckets
