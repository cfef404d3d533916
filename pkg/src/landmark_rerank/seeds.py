"""Deterministic 64-bit seed derivation for every randomized stage.

All randomness in the pipeline flows from a single integer seed. Stage- and
pair-level streams are derived by mixing that seed with string labels, so
results never depend on evaluation order, thread count, or platform hash
randomization.
"""

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One step of the splitmix64 generator (finalizer included)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """FNV-1a hash of a string, 64-bit."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def mix_seed(seed: int, *parts: int | str) -> int:
    """Derive an independent stream seed from a base seed and labels.

    String parts are hashed with FNV-1a; integer parts are used as-is.
    The result is a non-negative 64-bit integer suitable for
    ``numpy.random.default_rng``.
    """
    h = splitmix64(seed & _MASK64)
    for part in parts:
        key = fnv1a64(part) if isinstance(part, str) else (part & _MASK64)
        h = splitmix64(h ^ key)
    return h
