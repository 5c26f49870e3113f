"""Deterministic per-stage seed derivation.

Every experiment stage gets its own RNG seed derived from the master seed
and a stage label:

    seed = splitmix64(master_seed XOR fnv1a64(label))

so any stage can be re-run in isolation with a reproducible stream, and
adding stages never perturbs existing ones.
"""

_MASK = (1 << 64) - 1


def fnv1a64(label: str) -> int:
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK
    return h


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return (x ^ (x >> 31)) & _MASK


def derive_seed(master_seed: int, label: str) -> int:
    """Stage seed in [0, 2^63); stable across runs and platforms."""
    return splitmix64((int(master_seed) & _MASK) ^ fnv1a64(label)) >> 1
