"""Derived seeds for reproducible parallel work.

``mix_seed(a, b, ...)`` folds integers through splitmix64:
``h = 0; h = splitmix64(h ^ v)`` for each value ``v`` (taken mod 2**64).
"""

MASK64 = (1 << 64) - 1

MIXING_FUNCTION = "splitmix64 fold: h=0; for v in values: h = splitmix64(h ^ (v mod 2**64))"


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(*values):
    h = 0
    for v in values:
        h = splitmix64(h ^ (int(v) & MASK64))
    return h
