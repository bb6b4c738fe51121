"""Deterministic seed derivation for nested experiments.

Every stochastic routine in the package takes either a Generator or a seed;
structured experiments derive per-task seeds from integer paths like
``(root, stage, cell)`` so any cell can be recomputed in isolation and the
whole-experiment output never depends on execution order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["seed_sequence", "derive_rng"]


def _flatten(parts):
    for part in parts:
        if isinstance(part, (tuple, list)):
            yield from _flatten(part)
        elif isinstance(part, np.random.SeedSequence):
            yield from part.entropy if isinstance(part.entropy, (tuple, list)) else (
                part.entropy,
            )
        elif part is None:
            yield 0
        else:
            yield int(part)


def seed_sequence(*parts) -> np.random.SeedSequence:
    """SeedSequence from an integer path; nested tuples are flattened."""
    return np.random.SeedSequence(tuple(_flatten(parts)))


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(*parts))
