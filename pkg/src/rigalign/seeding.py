"""Deterministic seed derivation; all randomness flows through explicit seeds."""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Stable 64-bit child seed from a tuple of integer parts."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])
