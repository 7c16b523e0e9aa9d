"""Deterministic seed derivation for all stochastic components.

Every consumer gets its own stream derived from the experiment seed plus a
string context, so adding or reordering one consumer never perturbs another.
"""

from __future__ import annotations

import numpy as np


def _context_key(context: tuple) -> tuple:
    out = []
    for part in context:
        if isinstance(part, str):
            out.extend(part.encode("utf-8"))
        else:
            out.append(int(part) & 0xFFFFFFFF)
    return tuple(out)


def derive_rng(seed: int, *context) -> np.random.Generator:
    """Independent numpy generator for (seed, context)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_context_key(context))
    return np.random.Generator(np.random.PCG64(ss))


def derive_int_seed(seed: int, *context) -> int:
    """Stable 63-bit integer seed, e.g. for torch.manual_seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_context_key(context))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
