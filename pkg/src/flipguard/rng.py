"""Deterministic named substreams for Monte Carlo experiments.

Every stochastic component draws from a counter-based Philox generator
keyed by (seed, path).  Distinct paths give statistically independent
streams, so experiment cells can run in any order (or in parallel) and
still produce bit-identical results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _path_tokens(path) -> tuple[int, ...]:
    tokens: list[int] = []
    for part in path:
        if isinstance(part, (int, np.integer)):
            value = int(part)
            if value < 0:
                raise ValueError("substream path integers must be non-negative")
            # Split into 32-bit words so arbitrarily large indices are valid.
            tokens.append(value & 0xFFFFFFFF)
            tokens.append((value >> 32) & 0xFFFFFFFF)
        elif isinstance(part, str):
            digest = hashlib.sha256(part.encode("utf-8")).digest()
            tokens.append(int.from_bytes(digest[:4], "big"))
            tokens.append(int.from_bytes(digest[4:8], "big"))
        else:
            raise TypeError(f"unsupported substream path element: {part!r}")
    return tuple(tokens)


def substream(seed: int, *path) -> np.random.Generator:
    """Return the generator for a named substream of ``seed``.

    ``path`` elements may be non-negative integers or strings; the same
    (seed, path) always yields the same stream.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=_path_tokens(path))
    return np.random.Generator(np.random.Philox(seq))
