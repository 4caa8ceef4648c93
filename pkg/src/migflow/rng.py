"""Named, order-independent random substreams derived from one seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _name_word(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def stage_key(seed: int, name: str) -> int:
    """64-bit key for the substream ``name`` of ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _name_word(name)])
    return int(ss.generate_state(1, np.uint64)[0])


def substream(seed: int, *names: object) -> np.random.Generator:
    """Generator keyed by ``seed`` and a path of names, e.g. ``("user", 17)``."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_name_word(str(n)) for n in names]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
