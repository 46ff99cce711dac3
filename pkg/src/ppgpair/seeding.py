"""Named random sub-streams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(root: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root), zlib.crc32(name.encode("utf-8"))])


def sub_seed(root: int, name: str) -> int:
    return int(substream(root, name).generate_state(1, np.uint64)[0])


def rng(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream(root, name))
