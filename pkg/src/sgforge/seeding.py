"""Seed derivation.

Every stochastic choice in the pipeline draws from a seed derived from the
run's root seed plus a key naming the choice, so that the order in which
scenes or records are processed never changes what is drawn.
"""

from __future__ import annotations

import hashlib
import random

import numpy as np


def derive_seed(root: int, *parts: object) -> int:
    key = "\x1f".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def py_rng(root: int, *parts: object) -> random.Random:
    return random.Random(derive_seed(root, *parts))


def np_rng(root: int, *parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *parts))
