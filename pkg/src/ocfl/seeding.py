"""Seed derivation.

Every random stream in an experiment comes from ``derive_seed(root, *tags)``:
the BLAKE2b-64 digest of the root seed and the tags, each rendered with
``str`` and joined by ``"/"``. Client streams use
``("client", client_id, round)``, so results never depend on scheduling.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *tags: object) -> int:
    text = "/".join([str(int(root))] + [str(t) for t in tags])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_rng(root: int, *tags: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *tags))
