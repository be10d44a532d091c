"""Seed splitting.

One user-facing integer seed is expanded into independent per-component
streams: ``rng_for(seed, "batches")`` is ``numpy.random.default_rng`` over
``SeedSequence([seed, crc32(b"batches")])``. Components used in the package:
``init``, ``embeddings``, ``random_encoder``, ``batches``, ``swaps``,
``probe``, ``synthetic``.
"""

import zlib

import numpy as np


def sub_seed(seed: int, component: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(component.encode("utf-8"))])


def rng_for(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, component))
