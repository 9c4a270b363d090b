"""Per-tuple random streams.

Every stochastic draw in a run comes from a stream keyed by
``(global_seed, input_id, decoder_label, sample_index)``. The 64-bit stream
seed is the first 8 bytes (big-endian) of SHA-256 over the compact JSON
encoding ``[global_seed, "input_id", "decoder_label", sample_index]``; the
generator is numpy's PCG64 bit generator. Categorical draws use inverse-CDF
lookup of a single ``Generator.random()`` double. Because streams depend only
on the tuple, serial and parallel schedules draw identical samples.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

RNG_ALGORITHM = "sha256-seed/pcg64-v1"


def derive_seed(global_seed: int, input_id: str, decoder_label: str, sample_index: int) -> int:
    payload = json.dumps(
        [int(global_seed), str(input_id), str(decoder_label), int(sample_index)],
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return int.from_bytes(hashlib.sha256(payload.encode("utf-8")).digest()[:8], "big")


class RngStream:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def random(self) -> float:
        return float(self._gen.random())

    def categorical(self, probs: np.ndarray) -> int:
        """Index drawn with probability proportional to ``probs``."""
        cdf = np.cumsum(probs)
        u = self.random() * cdf[-1]
        idx = int(np.searchsorted(cdf, u, side="right"))
        if idx >= len(probs) or probs[idx] <= 0.0:
            # u landed on the upper float edge; fall back to the last supported id
            idx = int(np.flatnonzero(probs > 0.0)[-1])
        return idx

    def generator(self) -> np.random.Generator:
        return self._gen


def derive_rng(global_seed: int, input_id: str, decoder_label: str, sample_index: int) -> RngStream:
    return RngStream(derive_seed(global_seed, input_id, decoder_label, sample_index))
