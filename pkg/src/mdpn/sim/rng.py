"""Per-run random streams.

Each run owns three independent Philox (counter-based) generators keyed by
``(seed, stream id)``: 0 drives kernel branches, 1 arrivals, 2 randomized
policy choices. Drawing one value at a time or in blocks yields the same
sequence, so the slot-by-slot ``step`` and the batched ``run`` agree.
"""

from __future__ import annotations

import numpy as np

KERNEL, ARRIVALS, POLICY = 0, 1, 2


def stream(seed: int, stream_id: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(seq))


class SlotStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self.kernel = stream(seed, KERNEL)
        self.arrivals = stream(seed, ARRIVALS)
        self.policy = stream(seed, POLICY)

    def kernel_uniform(self) -> float:
        return self.kernel.random()

    def arrival_uniforms(self, n_classes: int) -> np.ndarray:
        return self.arrivals.random(n_classes)

    def policy_uniform(self) -> float:
        return self.policy.random()
