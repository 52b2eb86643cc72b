"""Synthetic quadrant-classification dataset.

Single-channel square images of uniform noise with one quadrant brightened;
the label is the bright quadrant's index (0 top-left, 1 top-right, 2
bottom-left, 3 bottom-right). Telling the quadrants apart needs spatial
aggregation, so the task exercises attention and the local-interaction
convs, yet a toy model fits it in seconds.
"""

from __future__ import annotations

import numpy as np

__all__ = ["quadrant_dataset", "NUM_QUADRANT_CLASSES"]

NUM_QUADRANT_CLASSES = 4


def quadrant_dataset(n: int, seed: int, image_size: int = 32,
                     boost: float = 0.5, dtype=np.float64):
    """Returns (images, labels): (n, 1, s, s) floats in [0, 1+boost], (n,) ints."""
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 1.0, size=(n, 1, image_size, image_size)).astype(dtype)
    labels = rng.integers(0, NUM_QUADRANT_CLASSES, size=n)
    half = image_size // 2
    spans = {0: (slice(0, half), slice(0, half)),
             1: (slice(0, half), slice(half, None)),
             2: (slice(half, None), slice(0, half)),
             3: (slice(half, None), slice(half, None))}
    for i, lab in enumerate(labels):
        rs, cs = spans[int(lab)]
        images[i, 0, rs, cs] += boost
    return images, labels
