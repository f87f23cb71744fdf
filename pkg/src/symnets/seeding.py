"""One user seed expanded into independent random streams.

Layout (``numpy.random.SeedSequence`` spawn tree)::

    seed
    |- data:  source-draw, target-draw, shift-noise
    `- train: split, init, sampler

The same seed therefore reproduces both a generated dataset pair and the
training run on it, whether invoked through the CLI or the experiment driver.
"""

from __future__ import annotations

import numpy as np

SCHEME = "SeedSequence(seed).spawn(2) -> data[source, target, shift_noise], train[split, init, sampler]"


def _root(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        # fresh copy: spawn() on a shared instance would advance its child counter
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    return np.random.SeedSequence(int(seed))


def data_streams(seed) -> dict[str, np.random.SeedSequence]:
    data, _ = _root(seed).spawn(2)
    return dict(zip(("source", "target", "shift_noise"), data.spawn(3)))


def train_streams(seed) -> dict[str, np.random.SeedSequence]:
    _, train = _root(seed).spawn(2)
    return dict(zip(("split", "init", "sampler"), train.spawn(3)))
