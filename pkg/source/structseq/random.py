"""
Every stochastic operation takes an explicit numpy Generator.  Generators are built over Philox, a counter based bit
generator, from a SeedSequence whose spawn key names the stream.  The same (seed, stream) gives the same draws on
every platform.
"""
from typing import Sequence, Union

import numpy as np

# Stream namespaces, so that e.g. the sampler's stream for instance 3 never collides with training step 3.
STREAM_SAMPLER = 0
STREAM_TRAIN = 1
STREAM_RECOVER = 2
STREAM_DATAGEN = 3
STREAM_EVAL = 4
STREAM_INIT = 5
STREAM_SPLIT = 6
STREAM_GENERATE = 7


def make_rng(seed: int, *stream: Union[int, Sequence[int]]) -> np.random.Generator:
    """
    Generator for an independent named stream.  make_rng(7, STREAM_TRAIN, 12) is the stream of training step 12.
    """
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError(f"Seed must be a 64 bit unsigned integer, got {seed}")
    spawn_key = []
    for item in stream:
        if isinstance(item, (list, tuple)):
            spawn_key.extend(int(part) for part in item)
        else:
            spawn_key.append(int(item))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(spawn_key))))
