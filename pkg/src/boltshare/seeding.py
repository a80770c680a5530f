"""Named random sub-streams derived from one user seed."""
import numpy as np

STREAMS = {"dataset": 1, "split": 2, "init": 3, "shuffle": 4, "ga": 5, "pso": 6}


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; drawing from one stream never shifts another."""
    return np.random.default_rng([int(seed), STREAMS[name]])
