import logging

import numpy as np
import torch

# types


class Types:
    Point = tuple[float, float]

    # image arrays are HxW or HxWxC, values in [0,255]
    Image = np.ndarray
    Tensor = torch.Tensor


# supervision levels, low to high
LEVELS: tuple[int, int, int] = (64, 128, 256)
MODEL_SIZE = 256


# logging

logging.basicConfig(
    level=logging.INFO,
    format="[%(levelname)s]{%(name)s} %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)

logger = logging.getLogger("facesketch")


# seeding


def seed_sequence(seed: int, *keys: int) -> np.random.SeedSequence:
    """
    Derive an independent stream from the top-level seed and a path of integer keys.
    """
    return np.random.SeedSequence([int(seed), *[int(k) for k in keys]])


def numpy_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *keys))


def torch_rng(seed: int, *keys: int) -> torch.Generator:
    state = seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)[0]
    gen = torch.Generator()
    gen.manual_seed(int(state) & 0x7FFF_FFFF_FFFF_FFFF)
    return gen


def check_level(level: int) -> int:
    if level not in LEVELS:
        raise ValueError(f"Invalid level: {level=} must be one of {LEVELS}")
    return level
