import numpy as np
import torch

from .utils import Types as T


class ReplayBuffer:
    """
    Pool of previously generated fakes shown to a discriminator in place of fresh ones.
    Capacity 0 disables the pool.
    """

    def __init__(self, capacity: int = 50, rng: np.random.Generator | None = None):
        if capacity < 0:
            raise ValueError(f"Capacity must be non-negative, but got {capacity}")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.images: list[T.Tensor] = []
        self.swaps = 0
        self.pushes = 0

    def __len__(self):
        return len(self.images)

    def push_sample(self, fakes: T.Tensor) -> T.Tensor:
        """
        Push a batch of detached fakes (Nx...) image by image. Below capacity an image is
        stored and returned; once full, with probability 1/2 a random stored image is
        returned and replaced by the incoming one, otherwise the incoming one is returned.
        """
        if self.capacity == 0:
            return fakes

        out = []
        for image in fakes.detach():
            self.pushes += 1
            if len(self.images) < self.capacity:
                self.images.append(image.clone())
                out.append(image)
            elif self.rng.random() < 0.5:
                idx = int(self.rng.integers(self.capacity))
                out.append(self.images[idx].clone())
                self.images[idx] = image.clone()
                self.swaps += 1
            else:
                out.append(image)
        return torch.stack(out)

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "images": [x.clone() for x in self.images],
            "rng": self.rng.bit_generator.state,
            "swaps": self.swaps,
            "pushes": self.pushes,
        }

    def load_state_dict(self, state: dict) -> None:
        self.capacity = state["capacity"]
        self.images = [x.clone() for x in state["images"]]
        self.rng.bit_generator.state = state["rng"]
        self.swaps = state["swaps"]
        self.pushes = state["pushes"]
