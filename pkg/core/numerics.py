"""
Dense float64 tensor helpers and the counter-based random number source.

Tensors are plain ``numpy.ndarray`` values of dtype float64. Every helper here
validates its inputs and refuses to hand back non-finite data.
"""
import copy
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Type

import numpy as np

from .errors import ErftError, InvalidArgumentError

Tensor = np.ndarray

_WORD = (1 << 64) - 1


def as_tensor(data: Any) -> Tensor:
    """
    Convert array-like data to a fresh float64 tensor.

    Args:
        data: Nested sequence or array

    Returns:
        float64 array owning its memory
    """
    tensor = np.array(data, dtype=np.float64)
    check_finite(tensor, InvalidArgumentError, "tensor")
    return tensor


def check_finite(tensor: Tensor, error_cls: Type[ErftError], what: str) -> None:
    """Raise ``error_cls`` if ``tensor`` holds NaN or Inf."""
    if not np.all(np.isfinite(tensor)):
        raise error_cls(f"{what} contains non-finite values")


def check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if np.shape(a) != np.shape(b):
        raise InvalidArgumentError(
            f"{op}: shape mismatch {np.shape(a)} vs {np.shape(b)}"
        )


@dataclass(frozen=True)
class RngSnapshot:
    """Frozen copy of an RngState, replayable with ``RngState.restore``."""

    seed: int
    stream: int
    state: Dict[str, Any]


class RngState:
    """
    Explicit random state over numpy's Philox counter-based generator.

    The Philox key is the pair (seed, stream), so independent streams for data,
    injection, initialization and rollout noise are derived from one run seed
    without coordination. No module-level generator exists anywhere.
    """

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        """
        Initialize the random state.

        Args:
            seed: 64-bit run seed
            stream: Stream identifier, forms the second key word
            counter: Starting Philox block counter
        """
        self.seed = int(seed)
        self.stream = int(stream)
        key = (self.seed & _WORD) | ((self.stream & _WORD) << 64)
        self._bitgen = np.random.Philox(counter=int(counter), key=key)
        self.generator = np.random.Generator(self._bitgen)

    @property
    def counter(self) -> int:
        words = self._bitgen.state["state"]["counter"]
        return sum(int(word) << (64 * i) for i, word in enumerate(words))

    def spawn(self, stream: int) -> "RngState":
        """Independent state sharing this seed."""
        return RngState(self.seed, stream)

    def snapshot(self) -> RngSnapshot:
        return RngSnapshot(self.seed, self.stream, copy.deepcopy(self._bitgen.state))

    @classmethod
    def restore(cls, snapshot: RngSnapshot) -> "RngState":
        rng = cls(snapshot.seed, snapshot.stream)
        rng._bitgen.state = copy.deepcopy(snapshot.state)
        return rng

    def normal(self, shape: Sequence[int]) -> Tensor:
        return self.generator.standard_normal(tuple(shape))

    def uniform(self) -> float:
        return float(self.generator.random())

    def index(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n < 1:
            raise InvalidArgumentError(f"cannot draw an index from {n} choices")
        return int(self.generator.integers(n))

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, stream={self.stream}, counter={self.counter})"


def gaussian_sample(shape: Sequence[int], rng: RngState) -> Tensor:
    """
    Draw i.i.d. standard-normal entries.

    Args:
        shape: Positive dimensions
        rng: Random state, advanced in place

    Returns:
        Tensor of the requested shape
    """
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise InvalidArgumentError(f"gaussian_sample: invalid shape {shape}")
    return rng.normal(shape)


def l2_distance(a: Tensor, b: Tensor) -> float:
    check_same_shape(a, b, "l2_distance")
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)))


def mse(a: Tensor, b: Tensor) -> float:
    check_same_shape(a, b, "mse")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(diff * diff))


def uniform_temporal_slice(tensor: Tensor, rng: RngState) -> Tensor:
    """Copy of one uniformly chosen row along the leading (temporal) axis."""
    if np.ndim(tensor) < 1 or np.shape(tensor)[0] < 1:
        raise InvalidArgumentError("temporal slice needs at least one frame")
    return np.array(tensor[rng.index(np.shape(tensor)[0])], dtype=np.float64)
