"""
Error replay memory: per-timestep bounded grids of curated errors.

Two channels are kept, video-latent errors and noise errors, each with one
grid per test timestep. A full grid replaces the stored error closest (L2) to
the incoming one, so the stored set stays diverse.
"""
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import EmptyBankError, InvalidArgumentError, SnapshotFormatError
from .flow_matching import TimestepSchedule
from .numerics import RngState, Tensor, uniform_temporal_slice

logger = logging.getLogger(__name__)

BANK_MAGIC = b"ERFTBANK1"


class Channel(str, Enum):
    VID = "vid"
    NOI = "noi"


@dataclass
class CuratedError:
    """Errors curated from one training sample, tagged with its time."""

    t: float
    e_vid: Tensor
    e_noi: Tensor


@dataclass(frozen=True)
class ChannelAvailability:
    vid: bool
    noi: bool
    img: bool


def nearest_grid(t: float, schedule: TimestepSchedule) -> int:
    """Index of the closest test-grid point; ties go to the smaller index."""
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")
    # midpoints (2k+1)/(2 n_test) sit on the training grid; resolve them down to k
    k = int(np.floor(t * schedule.n_test + 0.5 - 1e-9))
    return min(max(k, 0), schedule.n_test - 1)


class BankGrid:
    """Bounded store of same-shaped error tensors."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidArgumentError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.size = 0
        self._storage: Optional[np.ndarray] = None

    @property
    def shape(self) -> Optional[Tuple[int, ...]]:
        return None if self._storage is None else self._storage.shape[1:]

    @property
    def entries(self) -> np.ndarray:
        if self._storage is None:
            return np.empty((0,))
        return self._storage[:self.size]

    def __len__(self) -> int:
        return self.size

    def add(self, error: Tensor) -> Optional[int]:
        """
        Store an error.

        Args:
            error: Tensor matching the grid's shape

        Returns:
            Index of the replaced entry, or None if appended
        """
        error = np.asarray(error, dtype=np.float64)
        if self._storage is None:
            self._storage = np.empty((min(self.capacity, 8),) + error.shape)
        elif error.shape != self.shape:
            raise InvalidArgumentError(
                f"error shape {error.shape} does not match grid shape {self.shape}"
            )
        if self.size < self.capacity:
            if self.size == len(self._storage):
                grown = np.empty((min(self.capacity, 2 * self.size),) + error.shape)
                grown[:self.size] = self._storage[:self.size]
                self._storage = grown
            self._storage[self.size] = error
            self.size += 1
            return None
        distances = np.linalg.norm((self._storage[:self.size] - error).reshape(self.size, -1), axis=1)
        index = int(np.argmin(distances))
        self._storage[index] = error
        return index

    def sample(self, rng: RngState) -> Tensor:
        if self.size == 0:
            raise EmptyBankError("error grid is empty")
        return self._storage[rng.index(self.size)].copy()

    def copy(self) -> "BankGrid":
        clone = BankGrid(self.capacity)
        if self._storage is not None:
            clone._storage = self._storage.copy()
            clone.size = self.size
        return clone


class ErrorBank:
    """Video-latent and noise error grids indexed by test timestep."""

    def __init__(self, schedule: TimestepSchedule, capacity: int = 500):
        """
        Initialize an empty bank.

        Args:
            schedule: Timestep schedule; one grid per test-grid point
            capacity: Maximum errors per grid (Z)
        """
        self.schedule = schedule
        self.capacity = capacity
        self.vid_grids = [BankGrid(capacity) for _ in range(schedule.n_test)]
        self.noi_grids = [BankGrid(capacity) for _ in range(schedule.n_test)]

    def grids(self, channel: Channel) -> List[BankGrid]:
        return self.vid_grids if Channel(channel) is Channel.VID else self.noi_grids

    def _grid(self, channel: Channel, n: int) -> BankGrid:
        if not 0 <= n < self.schedule.n_test:
            raise InvalidArgumentError(f"grid index {n} out of range")
        return self.grids(channel)[n]

    def update(self, channel: Channel, n: int, error: Tensor) -> Optional[int]:
        return self._grid(channel, n).add(error)

    def record(self, curated: CuratedError) -> int:
        """Bank both errors of a curated sample at its nearest grid."""
        n = nearest_grid(curated.t, self.schedule)
        self.update(Channel.VID, n, curated.e_vid)
        self.update(Channel.NOI, n, curated.e_noi)
        return n

    def sample_vid(self, n: int, rng: RngState) -> Tensor:
        return self._grid(Channel.VID, n).sample(rng)

    def sample_noi(self, n: int, rng: RngState) -> Tensor:
        return self._grid(Channel.NOI, n).sample(rng)

    def sample_img(self, rng: RngState) -> Tensor:
        """
        Draw a single-frame error independently of the current timestep:
        a uniform non-empty video grid, a uniform entry, a uniform frame.
        """
        filled = [grid for grid in self.vid_grids if grid.size]
        if not filled:
            raise EmptyBankError("all video error grids are empty")
        grid = filled[rng.index(len(filled))]
        return uniform_temporal_slice(grid.sample(rng), rng)

    def availability(self, n: int) -> ChannelAvailability:
        return ChannelAvailability(
            vid=self.vid_grids[n].size > 0,
            noi=self.noi_grids[n].size > 0,
            img=any(grid.size for grid in self.vid_grids),
        )

    def occupancy(self) -> List[Dict[str, Union[str, int, float]]]:
        rows = []
        for channel in Channel:
            for n, grid in enumerate(self.grids(channel)):
                rows.append({
                    "channel": channel.value,
                    "grid_index": n,
                    "grid_t": float(self.schedule.test_grid[n]),
                    "occupancy": grid.size,
                })
        return rows

    def total(self) -> int:
        return sum(g.size for g in self.vid_grids) + sum(g.size for g in self.noi_grids)

    def copy(self) -> "ErrorBank":
        clone = ErrorBank(self.schedule, self.capacity)
        clone.vid_grids = [g.copy() for g in self.vid_grids]
        clone.noi_grids = [g.copy() for g in self.noi_grids]
        return clone


class ErrorGatherer:
    """
    Routes curated errors from simulated workers into bank views.

    For iterations 1..warmup_iters every worker's errors are merged, in worker
    order, into one shared bank. Afterwards each worker gets its own copy of
    that bank and banks only its own errors.
    """

    def __init__(self, bank: ErrorBank, num_workers: int, warmup_iters: int):
        if num_workers < 1:
            raise InvalidArgumentError(f"num_workers must be >= 1, got {num_workers}")
        if warmup_iters < 0:
            raise InvalidArgumentError(f"warmup_iters must be >= 0, got {warmup_iters}")
        self.shared = bank
        self.num_workers = num_workers
        self.warmup_iters = warmup_iters
        self._local: Optional[List[ErrorBank]] = None

    @property
    def banks(self) -> List[ErrorBank]:
        if self._local is None:
            return [self.shared] * self.num_workers
        return self._local

    def bank_for(self, worker: int) -> ErrorBank:
        return self.banks[worker]

    def submit(self, iteration: int, per_worker: Sequence[Iterable[CuratedError]]) -> None:
        """
        Bank one iteration's curated errors.

        Args:
            iteration: 1-based training iteration
            per_worker: Curated errors of each worker, in worker order
        """
        if len(per_worker) != self.num_workers:
            raise InvalidArgumentError(
                f"expected errors from {self.num_workers} workers, got {len(per_worker)}"
            )
        if iteration <= self.warmup_iters:
            for errors in per_worker:
                for curated in errors:
                    self.shared.record(curated)
            return
        if self._local is None:
            logger.info(
                "Warmup gathering finished after %d iterations (%d errors banked); switching to local banks",
                self.warmup_iters,
                self.shared.total(),
            )
            self._local = [self.shared.copy() for _ in range(self.num_workers)]
        for bank, errors in zip(self._local, per_worker):
            for curated in errors:
                bank.record(curated)


def warmup_gather(
    workers: Sequence[Iterable[Sequence[CuratedError]]],
    bank: ErrorBank,
    warmup_iters: int,
) -> List[ErrorBank]:
    """
    Replay per-worker curation streams through an ErrorGatherer.

    Args:
        workers: One stream per worker; item i holds that worker's errors of iteration i+1
        bank: Shared bank filled during warmup
        warmup_iters: Number of gathering iterations

    Returns:
        Each worker's bank view after the last iteration
    """
    gatherer = ErrorGatherer(bank, len(workers), warmup_iters)
    for iteration, per_worker in enumerate(zip(*workers), start=1):
        gatherer.submit(iteration, per_worker)
    return gatherer.banks


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.blob):
            raise SnapshotFormatError("bank snapshot truncated")
        values = struct.unpack_from(fmt, self.blob, self.offset)
        self.offset += size
        return values

    def take_floats(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.offset + size > len(self.blob):
            raise SnapshotFormatError("bank snapshot truncated")
        values = np.frombuffer(self.blob, dtype="<f8", count=count, offset=self.offset)
        self.offset += size
        return values.astype(np.float64)


def bank_to_bytes(bank: ErrorBank) -> bytes:
    """
    Layout: magic, <iii n_train n_test capacity, then per channel (vid, noi) and
    per grid: <i count, <i ndim, <i*ndim shape, count entries as <f8.
    """
    parts = [BANK_MAGIC, struct.pack("<3i", bank.schedule.n_train, bank.schedule.n_test, bank.capacity)]
    for channel in Channel:
        for grid in bank.grids(channel):
            shape = grid.shape or ()
            parts.append(struct.pack("<2i", grid.size, len(shape)))
            parts.append(struct.pack(f"<{len(shape)}i", *shape))
            parts.append(np.ascontiguousarray(grid.entries, dtype="<f8").tobytes() if grid.size else b"")
    return b"".join(parts)


def bank_from_bytes(blob: bytes) -> ErrorBank:
    if not blob.startswith(BANK_MAGIC):
        raise SnapshotFormatError("bank snapshot magic bytes missing")
    reader = _Reader(blob)
    reader.offset = len(BANK_MAGIC)
    n_train, n_test, capacity = reader.take("<3i")
    try:
        bank = ErrorBank(TimestepSchedule(n_train, n_test), capacity)
    except InvalidArgumentError as e:
        raise SnapshotFormatError(f"bank snapshot header invalid: {e}") from e
    for channel in Channel:
        for grid in bank.grids(channel):
            count, ndim = reader.take("<2i")
            if count < 0 or count > capacity or ndim < 0:
                raise SnapshotFormatError("bank snapshot grid header invalid")
            shape = reader.take(f"<{ndim}i")
            if any(d < 1 for d in shape):
                raise SnapshotFormatError(f"bank snapshot grid shape invalid: {shape}")
            if count == 0:
                continue
            data = reader.take_floats(count * int(np.prod(shape))).reshape((count,) + tuple(shape))
            for entry in data:
                grid.add(entry)
    if reader.offset != len(blob):
        raise SnapshotFormatError("bank snapshot has trailing bytes")
    return bank


def save_bank(path: Union[str, Path], bank: ErrorBank) -> Path:
    path = Path(path)
    path.write_bytes(bank_to_bytes(bank))
    return path


def load_bank(path: Union[str, Path]) -> ErrorBank:
    return bank_from_bytes(Path(path).read_bytes())
