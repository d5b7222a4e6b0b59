"""Shared domain types: sparse binary vectors, identifiers, engine configuration.

All types here are immutable after construction and safe to share across
concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ._bits import mix64, seed_stream

VectorId = int
"""Global 64-bit unsigned vector identifier, unique across all partitions."""

#: Sentinel marking an unoccupied sketch cell. Never a valid VectorId; data
#: admission rejects it.
NULL_ID = 0xFFFFFFFFFFFFFFFF

_TAG_SLOT_SEEDS = 0x5EED


class SketchLshError(Exception):
    """Base class for all engine errors."""


class InvalidVectorError(SketchLshError, ValueError):
    """Malformed vector input: unsorted, duplicated, or out-of-range indices."""


class EmptyVectorError(SketchLshError, ValueError):
    """A vector with no active indices reached a hashing or indexing path."""


class ConfigError(SketchLshError, ValueError):
    """Invalid or inconsistent engine configuration."""


def _validated_indices(indices) -> np.ndarray:
    try:
        arr = np.asarray(indices, dtype=np.uint64)
    except (OverflowError, TypeError, ValueError) as exc:
        raise InvalidVectorError(f"indices must be non-negative integers: {exc}") from None
    if arr.ndim != 1:
        raise InvalidVectorError("indices must be a one-dimensional sequence")
    return arr


@dataclass(frozen=True, eq=False)
class SparseVector:
    """A sparse binary vector given by the sorted positions of its set bits.

    ``indices`` must be strictly increasing (no duplicates) and every index
    must be below ``dim``. Malformed input is rejected rather than repaired,
    so ingestion bugs surface instead of being silently masked.

    An empty index set is representable (it can occur in raw datasets), but
    hashing and indexing paths reject it with :class:`EmptyVectorError`.
    """

    indices: np.ndarray
    dim: int

    def __post_init__(self) -> None:
        arr = _validated_indices(self.indices)
        if self.dim < 1:
            raise InvalidVectorError(f"dim must be positive, got {self.dim}")
        if arr.size:
            # uint64 subtraction wraps, so compare directly instead of diff().
            if not np.all(arr[1:] > arr[:-1]):
                raise InvalidVectorError("indices must be strictly increasing")
            if int(arr[-1]) >= self.dim:
                raise InvalidVectorError(
                    f"index {int(arr[-1])} out of range for dim {self.dim}"
                )
        arr.setflags(write=False)
        object.__setattr__(self, "indices", arr)

    @property
    def nnz(self) -> int:
        """Number of active (set) dimensions."""
        return int(self.indices.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.indices, other.indices)

    def __repr__(self) -> str:
        head = ", ".join(str(int(i)) for i in self.indices[:6])
        tail = ", ..." if self.nnz > 6 else ""
        return f"SparseVector([{head}{tail}], nnz={self.nnz}, dim={self.dim})"


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class LshConfig:
    """Engine configuration shared verbatim by every node of a deployment.

    All per-node hash functions and sketch row hashes derive deterministically
    from ``master_seed``, which is what makes independently built partitions
    mergeable into one logical index.
    """

    hashes_per_table: int = 4
    num_tables: int = 16
    table_range: int = 1 << 20
    sketch_rows: int = 4
    sketch_cols: int = 0  # 0 means "derive as 4 * top_k"
    master_seed: int = 0x5A17E6D1
    top_k: int = 8

    def __post_init__(self) -> None:
        if self.hashes_per_table < 1:
            raise ConfigError("hashes_per_table must be >= 1")
        if self.num_tables < 1:
            raise ConfigError("num_tables must be >= 1")
        if self.table_range < 2 or not _is_power_of_two(self.table_range):
            raise ConfigError("table_range must be a power of two >= 2")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.sketch_cols == 0:
            object.__setattr__(self, "sketch_cols", 4 * self.top_k)
        if self.sketch_rows < 1 or self.sketch_cols < 1:
            raise ConfigError("sketch shape must be at least 1x1")
        if not (0 <= self.master_seed <= 0xFFFFFFFFFFFFFFFF):
            raise ConfigError("master_seed must fit in 64 bits")

    def fingerprint(self) -> int:
        """Stable 64-bit digest of every field; used to detect config skew."""
        acc = np.uint64(0xC0F1C0F1C0F1C0F1)
        for value in (
            self.hashes_per_table,
            self.num_tables,
            self.table_range,
            self.sketch_rows,
            self.sketch_cols,
            self.master_seed,
            self.top_k,
        ):
            acc = mix64(acc ^ np.uint64(value))
        return int(acc)


@dataclass(frozen=True)
class DatasetPartition:
    """One node's slice of the dataset: (VectorId, SparseVector) pairs.

    Partitions of one dataset must be disjoint in VectorId and jointly cover
    it; the partitioner is responsible for that.
    """

    node_id: int
    vectors: tuple[tuple[VectorId, SparseVector], ...]

    def __init__(self, node_id: int, vectors: Iterable[tuple[VectorId, SparseVector]]):
        pairs = tuple((int(i), v) for i, v in vectors)
        seen = set()
        for vid, _ in pairs:
            if not (0 <= vid < NULL_ID):
                raise InvalidVectorError(f"vector id {vid} outside the admissible range")
            if vid in seen:
                raise InvalidVectorError(f"duplicate vector id {vid} in partition")
            seen.add(vid)
        object.__setattr__(self, "node_id", int(node_id))
        object.__setattr__(self, "vectors", pairs)

    def __len__(self) -> int:
        return len(self.vectors)


def derive_seeds(master_seed: int, hashes_per_table: int, num_tables: int) -> np.ndarray:
    """Expand one master seed into a (num_tables x hashes_per_table) seed matrix.

    Pure function of its arguments: every node that starts from the same
    master seed obtains bit-identical hash functions. Uses a counter-mode
    expansion, so all entries are pairwise distinct with overwhelming
    probability.
    """
    if hashes_per_table < 1 or num_tables < 1:
        raise ConfigError("hashes_per_table and num_tables must be >= 1")
    flat = seed_stream(master_seed, hashes_per_table * num_tables, tag=_TAG_SLOT_SEEDS)
    out = flat.reshape(num_tables, hashes_per_table)
    out.setflags(write=False)
    return out
