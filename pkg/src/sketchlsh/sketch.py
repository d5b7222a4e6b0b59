"""Fixed-size mergeable heavy-hitter sketch used in place of LSH buckets.

The sketch is a W x B grid of cells, each holding one candidate item and a
majority-vote counter. Inserting routes the item to one cell per row (by a
seeded per-row hash) and applies the classic increment / decrement / replace
rule, so a cell's counter retains any item that strictly outnumbers all
other arrivals to that cell. Two sketches built over disjoint streams merge
cell-by-cell into a sketch for the combined stream, which is what allows
bucket aggregation across machines by pairwise merging instead of shipping
bucket contents.

Memory is fixed at construction: no insert ever grows the sketch.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ._bits import mix64, range_map, seed_stream
from .core import NULL_ID, SketchLshError

_TAG_ROW_SEEDS = 0x70FFA
_NULL = np.uint64(NULL_ID)

try:  # numba accelerates the per-item insert loop; the pure path is identical
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


class ShapeMismatchError(SketchLshError, ValueError):
    """Sketches with different shapes or row seeds cannot be merged."""


def row_seeds_from_master(master_seed: int, rows: int) -> np.ndarray:
    """Per-row hash seeds for one deployment's sketches.

    Derived from the master seed under a tag of their own, so bucket
    addressing and in-sketch routing stay uncorrelated. Every sketch in one
    index must share these seeds or merging is meaningless.
    """
    return seed_stream(master_seed, rows, tag=_TAG_ROW_SEEDS)


def _insert_loop_py(ids, counts, items, bins):
    n, rows = bins.shape
    one = np.uint64(1)
    for i in range(n):
        x = items[i]
        for r in range(rows):
            b = bins[i, r]
            if ids[r, b] == x:
                counts[r, b] += one
            elif counts[r, b] == 0:
                ids[r, b] = x
                counts[r, b] = one
            else:
                counts[r, b] -= one


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _insert_loop_nb(ids, counts, items, bins):  # pragma: no cover - jitted
        n, rows = bins.shape
        for i in range(n):
            x = items[i]
            for r in range(rows):
                b = bins[i, r]
                if ids[r, b] == x:
                    counts[r, b] += 1
                elif counts[r, b] == 0:
                    ids[r, b] = x
                    counts[r, b] = 1
                else:
                    counts[r, b] -= 1

    _insert_loop = _insert_loop_nb
else:  # pragma: no cover
    _insert_loop = _insert_loop_py


@dataclass(frozen=True)
class HeavyHitterSet:
    """Ranked heavy-hitter report: (item id, estimated count), descending."""

    entries: tuple[tuple[int, int], ...]

    def ids(self) -> list[int]:
        return [i for i, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


class TopkapiSketch:
    """W x B grid of (candidate id, majority counter) cells.

    Cells start as (null, 0); a zero counter means the cell's id slot is up
    for grabs. The grid never grows, so its memory footprint after any
    number of inserts equals the footprint at construction.
    """

    __slots__ = ("rows", "cols", "row_seeds", "ids", "counts")

    def __init__(self, rows: int, cols: int, row_seeds: np.ndarray):
        if rows < 1 or cols < 1:
            raise ValueError("sketch shape must be at least 1x1")
        row_seeds = np.asarray(row_seeds, dtype=np.uint64)
        if row_seeds.shape != (rows,):
            raise ValueError(f"expected {rows} row seeds, got shape {row_seeds.shape}")
        self.rows = rows
        self.cols = cols
        self.row_seeds = row_seeds
        self.ids = np.full((rows, cols), _NULL, dtype=np.uint64)
        self.counts = np.zeros((rows, cols), dtype=np.uint64)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def empty_like(cls, other: "TopkapiSketch") -> "TopkapiSketch":
        return cls(other.rows, other.cols, other.row_seeds)

    def copy(self) -> "TopkapiSketch":
        out = TopkapiSketch.empty_like(self)
        out.ids[:] = self.ids
        out.counts[:] = self.counts
        return out

    # -- stream ingestion ------------------------------------------------------

    def _row_bins(self, items: np.ndarray) -> np.ndarray:
        """Cell column per (item, row), shape (len(items), rows)."""
        h = mix64(mix64(items)[:, None] ^ self.row_seeds[None, :])
        return range_map(h, self.cols).astype(np.int64)

    def insert(self, item: int) -> None:
        """Ingest one item id. Not internally synchronized."""
        self.insert_many(np.asarray([item], dtype=np.uint64))

    def insert_many(self, items: np.ndarray) -> None:
        """Ingest a stream of item ids in order.

        Equivalent to repeated :meth:`insert`; the batched form exists
        because per-cell routing vectorizes while the cell updates must stay
        sequential (the counter rule is order-sensitive).
        """
        items = np.ascontiguousarray(items, dtype=np.uint64)
        if items.size == 0:
            return
        bins = self._row_bins(items)
        _insert_loop(self.ids, self.counts, items, bins)

    # -- merging ---------------------------------------------------------------

    def same_shape(self, other: "TopkapiSketch") -> bool:
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and np.array_equal(self.row_seeds, other.row_seeds)
        )

    def merge(self, other: "TopkapiSketch") -> "TopkapiSketch":
        """Combine two sketches over disjoint streams into one.

        Cell rule: equal ids sum their counters; differing ids keep the
        larger-count id with the difference of the counters. A counter tie
        between two real ids resolves to the smaller id with counter 0 (no
        surviving majority); the null placeholder always loses, which makes
        the empty sketch an exact identity element. The result is
        independent of argument order, cell for cell.
        """
        if not self.same_shape(other):
            raise ShapeMismatchError(
                "cannot merge sketches with different shape or row seeds"
            )
        a_ids, a_cnt = self.ids, self.counts
        b_ids, b_cnt = other.ids, other.counts
        same = a_ids == b_ids
        a_wins = a_cnt > b_cnt
        b_wins = b_cnt > a_cnt
        # Tie between differing ids: the null placeholder loses, otherwise
        # the smaller id survives with counter 0.
        tie_ids = np.where(
            a_ids == _NULL, b_ids, np.where(b_ids == _NULL, a_ids, np.minimum(a_ids, b_ids))
        )
        out = TopkapiSketch.empty_like(self)
        out.ids[:] = np.where(same, a_ids, np.where(a_wins, a_ids, np.where(b_wins, b_ids, tie_ids)))
        with np.errstate(over="ignore"):
            summed = a_cnt + b_cnt
            diff = np.where(a_wins, a_cnt - b_cnt, b_cnt - a_cnt)
        out.counts[:] = np.where(same, summed, diff)
        return out

    # -- reporting ---------------------------------------------------------------

    def heavy_hitters(self, threshold: int = 0) -> HeavyHitterSet:
        """All cell candidates with counter strictly above ``threshold``.

        An id surviving in several rows reports its maximum counter. Sorted
        by descending count, ties broken by ascending id.
        """
        if threshold < 0:
            raise ValueError("threshold must be >= 0")
        mask = self.counts > np.uint64(threshold)
        best: dict[int, int] = {}
        for i, c in zip(self.ids[mask].tolist(), self.counts[mask].tolist()):
            if i == NULL_ID:
                continue
            if c > best.get(i, -1):
                best[i] = c
        ranked = sorted(best.items(), key=lambda ic: (-ic[1], ic[0]))
        return HeavyHitterSet(entries=tuple(ranked))

    # -- serialization ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Length-prefixed little-endian wire form; bit-exact round trip.

        Layout: u32 payload length, then u32 rows, u32 cols, rows x u64 row
        seed, then rows*cols cells of (u64 id, u64 count) in row-major order.
        """
        header = struct.pack("<II", self.rows, self.cols) + self.row_seeds.astype(
            "<u8"
        ).tobytes()
        cells = np.empty((self.rows, self.cols, 2), dtype="<u8")
        cells[:, :, 0] = self.ids
        cells[:, :, 1] = self.counts
        payload = header + cells.tobytes()
        return struct.pack("<I", len(payload)) + payload

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["TopkapiSketch", int]:
        """Parse one serialized sketch; returns (sketch, offset past it)."""
        if len(buf) - offset < 4:
            raise ValueError("truncated sketch: missing length prefix")
        (plen,) = struct.unpack_from("<I", buf, offset)
        start = offset + 4
        end = start + plen
        if len(buf) < end:
            raise ValueError("truncated sketch payload")
        rows, cols = struct.unpack_from("<II", buf, start)
        seeds_off = start + 8
        cells_off = seeds_off + 8 * rows
        expected = 8 + 8 * rows + 16 * rows * cols
        if plen != expected:
            raise ValueError(f"sketch payload length {plen} != expected {expected}")
        row_seeds = np.frombuffer(buf, dtype="<u8", count=rows, offset=seeds_off)
        cells = np.frombuffer(
            buf, dtype="<u8", count=2 * rows * cols, offset=cells_off
        ).reshape(rows, cols, 2)
        out = cls(rows, cols, row_seeds.astype(np.uint64))
        out.ids[:] = cells[:, :, 0]
        out.counts[:] = cells[:, :, 1]
        return out, end

    # -- dunder ----------------------------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, TopkapiSketch):
            return NotImplemented
        return (
            self.same_shape(other)
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self) -> str:
        occupied = int(np.count_nonzero(self.ids != _NULL))
        return f"TopkapiSketch({self.rows}x{self.cols}, {occupied} occupied cells)"


def exact_counter(stream: Iterable[int]) -> Counter:
    """Exact multiset count of a stream of ids.

    The reference both for tests and for the sketch-free "exact" aggregation
    mode, where candidate frequencies are counted without approximation.
    """
    return Counter(int(x) for x in stream)


def merge_count_maps(maps: Iterable[Mapping[int, int]]) -> Counter:
    """Sum per-id counts across disjoint partitions (exact-mode reduction)."""
    total: Counter = Counter()
    for m in maps:
        total.update(m)
    return total
