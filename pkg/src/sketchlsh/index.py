"""Per-node LSH index: one bucket table per hash table over a data partition.

Buckets are addressed by the combined hash of a vector's slots for that
table. A probed bucket is always observed as a fixed-size heavy-hitter
sketch of the ids inserted there, so bucket aggregation never depends on
how skewed the underlying bucket is.

Storage note: bucket contents are kept columnar, as per-table sorted
(address -> id stream) arrays, and a bucket's sketch is materialized on
probe by replaying its insertion stream. The replay reproduces the exact
sketch state that incremental per-insert updates would have produced, while
keeping the resident footprint near the raw data size even when the address
space is much larger than the partition. The same storage serves the exact
(sketch-free) aggregation mode directly.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    DatasetPartition,
    LshConfig,
    SketchLshError,
    VectorId,
)
from .hashing import HashFamily
from .sketch import TopkapiSketch, row_seeds_from_master

_INDEX_MAGIC = 0x58494C53  # "SLIX"
_INDEX_VERSION = 1
_BUCKET_SECTION = b"XBKT"


@dataclass(frozen=True)
class _TableBuckets:
    """Columnar buckets of one table: sorted addresses with id streams."""

    addrs: np.ndarray  # (n_occupied,) uint64, sorted ascending
    offsets: np.ndarray  # (n_occupied + 1,) int64 into ids
    ids: np.ndarray  # (n_inserts,) uint64, per-bucket insertion order

    @classmethod
    def build(cls, addrs: np.ndarray, ids: np.ndarray) -> "_TableBuckets":
        order = np.argsort(addrs, kind="stable")  # stable keeps arrival order
        sorted_addrs = addrs[order]
        sorted_ids = ids[order]
        if sorted_addrs.size:
            boundaries = np.flatnonzero(sorted_addrs[1:] != sorted_addrs[:-1]) + 1
            starts = np.concatenate(([0], boundaries))
            uniq = sorted_addrs[starts]
            offsets = np.concatenate((starts, [sorted_addrs.size])).astype(np.int64)
        else:
            uniq = np.empty(0, dtype=np.uint64)
            offsets = np.zeros(1, dtype=np.int64)
        return cls(addrs=uniq, offsets=offsets, ids=sorted_ids)

    def bucket(self, addr: int) -> np.ndarray:
        pos = np.searchsorted(self.addrs, np.uint64(addr))
        if pos >= self.addrs.size or self.addrs[pos] != np.uint64(addr):
            return self.ids[:0]
        return self.ids[self.offsets[pos] : self.offsets[pos + 1]]

    @property
    def occupied(self) -> int:
        return int(self.addrs.size)


class NodeIndex:
    """One node's LSH tables over its partition, plus the shared hash family.

    Frozen after :func:`preprocess` returns; all reads (probes, exact
    counting) may then run fully concurrently.
    """

    def __init__(
        self,
        config: LshConfig,
        node_id: int,
        tables: list[_TableBuckets],
        vector_count: int,
        rejected: tuple[tuple[VectorId, str], ...] = (),
    ):
        if len(tables) != config.num_tables:
            raise ConfigError("table count does not match configuration")
        self.config = config
        self.node_id = node_id
        self.tables = tables
        self.vector_count = vector_count
        self.rejected = rejected
        self.row_seeds = row_seeds_from_master(config.master_seed, config.sketch_rows)

    # -- probing -----------------------------------------------------------------

    def empty_sketch(self) -> TopkapiSketch:
        return TopkapiSketch(self.config.sketch_rows, self.config.sketch_cols, self.row_seeds)

    def sketch_at(self, table: int, addr: int) -> TopkapiSketch:
        """The bucket sketch at (table, addr); empty sketch if unoccupied."""
        s = self.empty_sketch()
        ids = self.tables[table].bucket(addr)
        if ids.size:
            s.insert_many(ids)
        return s

    def local_candidates(self, addresses: np.ndarray) -> TopkapiSketch:
        """Merge of this node's addressed bucket sketches for one query.

        Folds tables left to right; empty buckets contribute the identity.
        No distance computation is involved anywhere on this path.
        """
        addresses = np.asarray(addresses, dtype=np.uint64)
        if addresses.shape != (self.config.num_tables,):
            raise ConfigError(
                f"expected {self.config.num_tables} addresses, got {addresses.shape}"
            )
        if addresses.size and int(addresses.max()) >= self.config.table_range:
            raise ConfigError("address out of table range")
        merged = self.empty_sketch()
        for t in range(self.config.num_tables):
            ids = self.tables[t].bucket(int(addresses[t]))
            if ids.size == 0:
                continue  # identity contribution
            s = self.empty_sketch()
            s.insert_many(ids)
            merged = merged.merge(s)
        return merged

    def exact_candidates(self, addresses: np.ndarray) -> dict[int, int]:
        """Exact per-id occurrence counts over the addressed buckets."""
        addresses = np.asarray(addresses, dtype=np.uint64)
        if addresses.shape != (self.config.num_tables,):
            raise ConfigError(
                f"expected {self.config.num_tables} addresses, got {addresses.shape}"
            )
        chunks = [
            self.tables[t].bucket(int(addresses[t]))
            for t in range(self.config.num_tables)
        ]
        allids = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.uint64)
        if allids.size == 0:
            return {}
        uniq, counts = np.unique(allids, return_counts=True)
        return {int(i): int(c) for i, c in zip(uniq, counts)}

    @property
    def occupied_slots(self) -> list[int]:
        return [t.occupied for t in self.tables]

    # -- persistence ----------------------------------------------------------------

    def save(self, path) -> None:
        """Write the index: header, per-bucket sketches, then raw buckets.

        The sketch section is self-contained (header + per occupied address
        one serialized sketch). The trailing bucket section carries the
        columnar id streams, which the exact aggregation mode needs and from
        which probe-time sketches are rebuilt bit-identically.
        """
        with open(path, "wb") as f:
            f.write(
                struct.pack(
                    "<IIQIIQ",
                    _INDEX_MAGIC,
                    _INDEX_VERSION,
                    self.config.fingerprint(),
                    self.node_id,
                    self.config.num_tables,
                    self.vector_count,
                )
            )
            for t in range(self.config.num_tables):
                tb = self.tables[t]
                f.write(struct.pack("<Q", tb.occupied))
                for pos in range(tb.occupied):
                    addr = int(tb.addrs[pos])
                    f.write(struct.pack("<Q", addr))
                    f.write(self.sketch_at(t, addr).to_bytes())
            f.write(_BUCKET_SECTION)
            for tb in self.tables:
                f.write(struct.pack("<QQ", tb.addrs.size, tb.ids.size))
                f.write(tb.addrs.astype("<u8").tobytes())
                f.write(tb.offsets.astype("<i8").tobytes())
                f.write(tb.ids.astype("<u8").tobytes())

    @classmethod
    def load(cls, path, config: LshConfig) -> "NodeIndex":
        """Reload a saved index; the caller supplies the deployment config."""
        with open(path, "rb") as f:
            data = f.read()
        off = 0
        magic, version, fp, node_id, num_tables, vector_count = struct.unpack_from(
            "<IIQIIQ", data, off
        )
        off += struct.calcsize("<IIQIIQ")
        if magic != _INDEX_MAGIC:
            raise SketchLshError("not an index file (bad magic)")
        if version != _INDEX_VERSION:
            raise SketchLshError(f"unsupported index version {version}")
        if fp != config.fingerprint():
            raise ConfigError("index was built under a different configuration")
        if num_tables != config.num_tables:
            raise ConfigError("table count mismatch against configuration")
        # Skip (but bounds-check) the sketch section; buckets rebuild it exactly.
        for _ in range(num_tables):
            (n_occ,) = struct.unpack_from("<Q", data, off)
            off += 8
            for _ in range(n_occ):
                off += 8  # address
                (plen,) = struct.unpack_from("<I", data, off)
                off += 4 + plen
        if data[off : off + 4] != _BUCKET_SECTION:
            raise SketchLshError("missing bucket section")
        off += 4
        tables = []
        for _ in range(num_tables):
            n_addr, n_ids = struct.unpack_from("<QQ", data, off)
            off += 16
            addrs = np.frombuffer(data, dtype="<u8", count=n_addr, offset=off).astype(
                np.uint64
            )
            off += 8 * n_addr
            offsets = np.frombuffer(
                data, dtype="<i8", count=n_addr + 1, offset=off
            ).astype(np.int64)
            off += 8 * (n_addr + 1)
            ids = np.frombuffer(data, dtype="<u8", count=n_ids, offset=off).astype(
                np.uint64
            )
            off += 8 * n_ids
            tables.append(_TableBuckets(addrs=addrs, offsets=offsets, ids=ids))
        return cls(
            config=config,
            node_id=node_id,
            tables=tables,
            vector_count=vector_count,
        )


def _hash_chunk(family, pairs):
    ok_ids: list[int] = []
    rows: list[np.ndarray] = []
    rejected: list[tuple[int, str]] = []
    for vid, vec in pairs:
        if vec.nnz == 0:
            rejected.append((vid, "empty vector"))
            continue
        rows.append(family.addresses(vec))
        ok_ids.append(vid)
    return ok_ids, rows, rejected


def preprocess(
    partition: DatasetPartition, config: LshConfig, workers: int = 1
) -> NodeIndex:
    """Build a node's index over its partition.

    Every valid vector is routed into one bucket per table (its combined
    slot hash under that table's seed). Empty vectors are rejected with a
    per-record report and indexing continues. With ``workers`` > 1 the
    hashing runs data-parallel over contiguous chunks; chunk outputs are
    concatenated in order, so the result is identical to the serial build.
    """
    n = len(partition.vectors)
    family = HashFamily.from_config(config)
    if workers <= 1 or n < 2 * workers:
        ok_ids, rows, rejected = _hash_chunk(family, partition.vectors)
    else:
        step = (n + workers - 1) // workers
        chunks = [partition.vectors[i : i + step] for i in range(0, n, step)]
        ok_ids, rows, rejected = [], [], []
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for cids, crows, crej in pool.map(lambda c: _hash_chunk(family, c), chunks):
                ok_ids.extend(cids)
                rows.extend(crows)
                rejected.extend(crej)
    if rows:
        addr_matrix = np.vstack(rows)  # (n_ok, num_tables)
        ids = np.asarray(ok_ids, dtype=np.uint64)
    else:
        addr_matrix = np.empty((0, config.num_tables), dtype=np.uint64)
        ids = np.empty(0, dtype=np.uint64)
    tables = [
        _TableBuckets.build(addr_matrix[:, t].copy(), ids)
        for t in range(config.num_tables)
    ]
    return NodeIndex(
        config=config,
        node_id=partition.node_id,
        tables=tables,
        vector_count=int(ids.size),
        rejected=tuple(rejected),
    )
