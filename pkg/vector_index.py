"""Persistent store of function embeddings answering top-k cosine queries"""
import json
from pathlib import Path
import struct
import threading
import zlib

import numpy as np
from pyapputil.logutil import GetLogger
from pyapputil.exceptutil import ApplicationError, InvalidArgumentError

from cfg import FALLBACK
from util import atomic_write_bytes, atomic_write_text

INDEX_MAGIC = b"ESIM"
INDEX_VERSION = 1
# magic, version, dimension, entry count
_HEADER = struct.Struct("<4sHIQ")
_TRAILER = struct.Struct("<I")
ORIGIN_WIDTH = 120

class CorruptIndex(ApplicationError):
    """Raised when an index file fails its format checks"""

class DimensionMismatch(InvalidArgumentError):
    """Raised when a vector does not have the index dimension"""

class NonFiniteVector(InvalidArgumentError):
    """Raised when a vector holds NaN or infinity"""

class ZeroVector(InvalidArgumentError):
    """Raised when a zero vector is added, it has no direction to normalize"""


def _record_dtype(dimension):
    return np.dtype([("origin", f"S{ORIGIN_WIDTH}"), ("selector", "S8"), ("vector", "<f8", (dimension,))])

def _encode_selector(selector):
    if selector == FALLBACK:
        return FALLBACK.encode("ascii")
    if len(selector) != 10 or not selector.startswith("0x"):
        raise InvalidArgumentError(f"Invalid selector {selector}")
    return selector[2:].encode("ascii")

def _decode_selector(raw):
    text = raw.decode("ascii")
    return text if text == FALLBACK else "0x" + text


class VectorIndex:
    """
    Unit vectors keyed by (origin_id, selector). Writers replace the snapshot
    under a lock, readers work on whichever snapshot was current when they
    started.
    """

    def __init__(self, dimension):
        if dimension < 1:
            raise InvalidArgumentError("Index dimension must be positive")
        self.dimension = dimension
        self._lock = threading.Lock()
        self._snapshot = ((), {}, np.zeros((0, dimension), dtype=np.float64))

    def __len__(self):
        return len(self._snapshot[0])

    def __contains__(self, key):
        return tuple(key) in self._snapshot[1]

    def keys(self):
        return list(self._snapshot[0])

    def _check(self, vector):
        vector = np.asarray(vector, dtype=np.float64).ravel()
        if vector.size != self.dimension:
            raise DimensionMismatch(f"Vector has dimension {vector.size}, index has {self.dimension}")
        if not np.all(np.isfinite(vector)):
            raise NonFiniteVector("Vector has non-finite entries")
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise ZeroVector("Cannot index a zero vector")
        return vector / norm

    def add(self, key, vector):
        """
        Add or replace one entry

        Args:
            key:    (origin_id, selector) The entry key
            vector: (array) The embedding, normalized before storing
        """
        return self.add_many([(key, vector)])

    def add_many(self, items):
        """Add or replace several entries in one snapshot swap"""
        prepared = []
        for key, vector in items:
            origin, selector = key
            if len(origin.encode("utf-8")) > ORIGIN_WIDTH:
                raise InvalidArgumentError(f"Origin id {origin[:40]}... is longer than {ORIGIN_WIDTH} bytes")
            _encode_selector(selector)
            prepared.append(((origin, selector), self._check(vector)))
        with self._lock:
            keys, positions, vectors = self._snapshot
            keys = list(keys)
            positions = dict(positions)
            new_rows = []
            replaced = {}
            for key, vector in prepared:
                if key in positions:
                    replaced[positions[key]] = vector
                else:
                    positions[key] = len(keys)
                    keys.append(key)
                    new_rows.append(vector)
            vectors = vectors.copy() if replaced else vectors
            for row, vector in replaced.items():
                vectors[row] = vector
            if new_rows:
                vectors = np.vstack([vectors, np.array(new_rows)])
            self._snapshot = (tuple(keys), positions, vectors)
        return self

    def get(self, key):
        """Get the stored unit vector for a key, or None"""
        keys, positions, vectors = self._snapshot
        row = positions.get(tuple(key))
        return vectors[row].copy() if row is not None else None

    def search(self, query, k=10):
        """
        Scan every entry for the most similar vectors

        Args:
            query:  (array) The query embedding
            k:      (int) Number of results

        Returns:
            A list of (key, score), best first, ties in key order
        """
        keys, _, vectors = self._snapshot
        query = np.asarray(query, dtype=np.float64).ravel()
        if query.size != self.dimension:
            raise DimensionMismatch(f"Query has dimension {query.size}, index has {self.dimension}")
        if k <= 0 or not keys:
            return []
        norm = np.linalg.norm(query)
        scores = vectors @ (query / norm) if norm > 0 else np.zeros(len(keys))
        candidates = range(len(keys))
        if k < len(keys):
            # Everything scoring at least the k-th best, ties at the cut included
            cutoff = np.partition(scores, len(keys) - k)[len(keys) - k]
            candidates = np.flatnonzero(scores >= cutoff)
        order = sorted(candidates, key=lambda idx: (-scores[idx], keys[idx]))[:k]
        return [(keys[idx], float(scores[idx])) for idx in order]

    def to_json(self):
        keys, _, vectors = self._snapshot
        return {
            "dimension": self.dimension,
            "entries": [{"origin": origin, "selector": selector, "vector": [float(x) for x in vectors[idx]]}
                        for idx, (origin, selector) in enumerate(keys)],
        }


def index_add(index, key, vector):
    """Add or replace an entry, returning the index"""
    return index.add(key, vector)

def search(index, query, k=10):
    """Top-k entries by cosine similarity"""
    return index.search(query, k)

def persist(index, path):
    """
    Write an index file atomically: header, fixed-width little-endian records,
    then a CRC32 of everything before it

    Args:
        index:  (VectorIndex) The index
        path:   (Path) The file to write
    """
    keys, _, vectors = index._snapshot #pylint: disable=protected-access
    records = np.zeros(len(keys), dtype=_record_dtype(index.dimension))
    for idx, (origin, selector) in enumerate(keys):
        records["origin"][idx] = origin.encode("utf-8")
        records["selector"][idx] = _encode_selector(selector)
    if len(keys):
        records["vector"] = vectors
    body = _HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.dimension, len(keys)) + records.tobytes()
    atomic_write_bytes(path, body + _TRAILER.pack(zlib.crc32(body)))
    GetLogger().debug(f"Wrote {len(keys)} entries to {path}")

def load(path):
    """
    Read an index file

    Args:
        path:   (Path) The file to read

    Returns:
        A VectorIndex
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as ex:
        raise ApplicationError(f"Could not read index {path}: {ex}") from ex
    if len(data) < _HEADER.size + _TRAILER.size:
        raise CorruptIndex(f"{path} is truncated")
    magic, version, dimension, count = _HEADER.unpack_from(data)
    if magic != INDEX_MAGIC:
        raise CorruptIndex(f"{path} is not an index file")
    if version != INDEX_VERSION:
        raise CorruptIndex(f"{path} has index format version {version}, expected {INDEX_VERSION}")
    if dimension < 1:
        raise CorruptIndex(f"{path} has dimension {dimension}")
    dtype = _record_dtype(dimension)
    expected = _HEADER.size + count * dtype.itemsize + _TRAILER.size
    if len(data) != expected:
        raise CorruptIndex(f"{path} is {len(data)} bytes, expected {expected} for {count} entries")
    body = data[:-_TRAILER.size]
    (checksum,) = _TRAILER.unpack_from(data, len(body))
    if zlib.crc32(body) != checksum:
        raise CorruptIndex(f"{path} failed its checksum")

    records = np.frombuffer(body, dtype=dtype, count=count, offset=_HEADER.size)
    index = VectorIndex(dimension)
    keys = tuple((raw_origin.decode("utf-8"), _decode_selector(raw_selector))
                 for raw_origin, raw_selector in zip(records["origin"], records["selector"]))
    positions = {key: idx for idx, key in enumerate(keys)}
    if len(positions) != len(keys):
        raise CorruptIndex(f"{path} has duplicate keys")
    # Stored bit for bit, no renormalization on load
    index._snapshot = (keys, positions, np.array(records["vector"], dtype=np.float64).reshape(count, dimension)) #pylint: disable=protected-access
    return index

def export_json(index, path):
    """Write a JSON dump of an index for debugging"""
    atomic_write_text(path, json.dumps(index.to_json(), indent=1, sort_keys=True) + "\n")
