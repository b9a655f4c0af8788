"""Content-addressed object store with Merkle-DAG file chunking.

Objects are (data, links) pairs identified by a sha256 multihash of their
canonical bytes. Files larger than one chunk are stored as a list of leaf
objects plus an empty-data root linking them in order. Pinned DAGs survive
garbage collection; everything else is evicted once its last access is older
than the TTL.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .encoding import Reader, b58decode, b58encode
from .errors import IntegrityError, NotACommit, NotFound, OversizeData, StorageFull

CHUNK_SIZE = 262144
OBJECT_VERSION = 0x01
COMMIT_MARKER = 0x02
MULTIHASH_PREFIX = b"\x12\x20"
DEFAULT_TTL = 30 * 24 * 3600


@dataclass(frozen=True, order=True)
class Cid:
    multihash: bytes

    def __post_init__(self):
        if len(self.multihash) != 34 or self.multihash[:2] != MULTIHASH_PREFIX:
            raise ValueError("a Cid is a 34-byte sha2-256 multihash")

    @classmethod
    def from_digest(cls, digest: bytes) -> Cid:
        return cls(MULTIHASH_PREFIX + digest)

    @classmethod
    def parse(cls, text: str) -> Cid:
        try:
            raw = b58decode(text)
        except ValueError as exc:
            raise ValueError(f"not a Cid: {text!r} ({exc})") from None
        return cls(raw)

    @property
    def digest(self) -> bytes:
        return self.multihash[2:]

    @property
    def display(self) -> str:
        return b58encode(self.multihash)

    def __str__(self) -> str:
        return self.display

    def __repr__(self) -> str:
        return f"Cid({self.display})"


@dataclass(frozen=True)
class Link:
    cid: Cid
    total_size: int


@dataclass(frozen=True)
class CasObject:
    data: bytes = b""
    links: tuple[Link, ...] = ()

    def to_bytes(self) -> bytes:
        if len(self.data) > CHUNK_SIZE:
            raise OversizeData(f"object data is {len(self.data)} bytes, limit {CHUNK_SIZE}")
        parts = [bytes([OBJECT_VERSION]), struct.pack(">I", len(self.data)), self.data,
                 struct.pack(">I", len(self.links))]
        for link in self.links:
            parts.append(link.cid.multihash)
            parts.append(struct.pack(">Q", link.total_size))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> CasObject:
        r = Reader(raw)
        if r.u8() != OBJECT_VERSION:
            raise ValueError("unknown object version")
        data = r.take(r.u32())
        links = tuple(Link(Cid(r.take(34)), r.u64()) for _ in range(r.u32()))
        r.expect_end()
        return cls(data, links)

    @property
    def content_size(self) -> int:
        """Bytes of file content this object covers."""
        return len(self.data) if not self.links else sum(l.total_size for l in self.links)


def cid_of(obj: CasObject) -> Cid:
    return Cid.from_digest(hashlib.sha256(obj.to_bytes()).digest())


@dataclass(frozen=True)
class CommitObject:
    root: Cid
    parent: Cid | None
    timestamp: int
    metadata: str = ""

    def to_object(self, root_size: int = 0, parent_size: int = 0) -> CasObject:
        meta = self.metadata.encode()
        data = bytes([COMMIT_MARKER]) + struct.pack(">QI", self.timestamp, len(meta)) + meta
        links = [Link(self.root, root_size)]
        if self.parent is not None:
            links.append(Link(self.parent, parent_size))
        return CasObject(data, tuple(links))

    @classmethod
    def from_object(cls, obj: CasObject) -> CommitObject:
        if not obj.links or len(obj.links) > 2 or not obj.data or obj.data[0] != COMMIT_MARKER:
            raise NotACommit("object is not a commit")
        try:
            r = Reader(obj.data, 1)
            ts = r.u64()
            meta = r.take(r.u32()).decode()
            r.expect_end()
        except (ValueError, UnicodeDecodeError):
            raise NotACommit("object is not a commit") from None
        parent = obj.links[1].cid if len(obj.links) == 2 else None
        return cls(obj.links[0].cid, parent, ts, meta)


def chunk(data: bytes, size: int = CHUNK_SIZE) -> Iterator[bytes]:
    view = memoryview(data)
    for off in range(0, len(data), size):
        yield bytes(view[off:off + size])


# Backends hold raw object bytes plus an opaque metadata index.

class MemoryBackend:
    persistent = False

    def __init__(self):
        self.objects: dict[Cid, bytes] = {}
        self.index: dict = {}

    def has(self, cid: Cid) -> bool:
        return cid in self.objects

    def read(self, cid: Cid) -> bytes:
        return self.objects[cid]

    def write(self, cid: Cid, raw: bytes) -> None:
        self.objects[cid] = raw

    def delete(self, cid: Cid) -> None:
        del self.objects[cid]

    def keys(self) -> Iterable[Cid]:
        return list(self.objects)

    def load_index(self) -> dict:
        return self.index

    def save_index(self, index: dict) -> None:
        self.index = index


class DirectoryBackend:
    """One file per object, named by its Cid, plus an ``index.json`` sidecar."""

    persistent = True

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.objdir = self.root / "objects"
        self.objdir.mkdir(parents=True, exist_ok=True)

    def _path(self, cid: Cid) -> Path:
        return self.objdir / cid.display

    def has(self, cid: Cid) -> bool:
        return self._path(cid).exists()

    def read(self, cid: Cid) -> bytes:
        try:
            return self._path(cid).read_bytes()
        except FileNotFoundError:
            raise KeyError(cid) from None

    def write(self, cid: Cid, raw: bytes) -> None:
        tmp = self._path(cid).with_suffix(".tmp")
        tmp.write_bytes(raw)
        os.replace(tmp, self._path(cid))

    def delete(self, cid: Cid) -> None:
        self._path(cid).unlink()

    def keys(self) -> Iterable[Cid]:
        return [Cid.parse(p.name) for p in self.objdir.iterdir() if not p.name.endswith(".tmp")]

    def load_index(self) -> dict:
        path = self.root / "index.json"
        return json.loads(path.read_text()) if path.exists() else {}

    def save_index(self, index: dict) -> None:
        path = self.root / "index.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(index, sort_keys=True))
        os.replace(tmp, path)


@dataclass
class StoreStats:
    entry_count: int = 0
    total_bytes: int = 0
    pinned_bytes: int = 0
    dedup_savings: int = 0


class Store:
    """Content-addressed store over a pluggable backend.

    ``clock`` supplies the timestamps recorded as last access; pass a
    simulated clock for reproducible GC behaviour. Every read re-hashes the
    object and raises :class:`IntegrityError` on mismatch.
    """

    def __init__(self, backend=None, clock: Callable[[], float] = time.time,
                 capacity_bytes: int | None = None):
        self.backend = backend if backend is not None else MemoryBackend()
        self.clock = clock
        self.capacity_bytes = capacity_bytes
        self._lock = threading.RLock()
        idx = self.backend.load_index()
        self.last_access: dict[Cid, float] = {
            Cid.parse(k): v for k, v in idx.get("last_access", {}).items()}
        self.sizes: dict[Cid, int] = {Cid.parse(k): v for k, v in idx.get("sizes", {}).items()}
        self.pin_roots: set[Cid] = {Cid.parse(k) for k in idx.get("pins", [])}
        self.bytes_submitted: int = idx.get("bytes_submitted", 0)
        self.unique_bytes: int = idx.get("unique_bytes", 0)
        self._pinned_cache: set[Cid] | None = None

    # persistence

    def flush(self) -> None:
        if not getattr(self.backend, "persistent", True):
            return
        self.backend.save_index({
            "last_access": {c.display: t for c, t in self.last_access.items()},
            "sizes": {c.display: s for c, s in self.sizes.items()},
            "pins": sorted(c.display for c in self.pin_roots),
            "bytes_submitted": self.bytes_submitted,
            "unique_bytes": self.unique_bytes,
        })

    # objects

    def __contains__(self, cid: Cid) -> bool:
        return self.backend.has(cid)

    def __len__(self) -> int:
        return len(self.sizes)

    def put_object(self, obj: CasObject) -> tuple[Cid, bool]:
        """Store one object; returns its Cid and whether it was new."""
        raw = obj.to_bytes()
        cid = Cid.from_digest(hashlib.sha256(raw).digest())
        with self._lock:
            self.last_access[cid] = self.clock()
            if self.backend.has(cid):
                return cid, False
            if self.capacity_bytes is not None:
                used = sum(self.sizes.values())
                if used + len(raw) > self.capacity_bytes:
                    raise StorageFull(f"store full: {used} + {len(raw)} > {self.capacity_bytes}")
            self.backend.write(cid, raw)
            self.sizes[cid] = len(raw)
            self._pinned_cache = None
            return cid, True

    def get_object(self, cid: Cid, touch: bool = True) -> CasObject:
        try:
            raw = self.backend.read(cid)
        except KeyError:
            raise NotFound(cid) from None
        if hashlib.sha256(raw).digest() != cid.digest:
            raise IntegrityError(f"object {cid} does not match its hash")
        if touch:
            self.last_access[cid] = self.clock()
        return CasObject.from_bytes(raw)

    # files

    def put_file(self, data: bytes) -> Cid:
        with self._lock:
            self.bytes_submitted += len(data)
            if len(data) <= CHUNK_SIZE:
                cid, new = self.put_object(CasObject(bytes(data)))
                if new:
                    self.unique_bytes += len(data)
            else:
                links = []
                for piece in chunk(data):
                    cid, new = self.put_object(CasObject(piece))
                    if new:
                        self.unique_bytes += len(piece)
                    links.append(Link(cid, len(piece)))
                cid, _ = self.put_object(CasObject(b"", tuple(links)))
            self.flush()
            return cid

    def get_file(self, root: Cid) -> bytes:
        obj = self.get_object(root)
        if not obj.links:
            out = obj.data
        else:
            out = b"".join(self._gather(obj))
        self.flush()
        return out

    def _gather(self, obj: CasObject) -> Iterator[bytes]:
        for link in obj.links:
            child = self.get_object(link.cid)
            if child.links:
                yield from self._gather(child)
            else:
                yield child.data

    # versioning

    def commit(self, root: Cid, parent: Cid | None = None, metadata: str = "",
               timestamp: int | None = None) -> Cid:
        root_obj = self.get_object(root)
        parent_size = 0
        if parent is not None:
            CommitObject.from_object(self.get_object(parent))
            parent_size = self.sizes[parent]
        ts = int(self.clock()) if timestamp is None else timestamp
        commit = CommitObject(root, parent, ts, metadata)
        cid, _ = self.put_object(commit.to_object(root_obj.content_size, parent_size))
        self.flush()
        return cid

    def read_commit(self, cid: Cid) -> CommitObject:
        return CommitObject.from_object(self.get_object(cid))

    def history(self, cid: Cid) -> list[Cid]:
        """Commit Cids from ``cid`` back to the genesis commit."""
        out = []
        cur: Cid | None = cid
        while cur is not None:
            if cur in out:
                raise NotACommit("commit chain contains a cycle")
            out.append(cur)
            cur = self.read_commit(cur).parent
        return out

    # pinning and gc

    def closure(self, root: Cid) -> set[Cid]:
        seen: set[Cid] = set()
        stack = [root]
        while stack:
            cid = stack.pop()
            if cid in seen:
                continue
            seen.add(cid)
            stack.extend(l.cid for l in self.get_object(cid, touch=False).links)
        return seen

    def pinned(self) -> set[Cid]:
        if self._pinned_cache is None:
            marks: set[Cid] = set()
            for root in self.pin_roots:
                if root not in marks:
                    marks |= self.closure(root)
            self._pinned_cache = marks
        return set(self._pinned_cache)

    def is_pinned(self, cid: Cid) -> bool:
        return cid in self.pinned()

    def pin(self, root: Cid) -> None:
        with self._lock:
            if not self.backend.has(root):
                raise NotFound(root)
            self.closure(root)
            self.pin_roots.add(root)
            self._pinned_cache = None
            self.flush()

    def unpin(self, root: Cid) -> None:
        with self._lock:
            if not self.backend.has(root):
                raise NotFound(root)
            self.pin_roots.discard(root)
            self._pinned_cache = None
            self.flush()

    def gc(self, now: float | None = None, ttl: float = DEFAULT_TTL) -> list[Cid]:
        """Evict unpinned objects idle for longer than ``ttl``; returns them sorted."""
        with self._lock:
            now = self.clock() if now is None else now
            keep = self.pinned()
            evicted = sorted(
                cid for cid in self.sizes
                if cid not in keep and now - self.last_access.get(cid, 0) > ttl)
            for cid in evicted:
                self.backend.delete(cid)
                del self.sizes[cid]
                self.last_access.pop(cid, None)
            if evicted:
                self._pinned_cache = None
            self.flush()
            return evicted

    def stats(self) -> StoreStats:
        pinned = self.pinned()
        return StoreStats(
            entry_count=len(self.sizes),
            total_bytes=sum(self.sizes.values()),
            pinned_bytes=sum(self.sizes[c] for c in pinned if c in self.sizes),
            dedup_savings=self.bytes_submitted - self.unique_bytes,
        )

    def verify(self) -> list[Cid]:
        """Cids whose stored bytes no longer hash correctly or are missing."""
        bad = []
        for cid in sorted(self.sizes):
            try:
                self.get_object(cid, touch=False)
            except (IntegrityError, NotFound, ValueError):
                bad.append(cid)
        return bad
