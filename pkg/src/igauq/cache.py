"""Content-checked disk cache for per-sample solver results.

Entries are binary containers named by the SHA-256 of their key.  The key
(geometry hash, level, parameter hash and a settings hash) is stored inside
the entry as well, and a mismatch or checksum failure raises
:class:`CacheCorruption` instead of returning stale data.
"""

from __future__ import annotations

import hashlib
import json
import os

from .container import ContainerError, read_container, write_container


class CacheCorruption(RuntimeError):
    pass


def make_key(geometry_hash, level, y_hash, settings_hash=""):
    return {"geometry": geometry_hash, "level": int(level), "y": y_hash, "settings": settings_hash}


def settings_hash(settings: dict):
    blob = json.dumps(settings, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:32]


class DiskCache:
    def __init__(self, root):
        self.root = os.fspath(root)
        os.makedirs(self.root, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self.writes = 0

    def path(self, key):
        name = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()
        return os.path.join(self.root, name[:2], name + ".bin")

    def get(self, key):
        """Arrays stored under ``key`` or ``None``."""
        p = self.path(key)
        if not os.path.exists(p):
            self.misses += 1
            return None
        try:
            _, meta, arrays = read_container(p, kind="cache-entry")
        except (ContainerError, OSError, KeyError) as exc:
            raise CacheCorruption(f"cache entry {p} is corrupt: {exc}") from exc
        if meta.get("key") != key:
            raise CacheCorruption(f"cache entry {p} holds a different key")
        self.hits += 1
        return arrays

    def put(self, key, arrays):
        write_container(self.path(key), "cache-entry", {"key": key}, arrays)
        self.writes += 1

    def stats(self):
        return {"hits": self.hits, "misses": self.misses, "writes": self.writes}
