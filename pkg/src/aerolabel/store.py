"""Raster storage backends.

Disk storage uses the AMAP binary format and is what the CLI produces.
The memory store keeps rasters in a dict, which lets desk-scale pipeline
experiments skip gigabytes of intermediate files; manifests reference the
same relative paths either way.
"""

from __future__ import annotations

from pathlib import Path

from .core_io import Raster, read_raster, write_raster


class DiskStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, rel_path: str, r: Raster) -> None:
        write_raster(r, self.root / rel_path)

    def get(self, rel_path: str) -> Raster:
        return read_raster(self.root / rel_path)

    def __contains__(self, rel_path: str) -> bool:
        return (self.root / rel_path).exists()


class MemoryStore:
    def __init__(self):
        self._rasters: dict[str, Raster] = {}

    def put(self, rel_path: str, r: Raster) -> None:
        self._rasters[rel_path] = r

    def get(self, rel_path: str) -> Raster:
        if rel_path not in self._rasters:
            raise KeyError(f"raster {rel_path!r} not in store")
        return self._rasters[rel_path]

    def __contains__(self, rel_path: str) -> bool:
        return rel_path in self._rasters
