"""Shared data model and on-disk formats: rasters, annotations, manifests.

Raster files are a fixed little-endian binary format (magic ``AMAP0001``)
so attention values survive every pipeline stage bit-exactly; PNG is only
used for human-facing previews.  Manifests are JSON-lines so multi-million
entry corpora can be streamed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RASTER_MAGIC = b"AMAP0001"

DOMAIN_TAGS = ("source", "target")
STAGE_TAGS = ("real", "synthetic", "pseudo-labeled", "refined")


class RasterFormatError(Exception):
    """Raised when a raster file is malformed or a raster is invalid."""


class ManifestError(Exception):
    """Raised on manifest schema or invariant violations."""


@dataclass(frozen=True)
class Raster:
    """A width x height x channels grid of float32 values.

    ``data`` is stored channel-major, shape (channels, height, width).
    All values must be finite.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3:
            raise RasterFormatError(f"raster data must be 2-D or 3-D, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise RasterFormatError("raster contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def channel(self, i: int) -> "Raster":
        return Raster(self.data[i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Raster):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class Annotation:
    """An object-center record; confidence absent (None) for ground truth."""

    cx: float
    cy: float
    confidence: float | None = None

    def __post_init__(self):
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        d = {"cx": self.cx, "cy": self.cy}
        if self.confidence is not None:
            d["confidence"] = self.confidence
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Annotation":
        return cls(cx=float(d["cx"]), cy=float(d["cy"]),
                   confidence=None if d.get("confidence") is None else float(d["confidence"]))


@dataclass
class ManifestEntry:
    image_path: str
    width: int
    height: int
    gsd_cm_per_px: float
    has_vehicles: bool
    annotations: list[Annotation] = field(default_factory=list)
    domain_tag: str = "source"
    stage_tag: str = "synthetic"
    map_path: str | None = None
    weak_only: bool = False

    def validate(self):
        if self.domain_tag not in DOMAIN_TAGS:
            raise ManifestError(f"unknown domain_tag {self.domain_tag!r}")
        if self.stage_tag not in STAGE_TAGS:
            raise ManifestError(f"unknown stage_tag {self.stage_tag!r}")
        if not self.weak_only and self.has_vehicles != bool(self.annotations):
            raise ManifestError(
                f"entry {self.image_path!r}: has_vehicles={self.has_vehicles} inconsistent "
                f"with {len(self.annotations)} annotations (set weak_only for weak labels)"
            )

    def to_json(self) -> dict:
        d = {
            "image_path": self.image_path,
            "map_path": self.map_path,
            "width": self.width,
            "height": self.height,
            "gsd_cm_per_px": self.gsd_cm_per_px,
            "has_vehicles": self.has_vehicles,
            "annotations": [a.to_json() for a in self.annotations],
            "domain_tag": self.domain_tag,
            "stage_tag": self.stage_tag,
        }
        if self.weak_only:
            d["weak_only"] = True
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ManifestEntry":
        return cls(
            image_path=d["image_path"],
            map_path=d.get("map_path"),
            width=int(d["width"]),
            height=int(d["height"]),
            gsd_cm_per_px=float(d["gsd_cm_per_px"]),
            has_vehicles=bool(d["has_vehicles"]),
            annotations=[Annotation.from_json(a) for a in d.get("annotations", [])],
            domain_tag=d["domain_tag"],
            stage_tag=d["stage_tag"],
            weak_only=bool(d.get("weak_only", False)),
        )


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def validate(self):
        seen = set()
        for e in self.entries:
            e.validate()
            if e.image_path in seen:
                raise ManifestError(f"duplicate image path {e.image_path!r}")
            seen.add(e.image_path)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def write_raster(r: Raster, path: str | Path) -> None:
    """Write ``r`` in the AMAP0001 binary format (LE u32 dims, LE f32 payload)."""
    arr = np.ascontiguousarray(r.data, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise RasterFormatError("refusing to write non-finite raster")
    header = RASTER_MAGIC + struct.pack("<III", r.width, r.height, r.channels)
    payload = arr.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_raster(path: str | Path) -> Raster:
    """Inverse of :func:`write_raster`; rejects bad magic / truncation / overflow."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20:
        raise RasterFormatError(f"{path}: file too short for header ({len(blob)} bytes)")
    if blob[:8] != RASTER_MAGIC:
        raise RasterFormatError(f"{path}: bad magic {blob[:8]!r}")
    width, height, channels = struct.unpack("<III", blob[8:20])
    n = width * height * channels
    if n > 2**31:
        raise RasterFormatError(f"{path}: raster size {n} exceeds supported limit")
    expected = 20 + 4 * n
    if len(blob) != expected:
        raise RasterFormatError(
            f"{path}: truncated or oversized payload ({len(blob)} bytes, expected {expected})"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=20).reshape(channels, height, width)
    return Raster(np.array(data, dtype=np.float32))


def save_manifest(m: DatasetManifest, path: str | Path) -> None:
    """Write one JSON object per entry (JSON-lines, UTF-8)."""
    m.validate()
    with open(path, "w", encoding="utf-8") as f:
        for e in m.entries:
            f.write(json.dumps(e.to_json()) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
            try:
                entries.append(ManifestEntry.from_json(d))
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: invalid entry: {exc!r}") from exc
    m = DatasetManifest(entries)
    m.validate()
    return m


def export_preview(r: Raster, path: str | Path) -> None:
    """Write an 8-bit PNG preview with per-channel min-max scaling.

    Non-normative: for human inspection only.  Constant channels render as
    mid-gray (the same convention as constant-map normalization).
    """
    from PIL import Image

    if r.channels not in (1, 3):
        raise RasterFormatError(f"preview supports 1 or 3 channels, got {r.channels}")
    chans = []
    for c in range(r.channels):
        m = r.data[c]
        lo, hi = float(m.min()), float(m.max())
        if hi > lo:
            scaled = (m - lo) / (hi - lo)
        else:
            scaled = np.full_like(m, 0.5)
        chans.append(np.round(scaled * 255.0).astype(np.uint8))
    if r.channels == 1:
        img = Image.fromarray(chans[0], mode="L")
    else:
        img = Image.fromarray(np.stack(chans, axis=-1), mode="RGB")
    img.save(path, format="PNG")
