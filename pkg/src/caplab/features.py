"""Pre-extracted image feature storage: the CAPF container and helpers.

CAPF layout, all integers little-endian:

    magic "CAPF" | u32 version (=1) | u32 record_count | u32 regions | u32 dim
    index: per record -> u16 id_length | id bytes (UTF-8) | u64 payload_offset
    payload: per record -> regions*dim float32, row-major

payload_offset is relative to the start of the payload section. A sidecar
`<name>.manifest.json` describes the extractor that produced the file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import CorruptionError, DataError, FormatError, ParseError, VersionError

MAGIC = b"CAPF"
CAPF_VERSION = 1

_HEADER = struct.Struct("<4sIIII")
_INDEX_HEAD = struct.Struct("<H")
_OFFSET = struct.Struct("<Q")


@dataclass
class ExtractorManifest:
    """Provenance of a feature file: which encoder made it and how."""

    cnn_name: str
    parameter_count_thousands: int
    regions: int
    dim: int
    preprocessing: str
    extractor_version: str

    def __post_init__(self):
        if self.parameter_count_thousands <= 0:
            raise DataError("parameter_count_thousands must be positive")
        if self.regions < 1 or self.dim < 1:
            raise DataError("regions and dim must be >= 1")

    def to_dict(self) -> dict:
        return {
            "cnn_name": self.cnn_name,
            "parameter_count_thousands": self.parameter_count_thousands,
            "regions": self.regions,
            "dim": self.dim,
            "preprocessing": self.preprocessing,
            "extractor_version": self.extractor_version,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "ExtractorManifest":
        try:
            return cls(
                cnn_name=str(blob["cnn_name"]),
                parameter_count_thousands=int(blob["parameter_count_thousands"]),
                regions=int(blob["regions"]),
                dim=int(blob["dim"]),
                preprocessing=str(blob["preprocessing"]),
                extractor_version=str(blob["extractor_version"]),
            )
        except KeyError as exc:
            raise ParseError(f"manifest missing field {exc.args[0]!r}") from exc


@dataclass
class FeatureSet:
    """One image's feature grid: regions x dim, float32."""

    image_id: str
    regions: np.ndarray

    def __post_init__(self):
        self.regions = np.ascontiguousarray(self.regions, dtype=np.float32)
        if self.regions.ndim != 2:
            raise DataError(f"features for {self.image_id!r} must be 2-D")
        if not np.isfinite(self.regions).all():
            raise DataError(f"features for {self.image_id!r} contain nan or inf")


class FeatureStore:
    """Feature sets for many images, uniform shape, insertion-ordered."""

    def __init__(self, manifest: ExtractorManifest, feature_sets=()):
        self.manifest = manifest
        self._sets: dict[str, FeatureSet] = {}
        for fs in feature_sets:
            self.add(fs)

    @property
    def regions(self) -> int:
        return self.manifest.regions

    @property
    def dim(self) -> int:
        return self.manifest.dim

    def add(self, fs: FeatureSet):
        if fs.image_id in self._sets:
            raise DataError(f"duplicate image id {fs.image_id!r} in feature store")
        if fs.regions.shape != (self.manifest.regions, self.manifest.dim):
            raise DataError(
                f"features for {fs.image_id!r} have shape {fs.regions.shape}, "
                f"store declares ({self.manifest.regions}, {self.manifest.dim})"
            )
        self._sets[fs.image_id] = fs

    def __contains__(self, image_id):
        return image_id in self._sets

    def __getitem__(self, image_id) -> FeatureSet:
        try:
            return self._sets[image_id]
        except KeyError:
            raise DataError(f"image id {image_id!r} not in feature store") from None

    def __len__(self):
        return len(self._sets)

    def items(self):
        return self._sets.items()

    def image_ids(self) -> list[str]:
        return list(self._sets)


def manifest_path(capf_path) -> Path:
    return Path(capf_path).with_suffix(".manifest.json")


def write_capf(store: FeatureStore, path):
    """Write a feature store to `path` plus its manifest sidecar."""
    path = Path(path)
    record_bytes = store.regions * store.dim * 4
    index = bytearray()
    payload = bytearray()
    for k, (image_id, fs) in enumerate(store.items()):
        raw = image_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"image id too long to index: {image_id[:32]!r}...")
        index += _INDEX_HEAD.pack(len(raw)) + raw + _OFFSET.pack(k * record_bytes)
        payload += np.ascontiguousarray(fs.regions, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, CAPF_VERSION, len(store), store.regions, store.dim))
        fh.write(index)
        fh.write(payload)
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(store.manifest.to_dict(), fh, indent=2)


def read_capf(path) -> FeatureStore:
    """Read a CAPF file and its manifest sidecar back into a FeatureStore."""
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: too small to hold a CAPF header")
    magic, version, count, regions, dim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CAPF_VERSION:
        raise VersionError(f"{path}: format version {version}, reader supports {CAPF_VERSION}")

    pos = _HEADER.size
    entries = []
    for _ in range(count):
        if pos + _INDEX_HEAD.size > len(blob):
            raise CorruptionError(f"{path}: index truncated")
        (id_len,) = _INDEX_HEAD.unpack_from(blob, pos)
        pos += _INDEX_HEAD.size
        if pos + id_len + _OFFSET.size > len(blob):
            raise CorruptionError(f"{path}: index truncated")
        image_id = blob[pos:pos + id_len].decode("utf-8")
        pos += id_len
        (offset,) = _OFFSET.unpack_from(blob, pos)
        pos += _OFFSET.size
        entries.append((image_id, offset))

    payload_start = pos
    record_bytes = regions * dim * 4
    expected = count * record_bytes
    if len(blob) - payload_start != expected:
        raise CorruptionError(
            f"{path}: header says {count} records ({expected} payload bytes), "
            f"found {len(blob) - payload_start}"
        )

    mpath = manifest_path(path)
    if not mpath.exists():
        raise DataError(f"{path}: manifest sidecar {mpath.name} is missing")
    with open(mpath, encoding="utf-8") as fh:
        manifest = ExtractorManifest.from_dict(json.load(fh))
    if manifest.regions != regions or manifest.dim != dim:
        raise DataError(
            f"{path}: manifest dims ({manifest.regions}, {manifest.dim}) "
            f"disagree with header ({regions}, {dim})"
        )

    store = FeatureStore(manifest)
    for image_id, offset in entries:
        if offset + record_bytes > expected:
            raise CorruptionError(f"{path}: payload offset out of range for {image_id!r}")
        flat = np.frombuffer(blob, dtype="<f4", count=regions * dim,
                             offset=payload_start + offset)
        store.add(FeatureSet(image_id, flat.reshape(regions, dim).copy()))
    return store


def synthetic_store(image_ids, regions: int, dim: int, seed: int) -> FeatureStore:
    """Deterministic random features in [-1, 1] for tests and demos."""
    manifest = ExtractorManifest(
        cnn_name="synthetic",
        parameter_count_thousands=1,
        regions=regions,
        dim=dim,
        preprocessing="none",
        extractor_version="synthetic-1",
    )
    rng = np.random.default_rng(seed)
    store = FeatureStore(manifest)
    for image_id in image_ids:
        grid = rng.uniform(-1.0, 1.0, size=(regions, dim)).astype(np.float32)
        store.add(FeatureSet(image_id, grid))
    return store


def mean_pool(fs: FeatureSet) -> np.ndarray:
    """Average the region vectors into one global descriptor (float64)."""
    return fs.regions.astype(np.float64).mean(axis=0)
