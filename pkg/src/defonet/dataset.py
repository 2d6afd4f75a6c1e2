"""Dataset files and scene-family enumeration.

File layout (little-endian)::

    "DEFO" | version u16 | N u16 | pitch f32 | sample_count u32 | widths u8×3
    then per sample: condition indices u8×3 | input grid bits | target grid bits

Grid bits use the voxel packing of :func:`defonet.voxel.pack_bits`. A
``<file>.meta.jsonl`` sidecar holds one oracle record per sample (span,
material, force, oracle deflection); readers tolerate its absence.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields, replace
from itertools import product
from pathlib import Path

import numpy as np

from .condition import WIDTHS, Condition
from .physics import (
    FORCE_LEVELS,
    LOCATION_FRACTIONS,
    MATERIALS,
    BeamScene,
    BeamSpec,
    FoamScene,
    LoadCase,
    Sample,
    check_bins,
    default_pitch,
    generate_sample,
)
from .voxel import GridSpec, VoxelGrid, f32_value, pack_bits, packed_size, unpack_bits

MAGIC = b"DEFO"
VERSION = 1
_HEADER = struct.Struct("<4sHHfI3B")


@dataclass
class Dataset:
    resolution: int
    pitch: float
    conditions: np.ndarray  # (n, 3) uint8
    inputs: np.ndarray  # (n, N, N, N) uint8
    targets: np.ndarray  # (n, N, N, N) uint8
    meta: list = field(default_factory=list)
    widths: tuple = WIDTHS

    def __len__(self) -> int:
        return len(self.conditions)

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        if not samples:
            raise ValueError("dataset needs at least one sample")
        first = samples[0].input_grid
        return cls(
            first.resolution,
            first.pitch,
            np.array([s.condition.as_tuple() for s in samples], np.uint8),
            np.stack([s.input_grid.occupancy for s in samples]),
            np.stack([s.target_grid.occupancy for s in samples]),
            [dict(s.meta) for s in samples],
        )

    def sample(self, idx: int) -> Sample:
        return Sample(
            VoxelGrid(self.inputs[idx], self.pitch),
            Condition(*self.conditions[idx]),
            VoxelGrid(self.targets[idx], self.pitch),
            self.meta[idx] if idx < len(self.meta) else {},
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        meta = [self.meta[i] for i in idx] if self.meta else []
        return Dataset(self.resolution, self.pitch, self.conditions[idx], self.inputs[idx], self.targets[idx], meta, self.widths)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.jsonl")


def write_dataset(path, dataset: Dataset) -> None:
    n = dataset.resolution
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, dataset.pitch, len(dataset), *dataset.widths))
        for c, x, t in zip(dataset.conditions, dataset.inputs, dataset.targets):
            fh.write(bytes(int(v) for v in c))
            fh.write(pack_bits(x))
            fh.write(pack_bits(t))
    if dataset.meta:
        lines = [json.dumps(m, sort_keys=True) for m in dataset.meta]
        meta_path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated dataset header")
    magic, version, n, pitch, count, *widths = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    grid_bytes = packed_size(n)
    record = 3 + 2 * grid_bytes
    if len(data) != _HEADER.size + count * record:
        raise ValueError(f"{path}: expected {count} samples of {record} bytes")
    conds = np.zeros((count, 3), np.uint8)
    inputs = np.zeros((count, n, n, n), np.uint8)
    targets = np.zeros((count, n, n, n), np.uint8)
    off = _HEADER.size
    for s in range(count):
        conds[s] = np.frombuffer(data, np.uint8, 3, off)
        inputs[s] = unpack_bits(data[off + 3 : off + 3 + grid_bytes], n)
        targets[s] = unpack_bits(data[off + 3 + grid_bytes : off + record], n)
        off += record
    if (conds >= np.array(widths)).any():
        raise ValueError(f"{path}: condition index outside the declared widths")
    meta = []
    mp = meta_path(path)
    if mp.exists():
        meta = [json.loads(line) for line in mp.read_text().splitlines() if line.strip()]
        if len(meta) != count:
            meta = []
    return Dataset(n, f32_value(pitch), conds, inputs, targets, meta, tuple(widths))


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


@dataclass
class DatasetConfig:
    """A scene family; the dataset is the cross product of its lists."""

    scene: str = "beam"
    spans: list = field(default_factory=lambda: [0.8, 0.85, 0.9, 0.95, 1.0, 1.1, 1.2, 1.25, 1.3])
    holdout: list = field(default_factory=list)
    forces: list = field(default_factory=lambda: [0, 1])
    locations: list = field(default_factory=lambda: [3])
    materials: list = field(default_factory=lambda: ["wood", "aluminium"])
    wheels: list = field(default_factory=lambda: [0, 1, 2, 3])
    grid: int = 16
    pitch: float | None = None
    width: float = 0.15
    thickness: float = 0.006
    board_thickness: float = 0.05
    view: str = "+y"
    count: int | None = None

    _parsers = {
        "spans": _floats, "holdout": _floats, "forces": _ints, "locations": _ints,
        "materials": _names, "wheels": _ints, "grid": int, "pitch": float, "width": float,
        "thickness": float, "board_thickness": float, "count": int, "scene": str.strip, "view": str.strip,
    }

    @classmethod
    def from_text(cls, text: str) -> "DatasetConfig":
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in known:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = cls._parsers[key](value)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "DatasetConfig":
        return cls.from_text(Path(path).read_text())

    @property
    def grid_spec(self) -> GridSpec:
        pitch = default_pitch(self.scene, self.grid) if self.pitch is None else self.pitch
        return GridSpec(self.grid, pitch)

    def training_spans(self) -> list[float]:
        held = set(self.holdout)
        return [s for s in self.spans if not any(np.isclose(s, h) for h in held)]

    def enumerate(self) -> list[tuple]:
        """(scene, load) pairs in a fixed nested order."""
        check_bins(self.forces, self.locations)
        if self.scene == "beam":
            for m in self.materials:
                if m not in ("wood", "aluminium"):
                    raise ValueError(f"beam scenes take wood or aluminium, got {m!r}")
            cases = []
            for span, f, loc, m in product(self.training_spans(), self.forces, self.locations, self.materials):
                beam = BeamSpec(span, self.width, self.thickness, MATERIALS[m])
                cases.append((BeamScene(beam), LoadCase(FORCE_LEVELS[f], LOCATION_FRACTIONS[loc])))
            return cases
        if self.scene == "foam":
            return [
                (FoamScene(w, self.board_thickness), LoadCase(FORCE_LEVELS[f]))
                for w, f in product(self.wheels, self.forces)
            ]
        raise ValueError(f"unknown scene {self.scene!r}")


def generate_dataset(config: DatasetConfig, path=None, seed: int = 0) -> Dataset:
    """Enumerate the family, optionally subsample ``count`` cases, and write the file."""
    cases = config.enumerate()
    if not cases:
        raise ValueError("configuration enumerates no samples")
    if config.count is not None:
        if not 1 <= config.count <= len(cases):
            raise ValueError(f"count must be in [1, {len(cases)}], got {config.count}")
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(cases), size=config.count, replace=False))
        cases = [cases[i] for i in keep]
    spec = config.grid_spec
    samples = [generate_sample(scene, load, spec, config.view) for scene, load in cases]
    for s in samples:
        if not s.input_grid.occupancy.any():
            raise ValueError(f"scene is invisible at pitch {spec.pitch:.4f} m (narrower than a voxel?); use a finer grid")
    dataset = Dataset.from_samples(samples)
    if path is not None:
        write_dataset(path, dataset)
    return dataset


def holdout_config(config: DatasetConfig) -> DatasetConfig:
    """The same family restricted to the held-out spans."""
    if not config.holdout:
        raise ValueError("configuration has no holdout spans")
    return replace(config, spans=list(config.holdout), holdout=[], count=None)
