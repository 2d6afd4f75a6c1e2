"""Single-file checkpoint container.

Layout (little-endian)::

    "DFCK" | version u16 | header_len u32 | header JSON (utf-8)
    then blocks: name_len u16 | name | ndim u8 | dims u32×ndim | f32 data

The header carries both network specs, their combined hash, the epoch and
step counters, the seed, the training config and the optimizer
hyper-parameters. Parameters and optimizer moments are stored as blocks
named ``G.<param>``, ``D.<param>``, ``optim.G.<i>.<key>``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import DiscriminatorSpec, GeneratorSpec

MAGIC = b"DFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def combined_hash(gspec: GeneratorSpec, dspec: DiscriminatorSpec) -> str:
    return hashlib.sha256((gspec.spec_hash() + dspec.spec_hash()).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    generator_spec: GeneratorSpec
    discriminator_spec: DiscriminatorSpec
    generator_state: dict
    discriminator_state: dict
    optimizer_states: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    seed: int = 0
    config: dict = field(default_factory=dict)

    @property
    def spec_hash(self) -> str:
        return combined_hash(self.generator_spec, self.discriminator_spec)


def _split_optimizer(name: str, state: dict):
    """Adam state dict -> (JSON-able header part, tensor blocks)."""
    blocks = {}
    steps = {}
    for idx, st in state["state"].items():
        for key, value in st.items():
            if key == "step":
                steps[str(idx)] = float(value)
            else:
                blocks[f"optim.{name}.{idx}.{key}"] = value
    return {"param_groups": state["param_groups"], "steps": steps}, blocks


def _join_optimizer(name: str, header: dict, blocks: dict) -> dict:
    state = {}
    prefix = f"optim.{name}."
    for key, value in blocks.items():
        if key.startswith(prefix):
            idx, attr = key[len(prefix):].split(".", 1)
            state.setdefault(int(idx), {})[attr] = value
    for idx, step in header["steps"].items():
        state.setdefault(int(idx), {})["step"] = torch.tensor(step, dtype=torch.float32)
    groups = []
    for g in header["param_groups"]:
        g = dict(g)
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
        groups.append(g)
    return {"state": state, "param_groups": groups}


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blocks = {}
    for prefix, sd in (("G", ckpt.generator_state), ("D", ckpt.discriminator_state)):
        for k, v in sd.items():
            blocks[f"{prefix}.{k}"] = v
    optim_header = {}
    for name, st in ckpt.optimizer_states.items():
        optim_header[name], extra = _split_optimizer(name, st)
        blocks.update(extra)
    header = {
        "spec_hash": ckpt.spec_hash,
        "generator_spec": asdict(ckpt.generator_spec),
        "discriminator_spec": asdict(ckpt.discriminator_spec),
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "config": ckpt.config,
        "optimizers": optim_header,
    }
    head = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(head)), head]
    for name, tensor in blocks.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        enc = name.encode()
        parts.append(struct.pack("<H", len(enc)) + enc)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path, generator_spec: GeneratorSpec | None = None, discriminator_spec: DiscriminatorSpec | None = None) -> Checkpoint:
    """Read a checkpoint; if specs are given their hash must match the file's."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        if data[:4] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version, head_len = struct.unpack_from("<HI", data, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        off = 10
        header = json.loads(data[off : off + head_len])
        off += head_len
        blocks = {}
        while off < len(data):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + name_len].decode()
            off += name_len
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if off + 4 * count > len(data):
                raise CheckpointError(f"{path}: truncated block {name!r}")
            arr = np.frombuffer(data, "<f4", count, off).reshape(shape)
            off += 4 * count
            blocks[name] = torch.from_numpy(arr.astype(np.float32))
        gspec = GeneratorSpec(**header["generator_spec"])
        dspec = DiscriminatorSpec(**header["discriminator_spec"])
    except CheckpointError:
        raise
    except (struct.error, ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc

    if combined_hash(gspec, dspec) != header["spec_hash"]:
        raise CheckpointError(f"{path}: stored spec hash does not match its specs")
    if generator_spec is not None or discriminator_spec is not None:
        want_g = generator_spec or gspec
        want_d = discriminator_spec or dspec
        if combined_hash(want_g, want_d) != header["spec_hash"]:
            raise CheckpointError(
                f"{path}: spec hash mismatch (file {header['spec_hash']}, expected {combined_hash(want_g, want_d)})"
            )
    g_state = {k[2:]: v for k, v in blocks.items() if k.startswith("G.")}
    d_state = {k[2:]: v for k, v in blocks.items() if k.startswith("D.")}
    optim = {name: _join_optimizer(name, h, blocks) for name, h in header.get("optimizers", {}).items()}
    return Checkpoint(gspec, dspec, g_state, d_state, optim, header["epoch"], header["step"], header["seed"], header["config"])
