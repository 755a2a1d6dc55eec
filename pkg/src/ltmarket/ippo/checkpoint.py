"""Binary checkpoint of all agents' networks and optimizer state.

Layout (little-endian)::

    8 bytes   magic b"LTMCKPT\\0"
    4 bytes   uint32 format version
    8 bytes   uint64 header length N
    N bytes   UTF-8 JSON header (sorted keys)
    ...       float64 tensors, in header order
    32 bytes  SHA-256 of everything above

The header carries the technology-set hash, action layout, observation size,
hidden sizes, agent ids and the tensor table.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..env import ActionLayout
from ..scenario import Scenario
from .policy import DTYPE
from .ppo import AdamState

MAGIC = b"LTMCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupted or incompatible checkpoint."""


@dataclass
class PolicySet:
    tech_set_hash: str
    layout: dict
    obs_dim: int
    hidden: tuple[int, ...]
    params: dict[str, dict[str, torch.Tensor]]
    adam: dict[str, AdamState] = field(default_factory=dict)
    iteration: int = 0
    config: dict = field(default_factory=dict)

    @property
    def agents(self) -> list[str]:
        return list(self.params)

    def numpy_params(self) -> dict[str, dict[str, np.ndarray]]:
        return {a: {k: v.numpy() for k, v in p.items()} for a, p in self.params.items()}

    def check_compatible(self, scenario: Scenario):
        if self.tech_set_hash != scenario.tech_set_hash():
            raise CheckpointError("technology set differs from the checkpoint's")
        if self.layout != ActionLayout.from_scenario(scenario).to_dict():
            raise CheckpointError("action layout differs from the checkpoint's")


def to_bytes(ps: PolicySet) -> bytes:
    table = []
    blobs = []
    for agent in ps.agents:
        groups = [("param", ps.params[agent])]
        st = ps.adam.get(agent)
        if st is not None:
            groups += [("m", st.m), ("v", st.v)]
        for kind, tensors in groups:
            for name in sorted(tensors):
                arr = np.ascontiguousarray(tensors[name].detach().numpy(), dtype="<f8")
                table.append({"agent": agent, "kind": kind, "name": name, "shape": list(arr.shape)})
                blobs.append(arr.tobytes())
    header = {
        "tech_set_hash": ps.tech_set_hash, "layout": ps.layout, "obs_dim": ps.obs_dim, "hidden": list(ps.hidden),
        "agents": ps.agents, "iteration": ps.iteration, "config": ps.config, "tensors": table,
        "adam_steps": {a: st.step for a, st in ps.adam.items()},
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hb)) + hb + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def from_bytes(data: bytes) -> PolicySet:
    if len(data) < 20 + 32 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch; file is corrupted")
    version, hlen = struct.unpack("<IQ", body[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(body[20:20 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"bad header: {exc}") from exc
    pos = 20 + hlen
    params: dict[str, dict] = {a: {} for a in header["agents"]}
    moments: dict[tuple[str, str], dict] = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64)) * 8
        if pos + n > len(body):
            raise CheckpointError("truncated tensor data")
        arr = np.frombuffer(body[pos:pos + n], dtype="<f8").reshape(entry["shape"]).copy()
        pos += n
        t = torch.as_tensor(arr, dtype=DTYPE)
        if entry["kind"] == "param":
            params[entry["agent"]][entry["name"]] = t
        else:
            moments.setdefault((entry["agent"], entry["kind"]), {})[entry["name"]] = t
    if pos != len(body):
        raise CheckpointError("trailing bytes after tensor data")
    adam = {a: AdamState(moments.get((a, "m"), {}), moments.get((a, "v"), {}), int(s))
            for a, s in header["adam_steps"].items()}
    # restore parameter order as created (hidden layers first, then head)
    params = {a: dict(sorted(p.items(), key=lambda kv: _param_order(kv[0]))) for a, p in params.items()}
    return PolicySet(header["tech_set_hash"], header["layout"], header["obs_dim"], tuple(header["hidden"]),
                     params, adam, header["iteration"], header["config"])


def _param_order(name: str):
    net, layer, kind = name.split(".")
    return (net != "actor", layer == "head", int(layer) if layer.isdigit() else 0, kind != "weight")


def save_checkpoint(ps: PolicySet, path: str | Path) -> Path:
    """Write atomically: a partial file never replaces a good one."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ps))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path, scenario: Scenario | None = None) -> PolicySet:
    ps = from_bytes(Path(path).read_bytes())
    if scenario is not None:
        ps.check_compatible(scenario)
    return ps
