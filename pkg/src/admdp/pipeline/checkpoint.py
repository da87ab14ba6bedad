"""Little-endian ``.admc`` checkpoint files.

Layout::

    b"ADMC"  u16 version
    u16 agent index, u16 agent count, u64 training steps
    32-byte sha256 of the config text, u32 len + utf-8 config text
    u16 vocabulary size, then per entry u16 len + utf-8
    u32 block count, then per block:
        u16 len + utf-8 name, u8 ndim, ndim * u32 shape, float32 data
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..config import RunConfig
from ..estimator import AdmDpPolicy

MAGIC = b"ADMC"
VERSION = 1
_HEAD = struct.Struct("<HHQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    agent_index: int
    n_agents: int
    steps: int
    config_text: str
    vocabulary: list[str]
    blocks: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.config_text.encode("utf-8")).hexdigest()

    @property
    def config(self) -> RunConfig:
        return RunConfig.from_canonical(self.config_text)


def _f32(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.ascontiguousarray(np.asarray(x, dtype="<f4"))


def checkpoint_from_policy(policy: AdmDpPolicy, config: RunConfig) -> Checkpoint:
    blocks = {f"param/{k}": _f32(v) for k, v in policy.net_.state_dict().items() if k != "instruction_table"}
    blocks["instruction_table"] = _f32(policy.net_.instruction_table)
    blocks["schedule/beta"] = _f32(policy.schedule_.beta)
    blocks["norm/action_min"] = _f32(policy.action_min_)
    blocks["norm/action_max"] = _f32(policy.action_max_)
    if policy.loss_curve_:
        blocks["loss/curve"] = _f32(policy.loss_curve_)
    return Checkpoint(policy.agent_index_, policy.n_agents_, policy.steps_done_, config.canonical_text(),
                      list(policy.vocabulary_), blocks)


def policy_from_checkpoint(ckpt: Checkpoint) -> AdmDpPolicy:
    cfg = ckpt.config
    policy = AdmDpPolicy(**cfg.estimator_params())
    policy.build(ckpt.vocabulary, ckpt.agent_index, ckpt.n_agents,
                 instruction_table=ckpt.blocks["instruction_table"].astype(np.float64))
    state = policy.net_.state_dict()
    params = {k[len("param/"):]: v for k, v in ckpt.blocks.items() if k.startswith("param/")}
    missing = sorted(set(state) - set(params) - {"instruction_table"})
    extra = sorted(set(params) - set(state))
    if missing or extra:
        raise CheckpointError(f"parameter blocks do not match the configured network "
                              f"(missing {missing[:3]}, unexpected {extra[:3]})")
    for k, v in params.items():
        if tuple(state[k].shape) != v.shape:
            raise CheckpointError(f"block param/{k} has shape {v.shape}, network expects {tuple(state[k].shape)}")
        state[k] = torch.as_tensor(v.astype(np.float64), dtype=state[k].dtype)
    policy.net_.load_state_dict(state)
    if not np.array_equal(_f32(policy.schedule_.beta), ckpt.blocks["schedule/beta"]):
        raise CheckpointError("stored noise schedule differs from the configured one")
    policy.action_min_ = ckpt.blocks["norm/action_min"].astype(np.float64)
    policy.action_max_ = ckpt.blocks["norm/action_max"].astype(np.float64)
    curve = ckpt.blocks.get("loss/curve")
    policy.loss_curve_ = [tuple(map(float, row)) for row in curve] if curve is not None else []
    policy.steps_done_ = ckpt.steps
    policy.net_.eval()
    return policy


def _str(s: str, width: str = "<H") -> bytes:
    b = s.encode("utf-8")
    return struct.pack(width, len(b)) + b


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<H", VERSION), _HEAD.pack(ckpt.agent_index, ckpt.n_agents, ckpt.steps),
           bytes.fromhex(ckpt.config_hash), _str(ckpt.config_text, "<I"),
           struct.pack("<H", len(ckpt.vocabulary))]
    out += [_str(v) for v in ckpt.vocabulary]
    out.append(struct.pack("<I", len(ckpt.blocks)))
    for name, arr in ckpt.blocks.items():
        arr = _f32(arr)
        out += [_str(name), struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape), arr.tobytes()]
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointError(f"truncated file: {what} needs {n} bytes at offset {self.off}, "
                                  f"only {len(self.buf) - self.off} left")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size, what))

    def string(self, what: str, width: str = "<H") -> str:
        (n,) = self.unpack(width, what + " length")
        return self.take(n, what).decode("utf-8")


def read_header(buf: bytes) -> tuple[dict, _Reader]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version} at offset 4 (expected {VERSION})")
    agent, n_agents, steps = r.unpack(_HEAD.format, "header")
    digest = r.take(32, "config hash").hex()
    text = r.string("config text", "<I")
    (n_vocab,) = r.unpack("<H", "vocabulary size")
    vocab = [r.string(f"vocabulary entry {i}") for i in range(n_vocab)]
    header = dict(version=version, agent_index=agent, n_agents=n_agents, steps=steps, config_hash=digest,
                  config_text=text, vocabulary=vocab)
    return header, r


def decode_checkpoint(buf: bytes, expect_hash: str | None = None) -> Checkpoint:
    header, r = read_header(buf)
    actual = hashlib.sha256(header["config_text"].encode("utf-8")).hexdigest()
    if actual != header["config_hash"]:
        raise CheckpointError(f"config hash mismatch: stored {header['config_hash'][:12]}, "
                              f"config text hashes to {actual[:12]}")
    if expect_hash is not None and expect_hash != actual:
        raise CheckpointError(f"config hash mismatch: checkpoint {actual[:12]}, expected {expect_hash[:12]}")
    (n_blocks,) = r.unpack("<I", "block count")
    blocks = {}
    for _ in range(n_blocks):
        name = r.string("block name")
        (ndim,) = r.unpack("<B", f"block {name} rank")
        shape = r.unpack(f"<{ndim}I", f"block {name} shape")
        count = int(np.prod(shape, dtype=np.int64))
        data = r.take(4 * count, f"block {name} data")
        blocks[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    if r.off != len(buf):
        raise CheckpointError(f"{len(buf) - r.off} trailing bytes at offset {r.off}")
    return Checkpoint(header["agent_index"], header["n_agents"], header["steps"], header["config_text"],
                      header["vocabulary"], blocks)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expect_hash: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), expect_hash)
