"""Little-endian ``.admd`` episode files.

Layout::

    b"ADMD"  u16 version
    u16 len + utf-8 task id, u64 seed, u8 pattern, u8 success,
    u16 n_agents, u32 n_steps, u16 image_h, u16 image_w, u32 n_points,
    u16 tactile_len, u16 proprio_dim, u16 action_dim, n_agents * u16 instruction id
    n_steps records: per agent (image, cloud, tactile, q, action) then shared tcps,
    every array packed as float32.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .planner import PATTERNS, Demonstration

MAGIC = b"ADMD"
VERSION = 1
_FIXED = struct.Struct("<QBBHIHHIHHH")


class EpisodeFormatError(ValueError):
    pass


def step_dtype(n_agents: int, h: int, w: int, n_points: int, d_q: int, d_a: int) -> np.dtype:
    agent = np.dtype([("image", "<f4", (h, w, 3)), ("cloud", "<f4", (n_points, 6)),
                      ("tactile", "<f4", (2, 4, 4)), ("q", "<f4", (d_q,)), ("action", "<f4", (d_a,))])
    return np.dtype([("agents", agent, (n_agents,)), ("tcps", "<f4", (n_agents, 3))])


def encode_episode(demo: Demonstration) -> bytes:
    s, n = demo.actions.shape[:2]
    h, w = demo.images.shape[2:4]
    n_points = demo.clouds.shape[2]
    d_q, d_a = demo.q.shape[2], demo.actions.shape[2]
    task = demo.task.encode("utf-8")
    head = [MAGIC, struct.pack("<H", VERSION), struct.pack("<H", len(task)), task,
            _FIXED.pack(demo.seed & 0xFFFFFFFFFFFFFFFF, PATTERNS.index(demo.pattern), int(bool(demo.success)),
                        n, s, h, w, n_points, 32, d_q, d_a),
            struct.pack(f"<{n}H", *(int(i) for i in demo.instruction_ids))]
    rec = np.zeros(s, dtype=step_dtype(n, h, w, n_points, d_q, d_a))
    rec["agents"]["image"] = demo.images
    rec["agents"]["cloud"] = demo.clouds
    rec["agents"]["tactile"] = demo.tactile
    rec["agents"]["q"] = demo.q
    rec["agents"]["action"] = demo.actions
    rec["tcps"] = demo.tcps
    return b"".join(head) + rec.tobytes()


def write_episode(demo: Demonstration, path) -> Path:
    path = Path(path)
    data = encode_episode(demo)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed to write episode {path}: {exc}") from exc
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise EpisodeFormatError(f"truncated file: {what} needs {n} bytes at offset {self.off}, "
                                     f"only {len(self.buf) - self.off} left")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size, what))


def read_header(buf: bytes) -> tuple[dict, int]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise EpisodeFormatError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise EpisodeFormatError(f"unsupported version {version} at offset 4 (expected {VERSION})")
    (tlen,) = r.unpack("<H", "task length")
    task = r.take(tlen, "task id").decode("utf-8")
    seed, pattern, success, n, s, h, w, n_points, tac, d_q, d_a = r.unpack(_FIXED.format, "header")
    if pattern >= len(PATTERNS):
        raise EpisodeFormatError(f"unknown pattern code {pattern} at offset {r.off - _FIXED.size + 8}")
    instr = r.unpack(f"<{n}H", "instruction ids")
    header = dict(version=version, task=task, seed=seed, pattern=PATTERNS[pattern], success=bool(success),
                  n_agents=n, n_steps=s, image=(h, w), n_points=n_points, tactile_len=tac,
                  proprio_dim=d_q, action_dim=d_a, instruction_ids=list(instr))
    return header, r.off


def decode_episode(buf: bytes) -> Demonstration:
    header, off = read_header(buf)
    h, w = header["image"]
    dt = step_dtype(header["n_agents"], h, w, header["n_points"], header["proprio_dim"], header["action_dim"])
    need = dt.itemsize * header["n_steps"]
    if len(buf) - off < need:
        done = (len(buf) - off) // dt.itemsize
        raise EpisodeFormatError(f"truncated file: step {done} incomplete at offset {off + done * dt.itemsize} "
                                 f"({len(buf) - off} of {need} body bytes present)")
    if len(buf) - off > need:
        raise EpisodeFormatError(f"{len(buf) - off - need} trailing bytes at offset {off + need}")
    rec = np.frombuffer(buf, dtype=dt, count=header["n_steps"], offset=off)
    ag = rec["agents"]
    return Demonstration(header["task"], header["seed"], header["pattern"],
                         np.array(header["instruction_ids"]), ag["image"].copy(), ag["cloud"].copy(),
                         ag["tactile"].copy(), ag["q"].copy(), rec["tcps"].copy(), ag["action"].copy(),
                         header["success"])


def read_episode(path) -> Demonstration:
    return decode_episode(Path(path).read_bytes())
