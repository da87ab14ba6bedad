"""Flat ``key = value`` run configuration with an ``include`` of the task file.

Lines are ``key = value``; ``#`` starts a comment.  ``include = path`` pulls in
another file (relative to the including file), whose keys the including file
may override.  ``ADMDP_SEED`` in the environment overrides ``seed``.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .policy import PRESETS, AblationFlags
from .simworld.tasks import TASK_IDS, TaskSpec, default_task, with_ranges

CONFIG_DIR = Path(__file__).parent / "configs"
SEED_ENV = "ADMDP_SEED"


class ConfigError(ValueError):
    pass


def parse_text(text: str, origin: str = "<text>") -> dict[str, str]:
    kv = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {raw.strip()!r}")
        k, _, v = line.partition("=")
        kv[k.strip()] = v.strip()
    return kv


def read_config_file(path, _seen=()) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.resolve() in _seen:
        raise ConfigError(f"include cycle through {path}")
    own = parse_text(path.read_text(), str(path))
    merged = {}
    if "include" in own:
        inc = Path(own.pop("include"))
        inc = inc if inc.is_absolute() else path.parent / inc
        merged.update(read_config_file(inc, _seen + (path.resolve(),)))
        merged.setdefault("task_file", str(inc))
    merged.update(own)
    return merged


def resolve_task_file(name_or_path: str) -> Path:
    """A task id maps to the packaged ``configs/<id>.task``; anything else is a path."""
    if name_or_path in TASK_IDS or name_or_path == "stack_blocks3":
        return CONFIG_DIR / f"{name_or_path}.task"
    path = Path(name_or_path)
    if not path.is_file():
        raise ConfigError(f"task file not found: {path}")
    return path


def _floats(v: str, n: int) -> tuple[float, ...]:
    parts = v.split()
    if len(parts) != n:
        raise ConfigError(f"expected {n} numbers, got {v!r}")
    return tuple(float(p) for p in parts)


def task_from_keys(kv: dict[str, str]) -> TaskSpec:
    if "task" not in kv:
        raise ConfigError("task file lacks a 'task' key")
    spec = default_task(kv["task"], int(kv["n_agents"]) if "n_agents" in kv else None)
    instr = [kv.get(f"instruction.{i}", spec.instructions[i]) for i in range(spec.n_agents)]
    spec = replace(spec, instructions=tuple(instr))
    for key, v in kv.items():
        if key.startswith("range."):
            try:
                _, obj, axis = key.split(".")
            except ValueError:
                raise ConfigError(f"bad range key {key!r}; expected range.<object>.<x|y|yaw>") from None
            if obj not in {o.name for o in spec.objects} or axis not in ("x", "y", "yaw"):
                raise ConfigError(f"bad range key {key!r}")
            spec = with_ranges(spec, obj, **{f"{axis}_range": _floats(v, 2)})
    return spec


def _is_task_key(k: str) -> bool:
    return k in ("task", "n_agents") or k.startswith(("instruction.", "range."))


def _has_task(kv: dict[str, str]) -> bool:
    return "task" in kv


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


PRESET_POINTS = {"toy": 256, "paper": 1024}

# keys that change what a training run produces; they make up the config hash
HASHED = ("task_text", "preset", "schedule_T", "schedule_kind", "tau", "lam", "entropy_sign", "lr",
          "ema_decay", "batch_size", "n_steps", "ddim_steps", "n_execute", "n_points", "seed", "dtype", "ablations")


@dataclass
class RunConfig:
    task_file: str = str(CONFIG_DIR / "lift_bar.task")
    preset: str = "toy"                 # full scale: 512/1024/512/64 feature widths, N = 1024
    schedule_T: int = 100               # diffusion steps
    schedule_kind: str = "cosine"      # alpha_bar_T ~ 0, so a^T is pure noise
    tau: float = 1.0                    # gate temperature
    lam: float = 0.01                   # entropy weight
    entropy_sign: str = "as_written"
    lr: float = 1e-3
    ema_decay: float = 0.995            # weight average used for sampling; 0 disables
    batch_size: int = 32
    n_steps: int = 2000
    ddim_steps: int = 20
    n_execute: int = 6                  # of the 8-step chunk
    n_points: int = 256                 # full scale: 1024
    seed: int = 0
    dtype: str = "float32"
    ablations: tuple[str, ...] = ()
    episodes: int = 100
    demo_noise: float = 0.0             # m, xy noise on executed expert cruise steps
    eval_episodes: int = 50
    step_cap: int = 200
    jobs: int = 1
    out_dir: str = "runs"
    task_text: str = field(default="", repr=False)

    @classmethod
    def from_keys(cls, kv: dict[str, str]) -> "RunConfig":
        kv = dict(kv)
        known = {f.name for f in fields(cls)}
        task_keys = {k: kv.pop(k) for k in list(kv) if _is_task_key(k)}
        unknown = sorted(set(kv) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cls()
        for f in fields(cls):
            if f.name not in kv:
                continue
            v = kv[f.name]
            try:
                if f.name == "ablations":
                    val = tuple(a for a in v.replace(",", " ").split() if a and a != "full")
                elif f.type in ("int",):
                    val = int(v)
                elif f.type in ("float",):
                    val = float(v)
                elif f.type in ("bool",):
                    val = _bool(v)
                else:
                    val = v
            except ValueError as exc:
                raise ConfigError(f"bad value for {f.name}: {v!r} ({exc})") from None
            setattr(cfg, f.name, val)
        if "n_points" not in kv:
            cfg.n_points = PRESET_POINTS[cfg.preset] if cfg.preset in PRESET_POINTS else cfg.n_points
        if task_keys:
            cfg.task_text = "\n".join(f"{k} = {task_keys[k]}" for k in sorted(task_keys))
        else:
            cfg.task_text = canonical_task_text(Path(cfg.task_file))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides: dict | None = None, env=None) -> "RunConfig":
        """Read ``path`` (optional), apply ``overrides`` and the seed variable.

        An override ``task_file`` (task id or path) replaces every task key.
        """
        kv = read_config_file(path) if path is not None else {}
        overrides = {k: str(v) for k, v in (overrides or {}).items() if v is not None}
        if "task_file" in overrides or not _has_task(kv):
            tf = resolve_task_file(overrides.pop("task_file", kv.get("task_file", "lift_bar")))
            kv = {k: v for k, v in kv.items() if not _is_task_key(k)}
            kv.update(parse_text(tf.read_text(), str(tf)))
            kv["task_file"] = str(tf)
        kv.update(overrides)
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            kv["seed"] = env[SEED_ENV]
        return cls.from_keys(kv)

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        AblationFlags.from_names(self.ablations)
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.episodes < 1 or self.eval_episodes < 1 or self.step_cap < 1 or self.jobs < 1:
            raise ConfigError("episodes, eval_episodes, step_cap and jobs must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")
        if self.demo_noise < 0:
            raise ConfigError("demo_noise must be non-negative")
        self.task()

    @property
    def flags(self) -> AblationFlags:
        return AblationFlags.from_names(self.ablations)

    def task(self) -> TaskSpec:
        try:
            return task_from_keys(parse_text(self.task_text, self.task_file))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def with_flags(self, flags: AblationFlags) -> "RunConfig":
        names = tuple(k for k in ("no_pc", "no_tact", "no_graph", "no_amam") if getattr(flags, k))
        return replace(self, ablations=names)

    def canonical_text(self) -> str:
        lines = []
        for k in HASHED:
            v = getattr(self, k)
            if k == "task_text":
                lines += [f"task.{line}" for line in v.splitlines()]
            elif k == "ablations":
                lines.append(f"ablations = {' '.join(sorted(v)) or 'none'}")
            else:
                lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def estimator_params(self) -> dict:
        fl = self.flags
        return dict(preset=self.preset, tau=self.tau, lam=self.lam, entropy_sign=self.entropy_sign, lr=self.lr,
                    ema_decay=self.ema_decay, batch_size=self.batch_size, n_steps=self.n_steps, schedule_T=self.schedule_T,
                    schedule_kind=self.schedule_kind, ddim_steps=self.ddim_steps, n_execute=self.n_execute,
                    no_pc=fl.no_pc, no_tact=fl.no_tact, no_graph=fl.no_graph, no_amam=fl.no_amam,
                    dtype=self.dtype, random_state=self.seed)

    @classmethod
    def from_canonical(cls, text: str) -> "RunConfig":
        """Rebuild from ``canonical_text`` (as stored in checkpoints)."""
        kv, task = {}, []
        for line in text.splitlines():
            if line.startswith("task."):
                task.append(line[len("task."):])
            elif line.strip():
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
        if kv.get("ablations") == "none":
            kv["ablations"] = ""
        cfg = cls.from_keys({**kv, **parse_text("\n".join(task))})
        return cfg


def canonical_task_text(path: Path) -> str:
    kv = parse_text(Path(path).read_text(), str(path))
    return "\n".join(f"{k} = {kv[k]}" for k in sorted(kv))
