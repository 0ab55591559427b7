"""Run configuration stored as a flat ``key = value`` text document."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

from .modelfit import EnergyConfig
from .transform import TrainConfig

MODES = ("idcca", "dcca", "bdcca", "plw", "nlw")


@dataclass
class RunConfig:
    mode: str = "idcca"
    w_ms: float = 50005.0
    z_ms: Optional[float] = None  # None: 2 hours, or the whole record if shorter
    lam: float = 0.5
    max_drift_ms_per_hr: float = 0.0
    difference: int = 0  # 0, 1 or 2: differencing applied to both signals
    initial_shift_ms: float = 0.0
    sequential: bool = True  # carry each super-segment's end shift into the next one
    # transforms
    beta: float = 0.1
    lr: float = 4e-4
    epochs: int = 25
    outer_iterations: int = 1
    batch_size: int = 8
    hidden: int = 16
    n_blocks: int = 15
    n_out: int = 3
    kernel: int = 11
    # correlation
    threshold: float = 0.3
    ridge: float = 1e-4
    subsample: bool = False
    # model extraction
    h_L: float = 50.0
    c_smooth: float = 10.0
    gamma: float = 10.0
    family: int = 2
    n_neighbors: int = 4
    # baselines
    radius: int = 30
    nlw_step_ms: float = 100.0
    # misc
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.mode = self.mode.lower().replace("-", "")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.difference not in (0, 1, 2):
            raise ValueError("difference must be 0, 1 or 2")

    def train_config(self) -> TrainConfig:
        return TrainConfig(beta=self.beta, lr=self.lr, epochs=self.epochs,
                           outer_iterations=self.outer_iterations, threshold=self.threshold,
                           seed=self.seed, ridge=self.ridge, batch_size=self.batch_size,
                           hidden=self.hidden, n_blocks=self.n_blocks, n_out=self.n_out,
                           kernel=self.kernel, threads=self.threads)

    def energy_config(self) -> EnergyConfig:
        return EnergyConfig(h_L=self.h_L, c_smooth=self.c_smooth, gamma=self.gamma,
                            n_neighbors=self.n_neighbors, family=self.family)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **kw)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {no}: expected 'key = value', got {raw!r}")
            key, val = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {no}: unknown config key {key!r}")
            values[key] = _parse(val, types[key], key)
        return cls(**values)


def _parse(val: str, typ: str, key: str):
    low = val.lower()
    if "Optional" in typ and low in ("none", ""):
        return None
    try:
        if "bool" in typ:
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(val)
        if "int" in typ:
            return int(val)
        if "float" in typ:
            return float(val)
    except ValueError:
        raise ValueError(f"bad value for {key}: {val!r}") from None
    return val
