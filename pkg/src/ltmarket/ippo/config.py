"""Training hyperparameters and named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class TrainConfig:
    clip_eps: float = 0.05
    entropy_coef: float = 1e-5
    vf_coef: float = 1.0
    batch_size: int = 17664
    minibatch_size: int | None = None  # None means the full batch
    epochs: int = 10
    lr: float = 3e-4
    gamma: float = 1.0
    gae_lambda: float = 0.995
    hidden: tuple[int, ...] = (256, 256)
    num_envs: int = 69
    workers: int = 1
    iterations: int = 100
    time_budget_s: float | None = None
    checkpoint_interval: int = 10
    seed: int = 0
    normalize_advantages: bool = True
    head_gain: float = 0.01
    max_grad_norm: float | None = None
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.batch_size < 1 or self.epochs < 1 or self.iterations < 0:
            raise ValueError("batch_size and epochs must be >= 1, iterations >= 0")
        if self.minibatch_size is not None and (self.minibatch_size < 1 or self.batch_size % self.minibatch_size):
            raise ValueError("batch_size must be divisible by minibatch_size")
        if self.num_envs < 1 or self.workers < 1:
            raise ValueError("num_envs and workers must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options {sorted(unknown)}")
        return cls(**d)


BASE = TrainConfig()

# Ablation rows; fields not listed keep the base values.
_ROWS = {
    "M.7": dict(clip_eps=0.05, batch_size=35328, entropy_coef=1e-6, hidden=(256, 256)),
    "T.1": dict(clip_eps=0.1, batch_size=35328, entropy_coef=0.01, hidden=(512, 512)),
    "T.2": dict(clip_eps=0.1, batch_size=35328, entropy_coef=0.01, hidden=(256, 256)),
    "T.3": dict(clip_eps=0.1, batch_size=35328, entropy_coef=1e-6, hidden=(512, 512)),
    "T.4": dict(clip_eps=0.1, batch_size=17664, entropy_coef=0.01, hidden=(512, 512)),
    "T.5": dict(clip_eps=0.05, batch_size=35328, entropy_coef=0.01, hidden=(512, 512)),
}

# Small settings that train the bundled toy scenario in about a minute on one core.
DESK = replace(BASE, clip_eps=0.1, entropy_coef=0.01, batch_size=288, minibatch_size=72, lr=1e-3,
               hidden=(64, 64), num_envs=1, iterations=30, checkpoint_interval=0)

PRESETS: dict[str, TrainConfig] = {"base": BASE, "desk": DESK, **{k: replace(BASE, **v) for k, v in _ROWS.items()}}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)
