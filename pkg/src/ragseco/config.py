"""Hyperparameters, named profiles and the key = value config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

VARIANTS = ("full", "-R", "-M", "-I", "-S", "-E", "-C")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    bs: int = 512
    lr: float = 2e-5
    dr: float = 0.3
    te: int = 120
    d_prime: int = 500
    n: int = 0
    d_fnn: int = 1000
    t_pos: float = 0.95
    t_neg: float = 0.1
    lam: float = 5.0
    mixup_alpha: float = 0.2
    seed: int = 0
    # SMILES / CNN shape
    smiles_len: int = 100
    cnn_channels: tuple[int, ...] = (32, 64, 96)
    cnn_kernels: tuple[int, ...] = (4, 6, 8)
    # 0 means d_p + R
    decoder_hidden: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.t_pos > self.t_neg:
            raise ConfigError(f"t_pos ({self.t_pos}) must exceed t_neg ({self.t_neg})")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        for name in ("bs", "d_prime", "d_fnn", "smiles_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.bs < 2:
            raise ConfigError("bs must be at least 2 (batch normalization)")
        if self.te < 0 or self.n < 0:
            raise ConfigError("te and n must be nonnegative")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.dr < 1:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dr}")
        if self.mixup_alpha < 0:
            raise ConfigError("mixup_alpha must be nonnegative (0 disables mixup)")
        if len(self.cnn_channels) != len(self.cnn_kernels) or not self.cnn_channels:
            raise ConfigError("cnn_channels and cnn_kernels must be nonempty and equally long")
        if 2 * self.smiles_len < sum(k - 1 for k in self.cnn_kernels) + 1:
            raise ConfigError("smiles_len too short for the CNN kernels")

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)


def _table(bs, lr, dr, n, d_fnn) -> HyperParams:
    return HyperParams(bs=bs, lr=lr, dr=dr, te=120, d_prime=500, n=n, d_fnn=d_fnn, t_pos=0.95, t_neg=0.1, lam=5.0)


PROFILES: dict[str, HyperParams] = {
    "dataset1-task1": _table(512, 2e-5, 0.3, 0, 1000),
    "dataset1-task2": _table(512, 5e-6, 0.2, 3, 1500),
    "dataset1-task3": _table(512, 5e-6, 0.2, 3, 1500),
    "dataset2-task1": _table(1024, 2e-5, 0.5, 0, 1500),
    "dataset2-task2": _table(1024, 5e-6, 0.5, 3, 1500),
    "dataset2-task3": _table(1024, 5e-6, 0.5, 3, 1500),
    # small model for toy / synthetic data on a laptop
    "desk": HyperParams(
        bs=64, lr=2e-3, dr=0.1, te=60, d_prime=32, n=3, d_fnn=32, t_pos=0.95, t_neg=0.1, lam=5.0,
        smiles_len=24, cnn_channels=(8, 16, 24), cnn_kernels=(4, 6, 8),
    ),
}


def profile(name: str) -> HyperParams:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def _coerce(name: str, raw: str, kind):
    try:
        if kind == "tuple[int, ...]":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


HYPER_FIELDS = {f.name: f.type for f in dataclasses.fields(HyperParams)}
ALIASES = {"lambda": "lam", "d'": "d_prime", "dprime": "d_prime", "d_FNN": "d_fnn"}


def hyperparams_from_mapping(base: HyperParams, values: dict[str, str]) -> HyperParams:
    changes = {}
    for key, raw in values.items():
        name = ALIASES.get(key, key)
        if name not in HYPER_FIELDS:
            raise ConfigError(f"unknown hyperparameter {key!r}")
        changes[name] = _coerce(name, raw, HYPER_FIELDS[name])
    return base.replace(**changes)


@dataclass
class RunConfig:
    drugs: Path | None = None
    ddis: Path | None = None
    charset: Path | None = None
    out: Path = Path("runs")
    task: int = 1
    fold: int = 0
    variant: str = "full"
    profile: str | None = None
    seed: int = 0
    overrides: dict[str, str] = field(default_factory=dict)

    def hyperparams(self) -> HyperParams:
        base = profile(self.profile or f"dataset1-task{self.task}")
        hp = hyperparams_from_mapping(base, self.overrides)
        return hp.replace(seed=self.seed)

    def validate(self, need_data: bool = True) -> None:
        if self.task not in (1, 2, 3):
            raise ConfigError(f"task must be 1, 2 or 3, got {self.task}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if need_data:
            for name in ("drugs", "ddis"):
                p = getattr(self, name)
                if p is None:
                    raise ConfigError(f"config is missing '{name}'")
                if not Path(p).exists():
                    raise ConfigError(f"{name} file {p} does not exist")
        if self.charset is not None and not Path(self.charset).exists():
            raise ConfigError(f"charset file {self.charset} does not exist")
        self.hyperparams()


RUN_KEYS = {"drugs", "ddis", "charset", "out", "task", "fold", "variant", "profile", "seed"}


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}:1: expected 'key = value'")
        key, _, value = (s.strip() for s in line.partition("="))
        if not key:
            raise ConfigError(f"{origin}:{lineno}:1: empty key")
        values[key] = value
    return values


def load_run_config(path: str | Path | None, **cli: object) -> RunConfig:
    """Build a RunConfig from a config file, with non-None CLI values taking precedence."""
    values: dict[str, str] = {}
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values = parse_config_text(text, str(path))
        base_dir = path.parent
    cfg = RunConfig()
    for key, raw in values.items():
        if key in RUN_KEYS:
            _set_run_field(cfg, key, raw, base_dir)
        else:
            cfg.overrides[key] = raw
    for key, val in cli.items():
        if val is None:
            continue
        if key in RUN_KEYS:
            _set_run_field(cfg, key, str(val), Path("."))
        else:
            cfg.overrides[key] = str(val)
    return cfg


def _set_run_field(cfg: RunConfig, key: str, raw: str, base_dir: Path) -> None:
    if key in ("drugs", "ddis", "charset", "out"):
        p = Path(raw)
        setattr(cfg, key, p if p.is_absolute() else base_dir / p)
    elif key in ("task", "fold", "seed"):
        try:
            setattr(cfg, key, int(raw))
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
    else:
        setattr(cfg, key, raw)
