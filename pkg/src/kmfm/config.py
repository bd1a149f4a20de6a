"""Pipeline configuration: nested dataclasses loaded from TOML with dotted overrides.

Every field has a default, so an empty file (or no file) is a valid config.
Missing keys fall back to the defaults below; unknown keys are an error.

    [data]       dataset | path, numerical, categorical, label, missing_policy, cache_dir
    [network]    kappa_num, kappa_cat, latent_num, latent_cat, use_bias, blockwise_softmax
    [train]      epochs, batch_size, learning_rate, optimizer, ..., train_fraction
    [train.num]  per-network overrides for the numerical-input network
    [train.cat]  per-network overrides for the categorical-input network
    [kernel]     degree, offset, row_normalize, knn, dense_limit
    [lpp]        L, ridge, min_active
    [objective]  alpha, beta, mode, outer_rounds, inner_epochs, rel_tol
    [kmeans]     k, restarts, max_iters, tol
    [run]        master_seed, out_dir, label_tuned
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError


@dataclass
class DataSection:
    dataset: Optional[str] = None  # heart | credit | german | adult
    path: Optional[str] = None  # custom CSV (used when dataset is unset)
    numerical: list = field(default_factory=list)
    categorical: Any = field(default_factory=list)  # names, or {name: [levels]}
    label: Optional[str] = "label"
    missing_policy: str = "drop_row"
    cache_dir: Optional[str] = None


@dataclass
class NetworkSection:
    kappa_num: int = 2  # hidden layers of the numerical-input (softmax head) network
    kappa_cat: int = 2  # hidden layers of the categorical-input (MSE head) network
    latent_num: Optional[int] = None  # default min(16, d0 - 1), capped at d0 - kappa
    latent_cat: Optional[int] = None
    use_bias: bool = True
    blockwise_softmax: bool = False


@dataclass
class TrainSection:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_fraction: float = 0.8


@dataclass
class KernelSection:
    degree: int = 2
    offset: float = 1.0
    row_normalize: bool = True  # scale encoded rows to unit norm before the kernel
    knn: Optional[int] = None  # sparse top-k kernel; None means dense
    dense_limit: int = 5000  # above this many rows, knn defaults to 50


@dataclass
class LppSection:
    L: Optional[int] = None  # None means min(k, embedding dimension)
    ridge: Optional[float] = None  # None means 1e-8 * tr(W Lambda W^T) / D
    min_active: float = 0.1  # drop latent units active on fewer than this fraction of rows


@dataclass
class ObjectiveSection:
    alpha: float = 0.5
    beta: float = 1.0
    mode: str = "two_stage"  # two_stage | alternating
    outer_rounds: int = 5
    inner_epochs: int = 10
    rel_tol: float = 1e-4


@dataclass
class KMeansSection:
    k: int = 2
    restarts: int = 10
    max_iters: int = 300
    tol: float = 1e-6


@dataclass
class RunSection:
    master_seed: int = 0
    out_dir: Optional[str] = None
    label_tuned: bool = False  # hyperparameters were chosen by looking at ground-truth scores


SECTIONS = {
    "data": DataSection,
    "network": NetworkSection,
    "train": TrainSection,
    "kernel": KernelSection,
    "lpp": LppSection,
    "objective": ObjectiveSection,
    "kmeans": KMeansSection,
    "run": RunSection,
}


@dataclass
class PipelineConfig:
    data: DataSection = field(default_factory=DataSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainSection = field(default_factory=TrainSection)
    train_num: dict = field(default_factory=dict)
    train_cat: dict = field(default_factory=dict)
    kernel: KernelSection = field(default_factory=KernelSection)
    lpp: LppSection = field(default_factory=LppSection)
    objective: ObjectiveSection = field(default_factory=ObjectiveSection)
    kmeans: KMeansSection = field(default_factory=KMeansSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        self.validate()

    def validate(self):
        o = self.objective
        if not 0.0 < o.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {o.alpha}")
        if o.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {o.beta}")
        if o.mode not in ("two_stage", "alternating"):
            raise ConfigError(f"unknown mode {o.mode!r}")
        if o.outer_rounds < 1 or o.inner_epochs < 1:
            raise ConfigError("outer_rounds and inner_epochs must be >= 1")
        if self.network.kappa_num < 1 or self.network.kappa_cat < 1:
            raise ConfigError("kappa_num and kappa_cat must be >= 1")
        if not 0.0 <= self.lpp.min_active < 1.0:
            raise ConfigError("min_active must lie in [0, 1)")
        if self.lpp.L is not None and self.lpp.L < 1:
            raise ConfigError("L must be >= 1")
        if self.kmeans.k < 1:
            raise ConfigError("k must be >= 1")
        if self.data.missing_policy not in ("drop_row", "error"):
            raise ConfigError(f"unknown missing_policy {self.data.missing_policy!r}")
        for extra in (self.train_num, self.train_cat):
            bad = set(extra) - {f.name for f in fields(TrainSection)}
            if bad:
                raise ConfigError(f"unknown train override keys: {sorted(bad)}")

    def train_for(self, which: str) -> TrainSection:
        extra = self.train_num if which == "num" else self.train_cat
        return replace(self.train, **extra)

    def to_dict(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in SECTIONS}
        d["train"]["num"] = dict(self.train_num)
        d["train"]["cat"] = dict(self.train_cat)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, klass in SECTIONS.items():
            sec = dict(d.get(name, {}))
            if name == "train":
                kwargs["train_num"] = dict(sec.pop("num", {}))
                kwargs["train_cat"] = dict(sec.pop("cat", {}))
            allowed = {f.name for f in fields(klass)}
            bad = set(sec) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            try:
                kwargs[name] = klass(**sec)
            except TypeError as exc:
                raise ConfigError(f"[{name}]: {exc}") from None
        return cls(**kwargs)


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings (values parsed as TOML literals)."""
    d = {k: dict(v) if isinstance(v, dict) else v for k, v in d.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) < 2:
            raise ConfigError(f"override key {key!r} needs a section prefix")
        node = d
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-table")
        node[parts[-1]] = _parse_value(value.strip())
    return d


def load_config(path=None, overrides=()) -> PipelineConfig:
    d = {}
    if path is not None:
        try:
            d = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return PipelineConfig.from_dict(apply_overrides(d, overrides))


def dump_toml(cfg: PipelineConfig) -> str:
    """Serialize a config back to TOML (``None`` fields are omitted)."""
    lines = []

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, dict):
            return "{ " + ", ".join(f'"{k}" = {fmt(x)}' for k, x in v.items()) + " }"
        raise TypeError(type(v))

    d = cfg.to_dict()
    for name in SECTIONS:
        sec = dict(d[name])
        subs = {k: sec.pop(k) for k in ("num", "cat") if name == "train"}
        lines.append(f"[{name}]")
        lines += [f"{k} = {fmt(v)}" for k, v in sec.items() if v is not None]
        lines.append("")
        for sub, vals in subs.items():
            if vals:
                lines.append(f"[{name}.{sub}]")
                lines += [f"{k} = {fmt(v)}" for k, v in vals.items()]
                lines.append("")
    return "\n".join(lines)
