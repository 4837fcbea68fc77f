"""Run configuration: one nested dataclass, one flat key space.

Every knob lives in a section dataclass owned by the module it controls;
this file only aggregates them and maps `section.key = value` lines (from
a config file or --set overrides) onto the nested structure. Types are
coerced from each field's default, so a key either parses to the right
type or fails loudly with the full list of valid keys.

Seed sentinels: `data.seed` and `mask.seed` default to 0, which means
"follow the run seed". Set them nonzero to pin a dataset or mask stream
independently of `run.seed`.
"""

import dataclasses
from dataclasses import dataclass, field, replace

from .backbone import BackboneConfig
from .boundary import MaskSpec, RegConfig
from .data import DatasetSpec
from .errors import ConfigError
from .fsa import FsaConfig
from .msa import MsaConfig


@dataclass(frozen=True)
class AnalyticConfig:
    proj_dim: int = 256
    gamma: float = 1.0
    nonlinearity: str = "none"

    def validate(self) -> None:
        if self.proj_dim < 1:
            raise ConfigError(f"projection width must be >= 1, got {self.proj_dim}")
        if self.gamma <= 0:
            raise ConfigError(f"ridge strength must be positive, got {self.gamma}")
        if self.nonlinearity not in ("none", "relu"):
            raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}")


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 40
    clips: int = 320
    lr: float = 0.05
    mask_fraction: float = 0.5
    batch_size: int = 24

    def validate(self) -> None:
        if self.epochs < 0 or self.clips < 1 or self.batch_size < 1:
            raise ConfigError("bad pretraining epoch, clip, or batch count")
        if self.lr <= 0:
            raise ConfigError("pretraining rate must be positive")
        if not 0.0 < self.mask_fraction < 1.0:
            raise ConfigError(
                f"mask fraction must be in (0, 1), got {self.mask_fraction}")


@dataclass(frozen=True)
class BenchConfig:
    joint_epochs: int = 6
    probe_clips: int = 32

    def validate(self) -> None:
        if self.joint_epochs < 1 or self.probe_clips < 2:
            raise ConfigError("bad joint epoch count or probe size")


@dataclass
class RunConfig:
    method: str = "pace"
    seed: int = 0
    outdir: str = "runs/out"
    sessions: int = 8
    use_msa: bool = True
    use_projection: bool = True
    use_regularizer: bool = True
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    fsa: FsaConfig = field(default_factory=FsaConfig)
    msa: MsaConfig = field(default_factory=MsaConfig)
    mask: MaskSpec = field(default_factory=MaskSpec)
    reg: RegConfig = field(default_factory=RegConfig)
    analytic: AnalyticConfig = field(default_factory=AnalyticConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def validate(self) -> None:
        if self.sessions < 1:
            raise ConfigError(f"need >= 1 session, got {self.sessions}")
        for section in (self.backbone, self.data, self.fsa, self.msa,
                        self.mask, self.reg, self.analytic, self.pretrain,
                        self.bench):
            section.validate()
        if self.fsa.rank != self.msa.rank:
            raise ConfigError(
                f"adapter rank differs between stages ({self.fsa.rank} vs "
                f"{self.msa.rank}); set fsa.rank and msa.rank equal")

    # 0 means "follow the run seed", see module docstring
    def effective_data(self, seed: int) -> DatasetSpec:
        return self.data if self.data.seed else replace(self.data, seed=seed)

    def effective_mask(self, seed: int) -> MaskSpec:
        return self.mask if self.mask.seed else replace(self.mask, seed=seed)


_SCALARS = ("method", "seed", "outdir", "sessions", "use_msa",
            "use_projection", "use_regularizer")
_SECTIONS = ("backbone", "data", "fsa", "msa", "mask", "reg", "analytic",
             "pretrain", "bench")


def known_keys() -> list[str]:
    keys = [f"run.{name}" for name in _SCALARS]
    defaults = RunConfig()
    for section in _SECTIONS:
        for f in dataclasses.fields(getattr(defaults, section)):
            keys.append(f"{section}.{f.name}")
    return keys


def _coerce(key: str, raw: str, default) -> object:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw, 10)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}") from None


def apply_setting(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    if key.count(".") != 1:
        raise ConfigError(f"setting {key!r} is not of the form section.key")
    section, name = key.split(".")
    if section == "run":
        if name not in _SCALARS:
            raise ConfigError(_unknown(key))
        value = _coerce(key, raw, getattr(cfg, name))
        return replace(cfg, **{name: value})
    if section not in _SECTIONS:
        raise ConfigError(_unknown(key))
    sub = getattr(cfg, section)
    if name not in {f.name for f in dataclasses.fields(sub)}:
        raise ConfigError(_unknown(key))
    value = _coerce(key, raw, getattr(sub, name))
    return replace(cfg, **{section: replace(sub, **{name: value})})


def _unknown(key: str) -> str:
    return f"unknown setting {key!r}; valid keys:\n  " + "\n  ".join(known_keys())


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """`section.key = value` per line; '#' comments and blanks ignored."""
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', "
                              f"got {stripped!r}")
        key, raw = stripped.split("=", 1)
        cfg = apply_setting(cfg, key.strip(), raw)
    return cfg


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config(text, base)


def flatten(cfg: RunConfig) -> dict[str, object]:
    out: dict[str, object] = {f"run.{n}": getattr(cfg, n) for n in _SCALARS}
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            out[f"{section}.{f.name}"] = getattr(sub, f.name)
    return out


def format_config(cfg: RunConfig) -> str:
    def show(v) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        return repr(v) if isinstance(v, float) else str(v)
    flat = flatten(cfg)
    return "\n".join(f"{k} = {show(flat[k])}" for k in sorted(flat)) + "\n"
