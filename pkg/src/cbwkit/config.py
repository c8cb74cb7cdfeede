"""Training configuration: dataclass defaults, a flat ``key = value`` file format, overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .losses import PRESETS, LambdaConfig

DTYPES = ("float32", "float64")


class ConfigError(ValueError):
    """Invalid configuration value or key."""


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "full"
    lambda_overrides: tuple = ()  # (("p_ref", 0.0), ...) applied on top of the preset
    batch_size: int = 2
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    iterations: int = 2000
    snippet_length: int = 5
    height: int = 64
    width: int = 128
    seed: int = 0
    flip: bool = True
    scale_crop: bool = True
    max_scale: float = 1.15
    grad_clip: float = 10.0
    checkpoint_every: int = 500
    dtype: str = "float32"
    deterministic: bool = False
    moving_only: bool = False

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.snippet_length < 3 or self.snippet_length % 2 != 1:
            raise ConfigError("snippet_length must be odd and >= 3")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.height % 32 or self.width % 32:
            raise ConfigError("height and width must be multiples of 32")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}")
        if self.max_scale < 1:
            raise ConfigError("max_scale must be >= 1")
        names = {f.name for f in fields(LambdaConfig)}
        for k, v in self.lambda_overrides:
            if k not in names:
                raise ConfigError(f"unknown lambda {k!r}")
            if v < 0:
                raise ConfigError(f"lambda {k} must be >= 0")

    @property
    def lambdas(self) -> LambdaConfig:
        return replace(PRESETS[self.preset], **dict(self.lambda_overrides))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "lambda_overrides":
                continue
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        lines += [f"lambda.{k} = {v}" for k, v in self.lambda_overrides]
        return "\n".join(lines) + "\n"


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(name: str, raw: str, kind):
    try:
        if kind is bool:
            return _BOOL[raw.strip().lower()]
        return kind(raw.strip())
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys win."""
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_config(values: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    kinds = {f.name: type(getattr(base, f.name)) for f in fields(base) if f.name != "lambda_overrides"}
    kw: dict = {}
    lam = dict(base.lambda_overrides)
    for k, raw in values.items():
        if k.startswith("lambda."):
            lam[k[len("lambda.") :]] = _coerce(k, raw, float)
        elif k in kinds:
            kw[k] = _coerce(k, raw, kinds[k])
        else:
            raise ConfigError(f"unknown config key {k!r}")
    kw["lambda_overrides"] = tuple(sorted(lam.items()))
    return replace(base, **kw)


def load_config(path: Path | None, overrides: dict[str, str] | None = None) -> TrainConfig:
    values = parse_config_text(Path(path).read_text()) if path is not None else {}
    values.update(overrides or {})
    return build_config(values)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
