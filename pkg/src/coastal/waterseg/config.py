"""
Run configuration: a plain `key = value` file with dotted keys
(`weights.lambda_hsv = 0.5`), completed with the dataclass defaults and
overridden by `--set key=value` flags.
"""
from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional

from .losses import ConnConfig, HsvPriorParams, LossSettings, LossWeights
from .postprocess import PostprocConfig
from .trainer import TrainConfig
from .utils import ConfigError, InvalidParameter, PathLike


@dataclass(frozen=True)
class SynthConfig:
    count: int = 40
    split: float = 0.8
    seed: int = 7
    height: int = 32
    width: int = 32


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    postproc: PostprocConfig = field(default_factory=PostprocConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


# section name -> (dataclass, fields that hold nested sections)
SECTIONS = {
    "train": (TrainConfig, ("loss",)),
    "loss": (LossSettings, ("weights", "hsv_params", "conn")),
    "weights": (LossWeights, ()),
    "hsv": (HsvPriorParams, ()),
    "conn": (ConnConfig, ()),
    "postproc": (PostprocConfig, ()),
    "synth": (SynthConfig, ()),
}


def _default(f):
    if f.default is not MISSING:
        return f.default
    return f.default_factory()


def _scalar_fields(section: str):
    cls, nested = SECTIONS[section]
    return {f.name: f for f in fields(cls) if f.name not in nested}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"`{key}`: cannot read {text!r} as {type(default).__name__}")
    return text


def default_values() -> Dict[str, object]:
    """Every known key with its default value."""
    values = {}
    for section in SECTIONS:
        for name, f in _scalar_fields(section).items():
            values[f"{section}.{name}"] = _default(f)
    return values


def parse_assignments(lines: Iterable[str], origin: str = "config") -> Dict[str, str]:
    assignments = {}
    for number, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{number}: expected `key = value`, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        assignments[key] = value
    return assignments


def complete_values(*assignments: Mapping[str, str]) -> Dict[str, object]:
    """Defaults overlaid with each mapping of raw assignments in turn."""
    values = default_values()
    for mapping in assignments:
        for key, text in mapping.items():
            if key not in values:
                raise ConfigError(f"unknown configuration key `{key}`")
            values[key] = _parse(key, text, values[key])
    return values


def _section(section: str, values: Mapping[str, object], **nested):
    cls, _ = SECTIONS[section]
    kwargs = {name: values[f"{section}.{name}"] for name in _scalar_fields(section)}
    return cls(**kwargs, **nested)


def build(values: Mapping[str, object]) -> RunConfig:
    try:
        loss = _section(
            "loss",
            values,
            weights=_section("weights", values),
            hsv_params=_section("hsv", values),
            conn=_section("conn", values),
        )
        return RunConfig(
            train=_section("train", values, loss=loss),
            postproc=_section("postproc", values),
            synth=_section("synth", values),
        )
    except InvalidParameter as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def flatten(config: RunConfig) -> Dict[str, object]:
    """The inverse of `build`: every key with the value `config` holds."""
    objects = {
        "train": config.train,
        "loss": config.train.loss,
        "weights": config.train.loss.weights,
        "hsv": config.train.loss.hsv_params,
        "conn": config.train.loss.conn,
        "postproc": config.postproc,
        "synth": config.synth,
    }
    return {
        f"{section}.{name}": getattr(objects[section], name)
        for section in SECTIONS
        for name in _scalar_fields(section)
    }


def parse_overrides(overrides: Iterable[str]) -> Dict[str, str]:
    return parse_assignments(overrides, origin="--set")


def load_config(path: Optional[PathLike] = None, overrides: Iterable[str] = ()) -> RunConfig:
    file_values: Dict[str, str] = {}
    if path is not None:
        try:
            file_values = parse_assignments(Path(path).read_text().splitlines(), str(path))
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
    return build(complete_values(file_values, parse_overrides(overrides)))


def format_config(config: RunConfig) -> str:
    lines: List[str] = []
    current = None
    for key, value in flatten(config).items():
        section = key.split(".", 1)[0]
        if section != current:
            if current is not None:
                lines.append("")
            lines.append(f"# {section}")
            current = section
        lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


def snapshot(config: RunConfig) -> Dict[str, object]:
    """JSON-friendly flat view, tuples as lists."""
    return {k: list(v) if isinstance(v, tuple) else v for k, v in flatten(config).items()}


def from_snapshot(values: Mapping[str, object]) -> RunConfig:
    raw = {k: _format(tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
    return build(complete_values(raw))
