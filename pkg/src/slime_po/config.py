"""Plain-text run configuration: INI sections of flat ``key = value`` lines.

Every key name is unique across sections, so ``--set key=value`` needs no
section prefix. Unknown sections and keys are rejected.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields

from .objective import BaselineHyperParams, SlimeHyperParams
from .seeding import derive_seed
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # "synthetic" or a JSONL path
    n_pairs: int = 2000
    max_len: int = 12
    chosen_style_permille: int = 700
    rejected_style_permille: int = 500
    sft_fraction: float = 0.33
    data_seed: int = -1  # -1: derive from the master seed


@dataclass(frozen=True)
class GradcheckConfig:
    n_points: int = 1000
    probe_params: int = 20
    probe_pairs: int = 8
    component_tol: float = 1e-5
    end_to_end_tol: float = 1e-4


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    slime: SlimeHyperParams = field(default_factory=SlimeHyperParams)
    baseline: BaselineHyperParams = field(default_factory=BaselineHyperParams)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    @property
    def data_seed(self) -> int:
        return self.data.data_seed if self.data.data_seed >= 0 else derive_seed(self.train.seed, "data")

    @property
    def split_seed(self) -> int:
        return derive_seed(self.train.seed, "split")


_MODEL_KEYS = ("vocab_size", "context_window", "embed_dim")
_SECTION_TYPES = {
    "data": DataConfig,
    "train": TrainConfig,
    "slime": SlimeHyperParams,
    "baseline": BaselineHyperParams,
    "gradcheck": GradcheckConfig,
}


def _layout():
    """Map section -> keys as they appear in the file. Model dims live in their own section."""
    out = {}
    for section, cls in _SECTION_TYPES.items():
        out[section] = [f.name for f in fields(cls) if f.name not in _MODEL_KEYS]
        if section == "train":
            out["model"] = list(_MODEL_KEYS)
    return out


LAYOUT = _layout()
KEY_SECTION = {key: sec for sec, keys in LAYOUT.items() for key in keys}
_OWNER = {sec: ("train" if sec == "model" else sec) for sec in LAYOUT}


def _coerce(cls, key, raw: str):
    default = {f.name: f.default for f in fields(cls)}[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return raw


def _build(values: dict[str, dict[str, str]]) -> RunConfig:
    kwargs = {sec: {} for sec in _SECTION_TYPES}
    for sec, items in values.items():
        owner = _OWNER[sec]
        for key, raw in items.items():
            kwargs[owner][key] = _coerce(_SECTION_TYPES[owner], key, raw)
    try:
        return RunConfig(**{sec: cls(**kwargs[sec]) for sec, cls in _SECTION_TYPES.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str = "", overrides=()) -> RunConfig:
    """Parse config text and apply ``key=value`` overrides on top."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    values: dict[str, dict[str, str]] = {}
    for sec in parser.sections():
        if sec not in LAYOUT:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in KEY_SECTION:
                raise ConfigError(f"unknown config key {key!r} in section [{sec}]")
            if KEY_SECTION[key] != sec:
                raise ConfigError(f"config key {key!r} belongs in section [{KEY_SECTION[key]}], not [{sec}]")
            values.setdefault(sec, {})[key] = raw
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in KEY_SECTION:
            raise ConfigError(f"unknown config key {key!r}")
        values.setdefault(KEY_SECTION[key], {})[key] = raw
    return _build(values)


def load_config(path=None, overrides=()) -> RunConfig:
    text = ""
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text, overrides)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved config text; parsing it back yields an equal RunConfig."""
    out = io.StringIO()
    for sec, keys in LAYOUT.items():
        obj = getattr(cfg, _OWNER[sec])
        data = asdict(obj)
        out.write(f"[{sec}]\n")
        for key in keys:
            out.write(f"{key} = {_fmt(data[key])}\n")
        out.write("\n")
    return out.getvalue()
