"""Pipeline configuration.

The file format is a TOML-style subset, deliberately small so it can be
parsed and re-serialized canonically:

    # comment
    [section]
    key = 42
    ratio = 0.5
    flag = true
    name = "text"
    range = [1.0, 2.5]

Scalars are integers, floats, booleans or double-quoted strings; lists hold
scalars.  Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


def _parse_scalar(text: str):
    text = text.strip()
    if text in ("true", "false"):
        return text == "true"
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r}") from None


def parse_config_text(text: str) -> dict[str, dict]:
    data: dict[str, dict] = {}
    section: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name in data:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            section = data.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"line {lineno}: entry before any [section]")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in section:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        value = value.strip()
        if value.startswith("[") and value.endswith("]"):
            inner = value[1:-1].strip()
            section[key] = [] if not inner else [_parse_scalar(v) for v in inner.split(",")]
        else:
            section[key] = _parse_scalar(value)
    return data


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(data: dict[str, dict]) -> str:
    lines = []
    for section in sorted(data):
        lines.append(f"[{section}]")
        for key in sorted(data[section]):
            value = data[section][key]
            if isinstance(value, (list, tuple)):
                body = ", ".join(_format_scalar(v) for v in value)
                lines.append(f"{key} = [{body}]")
            else:
                lines.append(f"{key} = {_format_scalar(value)}")
        lines.append("")
    return "\n".join(lines)


# -- typed sections -----------------------------------------------------------------


@dataclass(frozen=True)
class RunSection:
    seed: int = 42
    out_dir: str = "runs/demo"
    deterministic: bool = False


@dataclass(frozen=True)
class SynthgenSection:
    alphabet: str = "default"  # "default" = the built-in 40-class atlas
    n_train: int = 1800        # train/val/test = n_train/n_test/n_test = 3:1:1
    n_test: int = 600
    n_exam_train: int = 1200
    n_exam_test: int = 400
    pre_rotation: tuple = (-8.0, 8.0)
    pre_shear: tuple = (-0.08, 0.08)
    pre_shift: tuple = (-2.0, 2.0)
    pre_blur: tuple = (0.0, 0.5)
    pre_noise: tuple = (0.0, 0.01)
    exam_rotation: tuple = (12.0, 28.0)
    exam_shear: tuple = (0.15, 0.28)
    exam_shift: tuple = (-3.0, 3.0)
    exam_blur: tuple = (0.8, 1.4)
    exam_noise: tuple = (0.02, 0.05)
    n_sheets: int = 50
    sheet_rows: int = 6
    sheet_cols: int = 10
    cell_px: int = 64
    lm_words: int = 20000
    rubric_answers: int = 2000


@dataclass(frozen=True)
class SegmenterSection:
    blank_row_frac: float = 0.005
    min_gap: int = 10
    line_frac: float = 0.7
    border_pad: int = 2
    blank_cell_frac: float = 0.01
    binarize_method: str = "otsu"
    fixed_threshold: int = 128


@dataclass(frozen=True)
class RecognizerSection:
    lr: float = 3e-3
    epochs: int = 4
    batch_size: int = 32
    finetune_lr: float = 1e-3
    finetune_epochs: int = 6
    members: int = 5
    bootstrap_per_class: int = 10
    bootstrap_epochs: int = 15
    bootstrap_lr: float = 2e-3
    bootstrap_batch_size: int = 8


@dataclass(frozen=True)
class LmSection:
    order: int = 5


@dataclass(frozen=True)
class DecoderSection:
    beam_width: int = 8
    lm_weight: float = 0.5
    k: int = 10
    length_bonus: float = 0.0


@dataclass(frozen=True)
class ScorerSection:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    max_len: int = 64
    n_ranks: int = 4
    lr: float = 2e-3
    batch_size: int = 16
    epochs: int = 5


_SECTION_TYPES = {
    "run": RunSection,
    "synthgen": SynthgenSection,
    "segmenter": SegmenterSection,
    "recognizer": RecognizerSection,
    "lm": LmSection,
    "decoder": DecoderSection,
    "scorer": ScorerSection,
}


@dataclass(frozen=True)
class PipelineConfig:
    run: RunSection = field(default_factory=RunSection)
    synthgen: SynthgenSection = field(default_factory=SynthgenSection)
    segmenter: SegmenterSection = field(default_factory=SegmenterSection)
    recognizer: RecognizerSection = field(default_factory=RecognizerSection)
    lm: LmSection = field(default_factory=LmSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    scorer: ScorerSection = field(default_factory=ScorerSection)

    @staticmethod
    def from_dict(data: dict[str, dict]) -> "PipelineConfig":
        kwargs = {}
        for name, payload in data.items():
            cls = _SECTION_TYPES.get(name)
            if cls is None:
                raise ConfigError(f"unknown section [{name}]")
            known = {f.name: f for f in fields(cls)}
            values = {}
            for key, value in payload.items():
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                if isinstance(value, list):
                    value = tuple(value)
                values[key] = value
            kwargs[name] = cls(**values)
        return PipelineConfig(**kwargs)

    @staticmethod
    def from_file(path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise OSError(f"no such config file: {path}")
        return PipelineConfig.from_dict(parse_config_text(path.read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for name, cls in _SECTION_TYPES.items():
            section = getattr(self, name)
            out[name] = {f.name: (list(v) if isinstance(v := getattr(section, f.name), tuple) else v)
                         for f in fields(cls)}
        return out

    def to_text(self) -> str:
        return serialize_config(self.to_dict())

    def with_seed(self, seed: int) -> "PipelineConfig":
        from dataclasses import replace

        return replace(self, run=replace(self.run, seed=seed))

    # -- derived paths ------------------------------------------------------

    @property
    def out_dir(self) -> Path:
        return Path(self.run.out_dir)

    def path(self, *parts) -> Path:
        return self.out_dir.joinpath(*parts)
