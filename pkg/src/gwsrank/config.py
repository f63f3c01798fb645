"""Experiment configuration stored as an INI file.

Every hyperparameter has a key. Where the desk-scale default differs from
the setting reported for transformer rankers, the reported value is noted
in a comment next to the key.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .gws import GwsConfig
from .index import Bm25Params
from .qpp import QppConfig
from .ranker import LossConfig, OptimizerConfig

REPORTED_VALUES = {
    ("optimizer", "learning_rate"): "reported: 5e-5 (transformer fine-tuning)",
    ("optimizer", "beta1"): "reported: 0.9",
    ("optimizer", "beta2"): "reported: 0.99",
    ("optimizer", "weight_decay"): "reported: 0.01",
    ("optimizer", "batch_size"): "reported: 16",
    ("optimizer", "max_steps"): "reported: 10000",
    ("optimizer", "validation_every"): "reported: 1000",
    ("loss", "epsilon"): "reported: 1",
    ("gws", "pool_depth"): "reported: 20 (ANTIQUE re-ranking depth)",
    ("gws", "pairs_per_query"): "reported: 20",
    ("bm25", "k1"): "Anserini default 0.9",
    ("bm25", "b"): "Anserini default 0.4",
}

PATH_KEYS = ("corpus", "queries", "qrels", "validation_queries", "eval_queries", "output_dir")


@dataclass
class ExperimentConfig:
    paths: dict[str, str] = field(default_factory=dict)
    bm25: Bm25Params = Bm25Params()
    gws: GwsConfig = GwsConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    loss: LossConfig = LossConfig()
    qpp: QppConfig = QppConfig()
    seed: int = 0
    workers: int = 0  # 0: available parallelism
    validation_fraction: float = 0.1

    SECTIONS = ("bm25", "gws", "optimizer", "loss", "qpp")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, gws=replace(self.gws, base_seed=seed),
                       optimizer=replace(self.optimizer, seed=seed))

    def to_ini(self) -> str:
        lines = ["[paths]"]
        for key in PATH_KEYS:
            lines.append(f"{key} = {self.paths.get(key, '')}")
        lines += ["", "[run]", f"seed = {self.seed}", f"workers = {self.workers}",
                  f"validation_fraction = {self.validation_fraction!r}"]
        for section in self.SECTIONS:
            lines += ["", f"[{section}]"]
            obj = getattr(self, section)
            for f in fields(obj):
                note = REPORTED_VALUES.get((section, f.name))
                if note:
                    lines.append(f"# {note}")
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from None
        cfg = cls()
        if parser.has_section("paths"):
            unknown = set(parser["paths"]) - set(PATH_KEYS)
            if unknown:
                raise ConfigError(f"unknown [paths] keys: {sorted(unknown)}")
            cfg.paths = {k: v for k, v in parser["paths"].items() if v}
        if parser.has_section("run"):
            run = parser["run"]
            try:
                cfg.seed = run.getint("seed", cfg.seed)
                cfg.workers = run.getint("workers", cfg.workers)
                cfg.validation_fraction = run.getfloat("validation_fraction", cfg.validation_fraction)
            except ValueError as exc:
                raise ConfigError(f"[run]: {exc}") from None
        for section in cls.SECTIONS:
            if not parser.has_section(section):
                continue
            current = getattr(cfg, section)
            types = {f.name: f for f in fields(current)}
            updates = {}
            for key, raw in parser[section].items():
                if key not in types:
                    raise ConfigError(f"unknown key [{section}] {key}")
                updates[key] = _parse(raw, getattr(current, key), section, key)
            try:
                setattr(cfg, section, replace(current, **updates))
            except Exception as exc:
                raise ConfigError(f"[{section}]: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_ini(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(map(str, value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, like, section, key):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None
