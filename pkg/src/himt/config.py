"""Experiment configuration and its flat ``key = value`` file format.

Keys are the field names below with ``.`` accepted in place of ``_`` after a
section prefix, e.g. ``loss.event_term_survival = true`` or ``synth.censor_rate = 0.3``.
Lines starting with ``#`` are comments. Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from himt.bags import LEVELS
from himt.errors import ConfigError, PathError
from himt.synth import SynthConfig


@dataclass
class ExperimentConfig:
    data_dir: str = ""
    levels: tuple[str, ...] = LEVELS
    per_level_k: int = 1000
    d_k: int = 256
    d_attn: int = 64
    heads: int = 1
    enc_layers: int = 1
    n_bins: int = 4
    beta: float = 0.0
    lr: float = 2e-4
    weight_decay: float = 1e-5
    epochs: int = 20
    k_folds: int = 5
    seed: int = 0
    loss_event_term_survival: bool = False
    dropout: float = 0.25
    # synthetic cohort (used by `synth`)
    synth_n_patients: int = 200
    synth_rows_per_level: int = 64
    synth_d_in: int = 16
    synth_genes_per_category: tuple[int, ...] = (4, 4, 4, 4, 4, 4)
    synth_censor_rate: float = 0.3
    synth_risk_scale: float = 2.0
    synth_gene_signal: float = 0.0

    def __post_init__(self):
        bad = [m for m in self.levels if m not in LEVELS]
        if bad or not self.levels:
            raise ConfigError(f"levels must be a nonempty subset of {LEVELS}, got {self.levels}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.k_folds < 2 or self.epochs < 0 or self.per_level_k < 1:
            raise ConfigError("k_folds >= 2, epochs >= 0 and per_level_k >= 1 required")

    def synth_config(self) -> SynthConfig:
        return SynthConfig(n_patients=self.synth_n_patients, levels=LEVELS,
                           rows_per_level=self.synth_rows_per_level, d_in=self.synth_d_in,
                           genes_per_category=self.synth_genes_per_category,
                           censor_rate=self.synth_censor_rate, risk_scale=self.synth_risk_scale,
                           gene_signal=self.synth_gene_signal)

    def dumps(self) -> str:
        return "".join(f"{_file_key(f.name)} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = ("loss", "synth")


def _file_key(name: str) -> str:
    for sec in _SECTIONS:
        if name.startswith(sec + "_"):
            return f"{sec}.{name[len(sec) + 1:]}"
    return name


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(x) for x in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    known = {_file_key(f.name): f.name for f in fields(base)}
    known.update({f.name: f.name for f in fields(base)})
    changes = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name = known[key]
        changes[name] = _parse(val.strip(), getattr(base, name), key)
    return dataclasses.replace(base, **changes)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise PathError(f"config file not found: {path}")
    cfg = parse_config(path.read_text())
    if cfg.data_dir and not Path(cfg.data_dir).is_absolute():
        cfg = cfg.replace(data_dir=str((path.parent / cfg.data_dir).resolve()))
    return cfg
