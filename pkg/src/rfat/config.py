"""Run configuration: TOML sections with strict unknown-key rejection.

Sections mirror the pipeline stages: [waveform], [chain], [twin], [dataset],
[loop], [simulate]. Every key has a default, so an empty (or absent) file is
a valid configuration; a typo'd key aborts with a message naming it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .chain import CONFIG_RANGES, ChainParams, HardwareConfig, Scenario
from .errors import ConfigError
from .twin import TrainSettings


@dataclass(frozen=True)
class WaveformConfig:
    n_symbols: int = 1024
    constellation_order: int = 16
    sps: int = 8
    rolloff: float = 0.25
    symbol_rate_hz: float = 125e3


@dataclass(frozen=True)
class TwinConfig:
    memory_depth: int = 3
    envelope_order: int = 3
    hidden_sizes: tuple = (32, 16)
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 2e-2
    lr_decay: float = 0.015
    early_stop_epochs: int = 20
    val_fraction: float = 0.2
    drive_levels_dbfs: tuple = (0.0, -5.0, -10.0, -15.0, -20.0, -25.0, -30.0)
    # three frames per level keeps the validation split smooth enough that
    # early stopping does not fire prematurely
    frames_per_level: int = 3
    train_symbols: int = 512
    eval_drive_dbfs: float = -6.0

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            memory_depth=self.memory_depth,
            envelope_order=self.envelope_order,
            hidden_sizes=tuple(self.hidden_sizes),
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lr_decay=self.lr_decay,
            early_stop_epochs=self.early_stop_epochs,
            val_fraction=self.val_fraction,
        )


@dataclass(frozen=True)
class DatasetConfig:
    n_random: int = 160
    n_init: int = 8
    n_bo: int = 12
    candidate_pool: int = 2048


@dataclass(frozen=True)
class LoopConfig:
    budget: int = 30
    powers_dbfs: tuple = (-50.0, -45.0, -40.0, -35.0, -30.0, -25.0, -20.0, -15.0, -10.0, -5.0)
    cfos_hz: tuple = (0.0, 10e3, -10e3, 15e3, 20e3, -20e3, 5e3, -15e3, 10e3, 0.0)

    def schedule(self, seed: int) -> list:
        if len(self.powers_dbfs) != len(self.cfos_hz):
            raise ConfigError("loop powers_dbfs and cfos_hz must have equal length")
        return [
            Scenario(float(p), float(f), seed + 1000 + i)
            for i, (p, f) in enumerate(zip(self.powers_dbfs, self.cfos_hz))
        ]


@dataclass(frozen=True)
class SimulateConfig:
    input_power_dbfs: float = -30.0
    carrier_offset_hz: float = 0.0
    hardware: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.hardware) - set(CONFIG_RANGES)
        if unknown:
            raise ConfigError(
                f"unknown key(s) in [simulate.hardware]: {', '.join(sorted(unknown))}"
            )

    def hardware_config(self) -> HardwareConfig:
        base = HardwareConfig.midpoint()
        return base.replace(**self.hardware) if self.hardware else base


@dataclass(frozen=True)
class RunConfig:
    waveform: WaveformConfig = WaveformConfig()
    chain: ChainParams = ChainParams()
    twin: TwinConfig = TwinConfig()
    dataset: DatasetConfig = DatasetConfig()
    loop: LoopConfig = LoopConfig()
    simulate: SimulateConfig = SimulateConfig()


_SECTION_TYPES = {
    "waveform": WaveformConfig,
    "chain": ChainParams,
    "twin": TwinConfig,
    "dataset": DatasetConfig,
    "loop": LoopConfig,
    "simulate": SimulateConfig,
}


def _build_section(name: str, cls, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    coerced = {}
    for key, value in data.items():
        if key == "if_amp_coeffs":
            value = np.asarray(
                [[complex(re, im) for re, im in row] for row in value], dtype=np.complex128
            )
        elif isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def load_config(path=None) -> RunConfig:
    """Parse a TOML run configuration; None means all defaults."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(doc) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ConfigError(f"[{name}] must be a section")
            sections[name] = _build_section(name, cls, doc[name])
    return RunConfig(**sections)
