"""Experiment configuration: one strict JSON file describing a full run.

The file holds up to six sections, each mapping onto one config dataclass:

* ``detector`` — model architecture (:class:`~unkdet.model.DetectorConfig`);
* ``data``     — dataset sizes and scene generator settings, with a nested
  ``scene`` object (:class:`~unkdet.scenes.DataConfig`);
* ``pretrain`` — source training schedule; omit the section to disable
  pretraining (a source checkpoint must then be supplied);
* ``adapt``    — target adaptation schedule, including ``method`` and
  ``seed`` (:class:`~unkdet.adapt.TrainConfig`);
* ``labels``   — pseudo-labeling knobs (:class:`~unkdet.pseudolabel.PseudoLabelConfig`);
* ``eval``     — evaluation thresholds (:class:`~unkdet.metrics.EvalConfig`).

Every section is optional and every field defaults, but unknown sections or
keys are rejected rather than ignored, so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .adapt import TrainConfig
from .errors import ConfigError, UsageError
from .metrics import EvalConfig
from .model import DetectorConfig
from .pseudolabel import PseudoLabelConfig
from .scenes import DataConfig, SceneConfig


@dataclass(frozen=True)
class ExperimentConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: TrainConfig | None = None
    adapt: TrainConfig = field(default_factory=TrainConfig)
    labels: PseudoLabelConfig = field(default_factory=PseudoLabelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _build(cls, section, name: str):
    """Instantiate ``cls`` from a JSON object, rejecting unknown keys."""
    if not isinstance(section, dict):
        raise ConfigError(f"section '{name}' must be a JSON object")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) {unknown} in section '{name}'; "
            f"allowed: {sorted(allowed)}")
    return cls(**section)


_SECTIONS = ("detector", "data", "pretrain", "adapt", "labels", "eval")


def parse_config(mapping: dict) -> ExperimentConfig:
    """Turn a parsed JSON object into a validated :class:`ExperimentConfig`."""
    if not isinstance(mapping, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(mapping) - set(_SECTIONS))
    if unknown:
        raise ConfigError(
            f"unknown section(s) {unknown}; allowed: {list(_SECTIONS)}")

    data_section = mapping.get("data", {})
    if not isinstance(data_section, dict):
        raise ConfigError("section 'data' must be a JSON object")
    data_section = dict(data_section)
    scene_section = data_section.pop("scene", None)
    data = _build(DataConfig, data_section, "data")
    if scene_section is not None:
        data = replace(data,
                       scene=_build(SceneConfig, scene_section, "data.scene"))

    pretrain = None
    if "pretrain" in mapping and mapping["pretrain"] is not None:
        pretrain = _build(TrainConfig, mapping["pretrain"], "pretrain")

    return ExperimentConfig(
        detector=_build(DetectorConfig, mapping.get("detector", {}),
                        "detector"),
        data=data,
        pretrain=pretrain,
        adapt=_build(TrainConfig, mapping.get("adapt", {}), "adapt"),
        labels=_build(PseudoLabelConfig, mapping.get("labels", {}), "labels"),
        eval=_build(EvalConfig, mapping.get("eval", {}), "eval"),
    )


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    file = Path(path)
    if not file.exists():
        raise UsageError(f"config file {file} not found")
    try:
        with open(file) as fh:
            mapping = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {file} is not valid JSON: {exc}") \
            from exc
    return parse_config(mapping)


def config_to_dict(config: ExperimentConfig) -> dict:
    """JSON-ready echo of a config (inverse of :func:`parse_config`)."""
    out = asdict(config)
    if config.pretrain is None:
        out.pop("pretrain")
    return out
