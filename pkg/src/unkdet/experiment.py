"""Experiment driver: load data, train, evaluate, and emit CSV reports.

A report is a CSV with the fixed header::

    method,seed,ap_class1,ap_class2,ap_class3,known_map,u_recall,h_score

All numbers are percents rendered with four decimals, so a repeat run with
the same config produces a byte-identical file.  Next to every CSV the
driver writes ``<name>.config.json``, an echo of the full run configuration.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adapt import (METHODS, adapt_target, method_uses_collab,
                    pretrain_source)
from .config import ExperimentConfig, config_to_dict
from .errors import ConfigError, UsageError
from .metrics import MetricsReport, evaluate
from .scenes import load_dataset

CSV_HEADER = ("method,seed,ap_class1,ap_class2,ap_class3,"
              "known_map,u_recall,h_score")

# Grids reachable from the ablation entry point.  ``method`` compares the
# four training variants; the others sweep one knob while keeping the
# configured method (sweeps of collab/pseudo-label knobs are only
# meaningful with a method that exercises them).
ABLATION_GRIDS = {
    "method": list(METHODS),
    "epsilon": [0.1, 0.3, 0.5, 0.7, 0.9],
    "topk": [8, 16, 32, 50, 64],
    "topr": [1, 2, 5, 8, 16],
    "L": [0, 1, 2, 3, 4],
}


def format_row(method: str, seed: int, report: MetricsReport) -> str:
    """One CSV line (with newline) for a finished evaluation."""
    if len(report.per_class_ap) != 3:
        raise ConfigError(
            "CSV reports require exactly 3 known classes; "
            f"got {len(report.per_class_ap)}")
    cells = [method, str(seed)]
    cells += [f"{v:.4f}" for v in report.per_class_ap]
    cells += [f"{report.known_map:.4f}", f"{report.u_recall:.4f}",
              f"{report.h_score:.4f}"]
    return ",".join(cells) + "\n"


def write_report(path, rows: list[str],
                 config: ExperimentConfig | None = None) -> None:
    """Write header + rows; echo the config next to it when given."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(CSV_HEADER + "\n" + "".join(rows))
    if config is not None:
        echo = out.with_suffix(".config.json")
        with open(echo, "w") as fh:
            json.dump(config_to_dict(config), fh, indent=1)
            fh.write("\n")


def eval_config_for(config: ExperimentConfig, method: str):
    """Evaluation always mirrors the training decode: collab stays on only
    for methods that trained with it."""
    return replace(config.eval, use_collab=method_uses_collab(method))


def pretrain_from_config(config: ExperimentConfig, data_dir,
                         capture: dict | None = None
                         ) -> dict[str, np.ndarray]:
    if config.pretrain is None:
        raise UsageError(
            "config has no 'pretrain' section; add one or supply a "
            "source checkpoint")
    scenes = load_dataset(data_dir, "source_train")
    return pretrain_source(scenes, config.pretrain, config.detector,
                           capture=capture)


def run_experiment(config: ExperimentConfig, data_dir,
                   source_params: dict[str, np.ndarray] | None = None,
                   report_path=None) -> MetricsReport:
    """Pretrain (unless source params are given), adapt, evaluate.

    Needs a generated dataset under ``data_dir`` (see
    :func:`unkdet.scenes.render_dataset`); raises :class:`UsageError`
    with a remediation hint when inputs are missing.
    """
    if source_params is None:
        source_params = pretrain_from_config(config, data_dir)
    target_scenes = load_dataset(data_dir, "target_train")
    eval_scenes = load_dataset(data_dir, "target_eval")
    ts = adapt_target(target_scenes, source_params, config.adapt,
                      config.detector, config.labels)
    report = evaluate(ts.student, eval_scenes, config.detector,
                      eval_config_for(config, config.adapt.method))
    if report_path is not None:
        row = format_row(config.adapt.method, config.adapt.seed, report)
        write_report(report_path, [row], config)
    return report


def apply_grid_value(config: ExperimentConfig, grid: str,
                     value) -> ExperimentConfig:
    """A copy of ``config`` with one grid knob swapped in."""
    if grid == "method":
        return replace(config, adapt=replace(config.adapt, method=value))
    if grid == "epsilon":
        return replace(config, labels=replace(config.labels, epsilon=value))
    if grid == "topk":
        return replace(config, detector=replace(config.detector, top_k=value))
    if grid == "topr":
        return replace(config, detector=replace(config.detector, top_r=value))
    if grid == "L":
        return replace(config,
                       detector=replace(config.detector, num_collab=value))
    raise UsageError(
        f"unknown ablation grid '{grid}'; choose from "
        f"{sorted(ABLATION_GRIDS)}")


def ablate(config: ExperimentConfig, grid: str, data_dir,
           report_path=None, values=None) -> list[str]:
    """Sweep one grid, sharing a single source pretraining across entries.

    Sharing is sound because source training never touches the knobs being
    swept: collaborative tensors are drawn fresh at adaptation time, and
    labeling/decode knobs only act during adaptation.  ``values`` overrides
    the default grid (the defaults assume the full-size detector).
    """
    if grid not in ABLATION_GRIDS:
        raise UsageError(
            f"unknown ablation grid '{grid}'; choose from "
            f"{sorted(ABLATION_GRIDS)}")
    source_params = pretrain_from_config(config, data_dir)
    target_scenes = load_dataset(data_dir, "target_train")
    eval_scenes = load_dataset(data_dir, "target_eval")
    rows = []
    for value in (ABLATION_GRIDS[grid] if values is None else values):
        cfg = apply_grid_value(config, grid, value)
        ts = adapt_target(target_scenes, source_params, cfg.adapt,
                          cfg.detector, cfg.labels)
        report = evaluate(ts.student, eval_scenes, cfg.detector,
                          eval_config_for(cfg, cfg.adapt.method))
        label = value if grid == "method" else f"{grid}={value}"
        rows.append(format_row(label, cfg.adapt.seed, report))
    if report_path is not None:
        write_report(report_path, rows, config)
    return rows
