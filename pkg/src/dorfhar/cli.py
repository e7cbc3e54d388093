"""Command-line entry points: run, compare, synth, inspect.

All randomness flows from config seeds, so reruns of the same config
produce byte-identical metrics, CSVs and SVG charts.  Exit codes:
0 success, 1 stage failure (the message names the stage), 2 config
error (the message names the offending field).
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import charts, selection, synth
from .core import (DEFAULT_LAYOUT, DEFAULT_TRIAL_SECONDS, LabeledTrial,
                   RADIO_PRESETS, RadioConfig, load_dataset, save_dataset)
from .doppler import DopplerConfig, radial_velocity_field
from .dorf import (FitConfig, fit_dorf, merge_velocity_estimates,
                   project_dorf, sphere_grid)
from .features import (KernelBank, TrainConfig, encode_fields, make_kernels,
                       predict, train_classifier)
from .preprocess import sanitize_frames

METRICS_SCHEMA_VERSION = 1
_STAGES = ("data", "fields", "train", "report")
_SELECTION_MODES = ("per-trial", "calibration")


class ConfigError(Exception):
    """Invalid experiment config; carries the offending field path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config error: field '{field}': {message}")
        self.field = field


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def _typed(section: dict, key: str, kind, default, path: str):
    if key not in section:
        return default
    value = section[key]
    if kind is float and isinstance(value, (int, float)) \
            and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return int(value)
    if kind is bool and isinstance(value, bool):
        return value
    if kind is str and isinstance(value, str):
        return value
    if kind is list and isinstance(value, list):
        return value
    if kind is dict and isinstance(value, dict):
        return value
    raise ConfigError(f"{path}.{key}" if path else key,
                      f"expected {kind.__name__}, got {type(value).__name__}")


def _check_keys(section: dict, allowed: Sequence[str], path: str):
    for key in section:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(where, "unknown field")


@dataclass(frozen=True)
class ResolvedConfig:
    """Fully validated experiment settings."""

    seeds: tuple[int, ...]
    out: Path
    radio: RadioConfig
    dataset_path: str | None
    classes: tuple[str, ...]
    trials_per_class: int
    groups: int
    duration_s: float
    layout: tuple[int, ...]
    paths_per_antenna: int
    noise_sigma: float
    inject_ramp: bool
    speed: float
    direction_mode: str
    static_amp: float
    corruptions: tuple[synth.CorruptionSpec, ...]
    sanitize: bool
    doppler: DopplerConfig
    fit: FitConfig
    selection_enabled: bool
    selection_delta: float
    selection_mode: str
    grid_rings: int
    num_kernels: int
    kernel_seed: int
    reference_length: int | None
    train: TrainConfig
    stages: tuple[str, ...]


_TOP_KEYS = ("seed", "seeds", "out", "radio_preset", "radio", "dataset",
             "synth", "doppler", "fit", "selection", "grid_rings", "features",
             "classifier", "sanitize", "stages", "variants")


def resolve_config(raw: dict, *, seed_override: int | None = None,
                   out_override: str | None = None) -> ResolvedConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "")

    seed = seed_override if seed_override is not None \
        else _typed(raw, "seed", int, None, "")
    if seed is None:
        raise ConfigError("seed", "missing; set it in the config or pass --seed")
    seeds = tuple(int(s) for s in _typed(raw, "seeds", list, [seed], ""))
    if not seeds:
        raise ConfigError("seeds", "must not be empty")

    out = out_override if out_override is not None \
        else _typed(raw, "out", str, None, "")
    if out is None:
        raise ConfigError("out", "missing; set it in the config or pass --out")

    if "radio" in raw:
        radio_dict = _typed(raw, "radio", dict, {}, "")
        _check_keys(radio_dict, ("carrier_frequency_hz", "subcarrier_spacing_hz",
                                 "subcarrier_count", "sample_rate_hz",
                                 "propagation_speed_m_per_s"), "radio")
        try:
            radio = RadioConfig.from_dict(radio_dict)
        except (KeyError, ValueError) as exc:
            raise ConfigError("radio", str(exc)) from exc
    else:
        preset = _typed(raw, "radio_preset", str, "2g4-64sub-100hz", "")
        if preset not in RADIO_PRESETS:
            raise ConfigError("radio_preset",
                              f"unknown preset; choose from {sorted(RADIO_PRESETS)}")
        radio = RADIO_PRESETS[preset]

    synth_cfg = _typed(raw, "synth", dict, {}, "")
    _check_keys(synth_cfg, ("classes", "trials_per_class", "groups",
                            "duration_s", "layout", "paths_per_antenna",
                            "noise_sigma", "inject_ramp", "corrupt",
                            "speed", "direction_mode", "static_amp"),
                "synth")
    classes = tuple(_typed(synth_cfg, "classes", list,
                           list(synth.GESTURE_CLASSES), "synth"))
    for name in classes:
        if name not in synth.GESTURE_CLASSES:
            raise ConfigError("synth.classes", f"unknown gesture {name!r}")
    trials_per_class = _typed(synth_cfg, "trials_per_class", int, 4, "synth")
    groups = _typed(synth_cfg, "groups", int, 2, "synth")
    duration_s = _typed(synth_cfg, "duration_s", float,
                        DEFAULT_TRIAL_SECONDS, "synth")
    layout = tuple(int(m) for m in _typed(synth_cfg, "layout", list,
                                          list(DEFAULT_LAYOUT), "synth"))
    paths_per_antenna = _typed(synth_cfg, "paths_per_antenna", int, 3, "synth")
    noise_sigma = _typed(synth_cfg, "noise_sigma", float, 0.05, "synth")
    inject_ramp = _typed(synth_cfg, "inject_ramp", bool, True, "synth")
    speed = _typed(synth_cfg, "speed", float, synth._BASE_SPEED, "synth")
    if speed <= 0:
        raise ConfigError("synth.speed", "must be positive")
    direction_mode = _typed(synth_cfg, "direction_mode", str, "uniform",
                            "synth")
    if direction_mode not in ("uniform", "triad"):
        raise ConfigError("synth.direction_mode",
                          "must be 'uniform' or 'triad'")
    static_amp = _typed(synth_cfg, "static_amp", float, 0.0, "synth")
    if static_amp < 0:
        raise ConfigError("synth.static_amp", "must be >= 0")
    corruptions = []
    for i, spec in enumerate(_typed(synth_cfg, "corrupt", list, [], "synth")):
        where = f"synth.corrupt[{i}]"
        if not isinstance(spec, dict):
            raise ConfigError(where, "expected an object")
        _check_keys(spec, ("antenna", "model", "strength"), where)
        antenna = spec.get("antenna")
        if antenna == "random":
            pinned = None
        elif isinstance(antenna, list) and len(antenna) == 2:
            pinned = (int(antenna[0]), int(antenna[1]))
        else:
            raise ConfigError(f"{where}.antenna",
                              'expected [ap, antenna] or "random"')
        try:
            corruptions.append(synth.CorruptionSpec(
                antenna=pinned,
                model=spec.get("model", "additive_white"),
                strength=float(spec.get("strength", 10.0))))
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from exc

    doppler_cfg = _typed(raw, "doppler", dict, {}, "")
    _check_keys(doppler_cfg, ("window_len", "hop", "bins_per_antenna"), "doppler")
    try:
        doppler = DopplerConfig(
            window_len=_typed(doppler_cfg, "window_len", int, 64, "doppler"),
            hop=_typed(doppler_cfg, "hop", int, 16, "doppler"),
            bins_per_antenna=_typed(doppler_cfg, "bins_per_antenna", int, 8,
                                    "doppler"))
    except ValueError as exc:
        raise ConfigError("doppler", str(exc)) from exc

    fit_cfg = _typed(raw, "fit", dict, {}, "")
    _check_keys(fit_cfg, ("mu", "gamma", "lambda_ridge", "epsilon",
                          "max_iters", "seed", "mode"), "fit")
    try:
        fit = FitConfig(
            mu=_typed(fit_cfg, "mu", float, 1e-3, "fit"),
            gamma=_typed(fit_cfg, "gamma", float, 1e-3, "fit"),
            lambda_ridge=_typed(fit_cfg, "lambda_ridge", float, 1e-3, "fit"),
            epsilon=_typed(fit_cfg, "epsilon", float, 0.01, "fit"),
            max_iters=_typed(fit_cfg, "max_iters", int, 500, "fit"),
            seed=_typed(fit_cfg, "seed", int, 0, "fit"),
            mode=_typed(fit_cfg, "mode", str, "literal", "fit"))
    except ValueError as exc:
        raise ConfigError("fit", str(exc)) from exc

    sel_cfg = _typed(raw, "selection", dict, {}, "")
    _check_keys(sel_cfg, ("enabled", "delta", "mode"), "selection")
    selection_enabled = _typed(sel_cfg, "enabled", bool, True, "selection")
    selection_delta = _typed(sel_cfg, "delta", float,
                             selection.DEFAULT_DELTA, "selection")
    if selection_delta <= 0:
        raise ConfigError("selection.delta", "must be positive")
    selection_mode = _typed(sel_cfg, "mode", str, "per-trial", "selection")
    if selection_mode not in _SELECTION_MODES:
        raise ConfigError("selection.mode",
                          f"must be one of {_SELECTION_MODES}")

    grid_rings = _typed(raw, "grid_rings", int, 8, "")
    if grid_rings < 1:
        raise ConfigError("grid_rings", "must be >= 1")

    feat_cfg = _typed(raw, "features", dict, {}, "")
    _check_keys(feat_cfg, ("num_kernels", "seed", "reference_length"),
                "features")
    num_kernels = _typed(feat_cfg, "num_kernels", int, 1000, "features")
    if num_kernels < 1:
        raise ConfigError("features.num_kernels", "must be >= 1")
    kernel_seed = _typed(feat_cfg, "seed", int, 1234, "features")
    reference_length = _typed(feat_cfg, "reference_length", int, None,
                              "features")

    cls_cfg = _typed(raw, "classifier", dict, {}, "")
    _check_keys(cls_cfg, ("hidden", "learning_rate", "weight_decay",
                          "batch_size", "label_smoothing", "max_epochs",
                          "patience", "val_fraction"), "classifier")
    hidden = _typed(cls_cfg, "hidden", list, [256, 128], "classifier")
    if len(hidden) != 2:
        raise ConfigError("classifier.hidden", "expected two layer sizes")
    try:
        train = TrainConfig(
            hidden=(int(hidden[0]), int(hidden[1])),
            learning_rate=_typed(cls_cfg, "learning_rate", float, 1e-4,
                                 "classifier"),
            weight_decay=_typed(cls_cfg, "weight_decay", float, 0.01,
                                "classifier"),
            batch_size=_typed(cls_cfg, "batch_size", int, 64, "classifier"),
            label_smoothing=_typed(cls_cfg, "label_smoothing", float, 0.1,
                                   "classifier"),
            max_epochs=_typed(cls_cfg, "max_epochs", int, 2500, "classifier"),
            patience=_typed(cls_cfg, "patience", int, 200, "classifier"),
            val_fraction=_typed(cls_cfg, "val_fraction", float, 0.2,
                                "classifier"))
    except ValueError as exc:
        raise ConfigError("classifier", str(exc)) from exc

    stages = tuple(_typed(raw, "stages", list, list(_STAGES), ""))
    if tuple(stages) != _STAGES[:len(stages)] or not stages:
        raise ConfigError("stages",
                          f"must be a non-empty prefix of {list(_STAGES)}")

    return ResolvedConfig(
        seeds=seeds, out=Path(out), radio=radio,
        dataset_path=_typed(raw, "dataset", str, None, ""),
        classes=classes, trials_per_class=trials_per_class, groups=groups,
        duration_s=duration_s, layout=layout,
        paths_per_antenna=paths_per_antenna, noise_sigma=noise_sigma,
        inject_ramp=inject_ramp, speed=speed,
        direction_mode=direction_mode, static_amp=static_amp,
        corruptions=tuple(corruptions),
        sanitize=_typed(raw, "sanitize", bool, True, ""),
        doppler=doppler, fit=fit, selection_enabled=selection_enabled,
        selection_delta=selection_delta, selection_mode=selection_mode,
        grid_rings=grid_rings, num_kernels=num_kernels,
        kernel_seed=kernel_seed, reference_length=reference_length,
        train=train, stages=stages)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _derive_int(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _synth_trial(rc: ResolvedConfig, seed: int, class_idx: int,
                 trial_idx: int) -> LabeledTrial:
    return synth.make_trial(rc.radio, rc.classes, class_idx, trial_idx,
                            rc.groups, seed, duration_s=rc.duration_s,
                            layout=rc.layout,
                            paths_per_antenna=rc.paths_per_antenna,
                            noise_sigma=rc.noise_sigma,
                            corruptions=rc.corruptions,
                            inject_ramp=rc.inject_ramp, speed=rc.speed,
                            direction_mode=rc.direction_mode,
                            static_amp=rc.static_amp)


def _trial_projections(rc: ResolvedConfig, trial: LabeledTrial):
    frames = sanitize_frames(trial.frames) if rc.sanitize else trial.frames
    return radial_velocity_field(frames, rc.doppler).split_by_ap()


@dataclass
class TrialResult:
    """Everything the fold loop needs from one processed trial.

    fields holds each antenna's re-fit velocity estimate (windows, 3).
    A trial's classifier input merges the kept antennas' estimates
    (norm-equalized, gauge-aligned, averaged), projects the merge onto
    the direction grid, and encodes those series; rejected antennas
    contribute all-zero fields, which drop out of the merge, so merging
    only the kept ones is the same thing without allocating zeros.
    Selections can therefore be re-applied per fold or per variant
    without re-fitting.
    """

    label: int
    subject: int
    per_ap: list
    errors: dict
    fields: dict
    features: np.ndarray | None
    table: selection.SelectionTable | None


def _merged_series(fields: dict, chosen, grid) -> np.ndarray:
    merged = merge_velocity_estimates([fields[ant] for ant in sorted(chosen)])
    return project_dorf(merged, grid).values


def _process_trial(args):
    """Worker: one trial -> stage-1 errors plus per-antenna estimates.

    features/table stay unfilled here; each variant merges and encodes
    the cached velocity estimates under its own selection afterwards.
    """
    rc, seed, trial_ref = args
    if rc.dataset_path is None:
        class_idx, trial_idx = trial_ref
        trial = _synth_trial(rc, seed, class_idx, trial_idx)
    else:
        trial = trial_ref
    per_ap = _trial_projections(rc, trial)
    errors = selection.stage1_errors(per_ap, rc.fit, rc.selection_delta)
    fields = selection.per_antenna_velocities(per_ap, rc.fit)
    return TrialResult(label=trial.label, subject=trial.subject,
                       per_ap=per_ap, errors=errors, fields=fields,
                       features=None, table=None)


_BANK_CACHE: dict[tuple, KernelBank] = {}


def _bank_key(rc: ResolvedConfig, num_windows: int) -> tuple:
    ref = rc.reference_length if rc.reference_length is not None \
        else min(32, num_windows)
    return (rc.num_kernels, rc.kernel_seed, ref)


def _bank_for(rc: ResolvedConfig, num_windows: int) -> KernelBank:
    key = _bank_key(rc, num_windows)
    if key not in _BANK_CACHE:
        _BANK_CACHE[key] = make_kernels(*key)
    return _BANK_CACHE[key]


def _trial_refs(rc: ResolvedConfig):
    if rc.dataset_path is not None:
        return load_dataset(rc.dataset_path)
    return [(ci, ti) for ci in range(len(rc.classes))
            for ti in range(rc.trials_per_class)]


def _heavy_key(rc: ResolvedConfig) -> tuple:
    """Everything that influences a trial's fields and errors; variants
    differing only in selection, feature, or classifier settings share
    this key."""
    return (rc.radio, rc.dataset_path, rc.classes, rc.trials_per_class,
            rc.groups, rc.duration_s, rc.layout, rc.paths_per_antenna,
            rc.noise_sigma, rc.inject_ramp, rc.speed, rc.direction_mode,
            rc.static_amp, rc.corruptions, rc.sanitize, rc.doppler, rc.fit,
            rc.selection_delta, rc.grid_rings)


def _finish_results(rc: ResolvedConfig, results):
    """Fill per-trial features/selection for the current variant."""
    if rc.selection_mode != "per-trial" or not results:
        return results
    bank = _bank_for(rc, results[0].per_ap[0].values.shape[0])
    grid = sphere_grid(rc.grid_rings)
    out = []
    for r in results:
        table = selection.select_antennas(r.errors, rc.selection_delta)
        chosen = table.selected if rc.selection_enabled \
            else frozenset(r.fields)
        merged = _merged_series(r.fields, chosen, grid)
        out.append(replace(r, features=encode_fields([merged], bank).pooled,
                           table=table))
    return out


def _map_trials(rc: ResolvedConfig, seed: int, jobs: int,
                heavy_cache: dict | None = None):
    key = (_heavy_key(rc), seed)
    if heavy_cache is not None and key in heavy_cache:
        return _finish_results(rc, heavy_cache[key])
    refs = _trial_refs(rc)
    args = [(rc, seed, ref) for ref in refs]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            base = pool.map(_process_trial, args)
    else:
        base = [_process_trial(a) for a in args]
    if heavy_cache is not None:
        heavy_cache[key] = base
    return _finish_results(rc, base)


def _fold_features_calibration(rc: ResolvedConfig, results, train_subjects,
                               feats_memo: dict | None = None):
    """Calibration mode: one selection fixed from the training split.

    Stage-1 errors are reduced per antenna to their median over the
    training trials (medians shrug off the rare trial where a healthy
    antenna happens to see little motion), the knee cut runs once on
    those medians, and every trial's feature comes from merging its
    cached fields under that selection and encoding the merge.
    """
    pooled: dict[tuple[int, int], list[float]] = {}
    for r in results:
        if r.subject not in train_subjects:
            continue
        for ant, err in r.errors.items():
            pooled.setdefault(ant, []).append(err)
    med_errors = {ant: float(np.median(v)) for ant, v in pooled.items()}
    table = selection.select_antennas(med_errors, rc.selection_delta)
    chosen = table.selected if rc.selection_enabled \
        else frozenset(results[0].fields)
    if feats_memo is not None and chosen in feats_memo:
        feats = feats_memo[chosen]
    else:
        bank = _bank_for(rc, results[0].per_ap[0].values.shape[0])
        grid = sphere_grid(rc.grid_rings)
        feats = np.array([
            encode_fields([_merged_series(r.fields, chosen, grid)],
                          bank).pooled for r in results])
        if feats_memo is not None:
            feats_memo[chosen] = feats
    labels = np.array([r.label for r in results])
    subjects = np.array([r.subject for r in results])
    return table, feats, labels, subjects


@dataclass
class PipelineOutput:
    metrics: dict
    selection_rows: list[list]
    chart_svgs: dict[str, str]


def run_pipeline(rc: ResolvedConfig, jobs: int = 1,
                 heavy_cache: dict | None = None,
                 collect_charts: bool = True) -> PipelineOutput:
    """Execute the configured stage prefix and collect reportables."""
    fold_accuracies: dict[str, list[float]] = {}
    class_correct = np.zeros(len(rc.classes) if rc.dataset_path is None else 0)
    class_total = np.zeros_like(class_correct)
    selection_rows: list[list] = []
    chart_svgs: dict[str, str] = {}
    run_train = "train" in rc.stages

    for seed in rc.seeds:
        stage = "data"
        try:
            refs = _trial_refs(rc)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        if "fields" not in rc.stages:
            continue
        stage = "fields"
        try:
            results = _map_trials(rc, seed, jobs, heavy_cache)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        del refs

        if collect_charts and not chart_svgs and results:
            chart_svgs.update(_make_charts(rc, results[0]))

        labels = np.array([r.label for r in results])
        subjects = np.array([r.subject for r in results])
        if class_total.size == 0:
            num_classes = int(labels.max()) + 1
            class_correct = np.zeros(num_classes)
            class_total = np.zeros(num_classes)

        if rc.selection_mode == "per-trial":
            for ti, r in enumerate(results):
                for q, a in sorted(r.table.errors):
                    selection_rows.append(
                        [seed, f"trial{ti}", q, a,
                         repr(r.table.errors[(q, a)]),
                         int((q, a) in r.table.selected)])

        if not run_train:
            continue
        stage = "train"
        try:
            accs = []
            feats_memo: dict = {}
            for fold_idx, held_out in enumerate(sorted(set(subjects.tolist()))):
                if rc.selection_mode == "calibration":
                    train_subjects = set(subjects.tolist()) - {held_out}
                    table, feats, labels_c, subjects_c = \
                        _fold_features_calibration(rc, results, train_subjects,
                                                   feats_memo)
                    for q, a in sorted(table.errors):
                        selection_rows.append(
                            [seed, f"fold{fold_idx}", q, a,
                             repr(table.errors[(q, a)]),
                             int((q, a) in table.selected)])
                    x, y, subj = feats, labels_c, subjects_c
                else:
                    x = np.array([r.features for r in results])
                    y, subj = labels, subjects
                train_mask = subj != held_out
                cfg = replace(rc.train,
                              seed=_derive_int(seed, 7000 + fold_idx))
                model = train_classifier(x[train_mask], y[train_mask], cfg)
                probs = predict(model, x[~train_mask])
                predicted = np.asarray(model.classes)[np.argmax(probs, axis=1)]
                actual = y[~train_mask]
                correct = predicted == actual
                accs.append(float(np.mean(correct)))
                for cls, ok in zip(actual, correct):
                    class_correct[int(cls)] += bool(ok)
                    class_total[int(cls)] += 1
            fold_accuracies[str(seed)] = accs
        except Exception as exc:
            raise StageError(stage, exc) from exc

    metrics: dict = {"schema_version": METRICS_SCHEMA_VERSION,
                     "seeds": list(rc.seeds),
                     "stages": list(rc.stages)}
    if run_train and fold_accuracies:
        all_accs = [a for accs in fold_accuracies.values() for a in accs]
        class_names = list(rc.classes) if rc.dataset_path is None \
            else [str(i) for i in range(class_total.size)]
        metrics.update({
            "mean_accuracy": float(np.mean(all_accs)),
            "std_accuracy": float(np.std(all_accs)),
            "fold_accuracies": fold_accuracies,
            "per_class_accuracy": {
                name: (float(class_correct[i] / class_total[i])
                       if class_total[i] else None)
                for i, name in enumerate(class_names)},
        })
    return PipelineOutput(metrics=metrics, selection_rows=selection_rows,
                          chart_svgs=chart_svgs)


def _make_charts(rc: ResolvedConfig, first_result) -> dict[str, str]:
    per_ap, table = first_result.per_ap, first_result.table
    svgs = {}
    model = fit_dorf(per_ap[0].values, rc.fit)
    times = per_ap[0].window_times_s
    svgs["velocity_traces.svg"] = charts.line_chart(
        [(axis, times.tolist(), model.velocities[:, i].tolist())
         for i, axis in enumerate(("lateral", "vertical", "depth"))],
        title="fitted velocity, first trial / first ap",
        x_label="time (s)", y_label="velocity (m/s)")
    loss_series = []
    for pm in per_ap:
        m = fit_dorf(pm.values, rc.fit)
        q = pm.ap_ids()[0]
        loss_series.append((f"ap{q}", list(range(1, len(m.loss_trace) + 1)),
                            [float(v) for v in m.loss_trace]))
    svgs["loss_curves.svg"] = charts.line_chart(
        loss_series, title="fit loss per iteration, first trial",
        x_label="iteration", y_label="loss")
    if table is None:
        errors = selection.stage1_errors(per_ap, rc.fit, rc.selection_delta)
        table = selection.select_antennas(errors, rc.selection_delta)
    svgs["antenna_errors.svg"] = selection.selection_chart_svg(
        table, title="per-antenna reconstruction error, first trial")
    return svgs


def _write_outputs(out_dir: Path, command: str, metrics: dict,
                   selection_rows: list[list], chart_svgs: dict[str, str],
                   extra_files: dict[str, str] | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []

    metrics = dict(metrics)
    metrics["command"] = command
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    files.append("metrics.json")

    if selection_rows is not None:
        with open(out_dir / "selection.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "scope", "ap", "antenna", "error",
                             "selected"])
            writer.writerows(selection_rows)
        files.append("selection.csv")

    for name, svg in chart_svgs.items():
        (out_dir / name).write_text(svg)
        files.append(name)

    for name, text in (extra_files or {}).items():
        (out_dir / name).write_text(text)
        files.append(name)

    manifest = {"schema_version": METRICS_SCHEMA_VERSION, "command": command,
                "files": sorted(files)}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def cmd_run(raw_config: dict, *, seed_override=None, out_override=None,
            jobs: int = 1) -> int:
    rc = resolve_config(raw_config, seed_override=seed_override,
                        out_override=out_override)
    output = run_pipeline(rc, jobs=jobs)
    if "report" in rc.stages:
        _write_outputs(rc.out, "run", output.metrics, output.selection_rows,
                       output.chart_svgs)
    return 0


def cmd_compare(raw_config: dict, *, seed_override=None, out_override=None,
                jobs: int = 1) -> int:
    base = dict(raw_config)
    variants_raw = base.pop("variants", [
        {"name": "selection", "overrides": {"selection": {"enabled": True}}},
        {"name": "no-selection",
         "overrides": {"selection": {"enabled": False}}},
    ])
    if not isinstance(variants_raw, list) or len(variants_raw) < 2:
        raise ConfigError("variants", "expected a list of >= 2 variants")
    variant_metrics = {}
    heavy_cache: dict = {}
    chart_svgs: dict[str, str] = {}
    selection_rows: list[list] = []
    out_dir = None
    for i, spec in enumerate(variants_raw):
        if not isinstance(spec, dict) or "name" not in spec:
            raise ConfigError(f"variants[{i}]", "expected an object with 'name'")
        name = spec["name"]
        merged = _merge(base, spec.get("overrides", {}))
        rc = resolve_config(merged, seed_override=seed_override,
                            out_override=out_override)
        out_dir = rc.out
        output = run_pipeline(rc, jobs=jobs, heavy_cache=heavy_cache,
                              collect_charts=not chart_svgs)
        if output.chart_svgs:
            chart_svgs.update(output.chart_svgs)
        selection_rows.extend([[name] + row for row in output.selection_rows])
        variant_metrics[name] = {
            k: v for k, v in output.metrics.items()
            if k not in ("schema_version", "stages")}

    metrics = {"schema_version": METRICS_SCHEMA_VERSION,
               "variants": variant_metrics}
    lines = ["variant,mean_accuracy,std_accuracy"]
    for name, vm in variant_metrics.items():
        lines.append(f"{name},{vm.get('mean_accuracy')!r},"
                     f"{vm.get('std_accuracy')!r}")
    comparison_csv = "\n".join(lines) + "\n"

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "selection.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "scope", "ap", "antenna", "error",
                         "selected"])
        writer.writerows(selection_rows)
    _write_outputs(out_dir, "compare", metrics, None, chart_svgs,
                   extra_files={"comparison.csv": comparison_csv})
    # selection.csv written above; record it in the manifest by rewriting.
    manifest_path = out_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["files"] = sorted(set(manifest["files"]) | {"selection.csv"})
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2)
                             + "\n")
    return 0


def cmd_synth(raw_config: dict, *, seed_override=None, out_override=None) -> int:
    rc = resolve_config(raw_config, seed_override=seed_override,
                        out_override=out_override)
    trials = [
        _synth_trial(rc, rc.seeds[0], ci, ti)
        for ci in range(len(rc.classes))
        for ti in range(rc.trials_per_class)
    ]
    rc.out.mkdir(parents=True, exist_ok=True)
    save_dataset(trials, rc.out / "dataset.bin")
    manifest = {"schema_version": METRICS_SCHEMA_VERSION, "command": "synth",
                "files": ["dataset.bin"]}
    (rc.out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {len(trials)} trials to {rc.out / 'dataset.bin'}")
    return 0


def cmd_inspect(data_path: str) -> int:
    trials = load_dataset(data_path)
    radio = trials[0].frames.radio
    labels = sorted({t.label for t in trials})
    subjects = sorted({t.subject for t in trials})
    print(f"trials: {len(trials)}")
    print(f"radio: carrier {radio.carrier_frequency_hz / 1e9:.3f} GHz, "
          f"{radio.subcarrier_count} subcarriers @ "
          f"{radio.subcarrier_spacing_hz / 1e3:.1f} kHz, "
          f"{radio.sample_rate_hz:.0f} Hz frames")
    print(f"layout: {list(trials[0].frames.layout)} "
          f"({sum(trials[0].frames.layout)} antennas)")
    print(f"samples per trial: {sorted({t.frames.num_times for t in trials})}")
    print(f"labels: " + ", ".join(
        f"{l}x{sum(1 for t in trials if t.label == l)}" for l in labels))
    print(f"subjects: {subjects}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dorfhar",
        description="CSI activity-recognition pipeline with antenna selection")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("run", "run the full pipeline and write metrics"),
            ("compare", "run pipeline variants and write a comparison"),
            ("synth", "generate a synthetic dataset file")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        if name != "synth":
            p.add_argument("--jobs", type=int, default=1,
                           help="parallel workers for per-trial stages")
    p = sub.add_parser("inspect", help="summarize a dataset file")
    p.add_argument("--data", required=True, help="dataset path")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "inspect":
            return cmd_inspect(args.data)
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}")
        if args.command == "run":
            return cmd_run(raw, seed_override=args.seed,
                           out_override=args.out, jobs=args.jobs)
        if args.command == "compare":
            return cmd_compare(raw, seed_override=args.seed,
                               out_override=args.out, jobs=args.jobs)
        return cmd_synth(raw, seed_override=args.seed, out_override=args.out)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except StageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except Exception as exc:  # stage machinery outside run_pipeline
        print(f"stage 'report' failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
