"""Noisy-antenna rejection around the factorization fit.

Stage 1 fits one shared model per access point and scores every antenna
by its normalized reconstruction error.  The scores are pooled across
access points, sorted, and cut at the knee of the sorted curve (largest
perpendicular distance from the chord between the first and last
point).  Stage 2 refits each surviving antenna on its own columns and
projects the result onto the sphere grid; rejected antennas yield
all-zero fields so downstream shapes never change.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import ValidationError
from .doppler import ProjectionMatrix
from .dorf import (DorfField, FitConfig, SphereGrid, fit_dorf, project_dorf,
                   sphere_grid)
from . import charts

DEFAULT_DELTA = 1e-8

Antenna = tuple[int, int]


@dataclass(frozen=True)
class SelectionTable:
    """Outcome of one knee-based selection pass."""

    errors: dict[Antenna, float]
    order: tuple[Antenna, ...]          # antennas sorted by error
    sorted_errors: tuple[float, ...]    # errors in the same order
    knee: int                           # 1-based rank of the knee point
    threshold: float
    selected: frozenset[Antenna]
    delta: float


def antenna_errors(pm: ProjectionMatrix, model, delta: float = DEFAULT_DELTA,
                   antennas: Sequence[Antenna] | None = None
                   ) -> dict[Antenna, float]:
    """Normalized reconstruction error per antenna.

    error = sum of squared residuals over the antenna's columns divided
    by (sum of squared observed values + delta).  Values are >= 0 and
    may exceed 1 when the model is worse than predicting zero.
    """
    if delta <= 0:
        raise ValidationError("delta must be positive")
    predicted = model.velocities @ model.directions
    if predicted.shape != pm.values.shape:
        raise ValidationError("model shape does not match projection matrix")
    targets = tuple(antennas) if antennas is not None else pm.antennas()
    out: dict[Antenna, float] = {}
    for q, a in targets:
        idx = pm.columns_for_antenna(q, a)
        if idx.size == 0:
            raise ValidationError(f"antenna ({q}, {a}) has no columns")
        resid = predicted[:, idx] - pm.values[:, idx]
        denom = float(np.sum(pm.values[:, idx] ** 2)) + delta
        out[(q, a)] = float(np.sum(resid ** 2)) / denom
    return out


def knee_index(sorted_errors: Sequence[float]) -> int:
    """1-based rank of the knee of a nondecreasing error curve.

    The knee is the point with the largest perpendicular distance from
    the straight line through (1, first) and (M, last); ties resolve to
    the smallest rank.
    """
    errors = np.asarray(sorted_errors, dtype=np.float64)
    if errors.ndim != 1 or errors.shape[0] < 2:
        raise ValidationError("need at least two sorted errors")
    if np.any(np.diff(errors) < 0):
        raise ValidationError("errors must be sorted nondecreasing")
    m = errors.shape[0]
    ux = float(m - 1)
    uy = float(errors[-1] - errors[0])
    dist = np.abs(ux * (errors - errors[0]) - uy * np.arange(m)) \
        / np.hypot(ux, uy)
    return int(np.argmax(dist)) + 1


def select_antennas(errors: Mapping[Antenna, float],
                    delta: float = DEFAULT_DELTA) -> SelectionTable:
    """Global knee cut over pooled antenna errors.

    Antennas whose error does not exceed the knee-point error are
    selected; the result is never empty.
    """
    if len(errors) < 2:
        raise ValidationError("need at least two antennas to select over")
    pairs = sorted(errors.items(), key=lambda kv: (kv[1], kv[0]))
    order = tuple(ant for ant, _ in pairs)
    values = tuple(float(e) for _, e in pairs)
    knee = knee_index(values)
    threshold = values[knee - 1]
    selected = frozenset(ant for ant, e in errors.items() if e <= threshold)
    return SelectionTable(errors=dict(errors), order=order,
                          sorted_errors=values, knee=knee,
                          threshold=threshold, selected=selected, delta=delta)


def _fit_antenna_field(pm: ProjectionMatrix, q: int, a: int, cfg: FitConfig,
                       grid: SphereGrid) -> DorfField:
    idx = pm.columns_for_antenna(q, a)
    sub = pm.values[:, idx]
    low_rank = idx.size < 3
    model = fit_dorf(sub, cfg, allow_low_rank=low_rank)
    projected = project_dorf(model.velocities, grid)
    return DorfField(values=projected.values, low_rank=low_rank)


def stage1_errors(per_ap: Sequence[ProjectionMatrix],
                  cfg: FitConfig = FitConfig(),
                  delta: float = DEFAULT_DELTA) -> dict[Antenna, float]:
    """Shared fit per access point, pooled per-antenna errors.

    Every access point must contribute at least one antenna with >= 3
    columns so its shared fit is well posed.
    """
    if not per_ap:
        raise ValidationError("need at least one access point")
    pooled: dict[Antenna, float] = {}
    for pm in per_ap:
        ap_ids = pm.ap_ids()
        if len(ap_ids) != 1:
            raise ValidationError("each projection matrix must cover one ap")
        if max(pm.columns_for_antenna(q, a).size
               for q, a in pm.antennas()) < 3:
            raise ValidationError(
                f"ap {ap_ids[0]} has no antenna with >= 3 columns")
        model = fit_dorf(pm.values, cfg)
        pooled.update(antenna_errors(pm, model, delta))
    return pooled


def fields_for_selection(per_ap: Sequence[ProjectionMatrix], cfg: FitConfig,
                         grid: SphereGrid,
                         selected: frozenset[Antenna] | set[Antenna] | None = None
                         ) -> dict[Antenna, DorfField]:
    """Per-antenna refits; unselected antennas get all-zero fields.

    selected=None refits every antenna (the no-selection baseline).
    """
    if not per_ap:
        raise ValidationError("need at least one access point")
    fields: dict[Antenna, DorfField] = {}
    num_windows = per_ap[0].values.shape[0]
    zero = np.zeros((num_windows, grid.directions.shape[1]))
    for pm in per_ap:
        for q, a in pm.antennas():
            if selected is None or (q, a) in selected:
                fields[(q, a)] = _fit_antenna_field(pm, q, a, cfg, grid)
            else:
                fields[(q, a)] = DorfField(values=zero.copy())
    return fields


def per_antenna_fields(per_ap: Sequence[ProjectionMatrix], cfg: FitConfig,
                       grid: SphereGrid) -> dict[Antenna, DorfField]:
    """Independent per-antenna fits for every antenna (no selection)."""
    return fields_for_selection(per_ap, cfg, grid, selected=None)


def per_antenna_velocities(per_ap: Sequence[ProjectionMatrix],
                           cfg: FitConfig = FitConfig()
                           ) -> dict[Antenna, np.ndarray]:
    """Each antenna's re-fit velocity estimate, (windows, 3) per antenna.

    The raw estimates behind per_antenna_fields, before any spherical
    projection, for callers that merge antennas at the velocity level.
    """
    if not per_ap:
        raise ValidationError("need at least one access point")
    vels: dict[Antenna, np.ndarray] = {}
    for pm in per_ap:
        for q, a in pm.antennas():
            idx = pm.columns_for_antenna(q, a)
            model = fit_dorf(pm.values[:, idx], cfg,
                             allow_low_rank=idx.size < 3)
            vels[(q, a)] = model.velocities
    return vels


def run_two_stage(per_ap: Sequence[ProjectionMatrix],
                  cfg: FitConfig = FitConfig(),
                  delta: float = DEFAULT_DELTA,
                  grid: SphereGrid | None = None
                  ) -> tuple[SelectionTable, dict[Antenna, DorfField]]:
    """Fit, score, select, refit.

    Returns the selection table and one field per antenna: refits for
    selected antennas, all-zero fields for rejected ones.
    """
    if grid is None:
        grid = sphere_grid(8)
    table = select_antennas(stage1_errors(per_ap, cfg, delta), delta)
    fields = fields_for_selection(per_ap, cfg, grid, table.selected)
    return table, fields


def write_selection_csv(table: SelectionTable, path: str | Path,
                        extra: Mapping[str, object] | None = None) -> None:
    """One row per antenna: ap, antenna, error, selected (+ extra columns)."""
    extra = dict(extra or {})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(extra) + ["ap", "antenna", "error", "selected"])
        for q, a in sorted(table.errors):
            writer.writerow(list(extra.values())
                            + [q, a, repr(table.errors[(q, a)]),
                               int((q, a) in table.selected)])


def selection_chart_svg(table: SelectionTable, title: str = "antenna errors") -> str:
    """Bar chart of per-antenna errors with the knee threshold marked."""
    antennas = sorted(table.errors)
    values = [table.errors[ant] for ant in antennas]
    labels = [f"q{q}a{a}" for q, a in antennas]
    colors = ["#2a7de1" if ant in table.selected else "#d64545"
              for ant in antennas]
    return charts.bar_chart(values, labels, title=title, y_label="error",
                            colors=colors, threshold=table.threshold)
