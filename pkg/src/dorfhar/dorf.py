"""Low-rank velocity/direction factorization of projection matrices.

A projection matrix V_r (windows x columns) is modeled as V @ R where V
holds one shared 3-D velocity per window and R holds one unit direction
per column.  The fit alternates two ridge-regularized least-squares
half-steps and re-normalizes the direction columns after each pass.
Because only V @ R is identified (any 3x3 rotation can be moved between
the factors), consumers compare reconstructions, not factors, and the
classification stage projects V onto a fixed spherical direction grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DivergenceError, ValidationError, load_arrays, save_arrays

log = logging.getLogger(__name__)

FIT_MODES = ("literal", "consistent")

# Ridge floor used when a deliberately rank-deficient fit is requested
# with a zero ridge; keeps the 3x3 normal equations solvable.
_RIDGE_FLOOR = 1e-9


class SingularMatrixError(RuntimeError):
    """A normal-equations matrix was singular (zero ridge, degenerate data)."""


class DegenerateDirectionError(RuntimeError):
    """A direction column collapsed to zero and cannot be normalized."""

    def __init__(self, column: int):
        super().__init__(f"direction column {column} collapsed to zero")
        self.column = column


@dataclass(frozen=True)
class FitConfig:
    """Alternating-fit settings.

    mode "literal" uses lambda_ridge and gamma verbatim inside the two
    half-steps; mode "consistent" rescales them (mu * num_columns and
    gamma * num_windows) so each half-step exactly minimizes the
    normalized loss reported in loss_trace.
    """

    mu: float = 1e-3
    gamma: float = 1e-3
    lambda_ridge: float = 1e-3
    epsilon: float = 0.01
    max_iters: int = 500
    seed: int = 0
    mode: str = "literal"

    def __post_init__(self):
        if self.mu < 0 or self.gamma < 0 or self.lambda_ridge < 0:
            raise ValidationError("regularization weights must be >= 0")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.mode not in FIT_MODES:
            raise ValidationError(f"mode must be one of {FIT_MODES}")


@dataclass(frozen=True, eq=False)
class DorfModel:
    """Fit result: shared velocities, unit direction columns, loss trace."""

    velocities: np.ndarray     # (T, 3)
    directions: np.ndarray     # (3, num_columns), unit columns
    loss_trace: tuple[float, ...]
    converged: bool


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Fixed direction grid: rings of constant polar angle, ring-major."""

    directions: np.ndarray     # (3, 2 * rings**2), unit columns
    rings: int


@dataclass(frozen=True, eq=False)
class DorfField:
    """Velocity field projected onto a sphere grid, (windows x directions)."""

    values: np.ndarray
    low_rank: bool = False


def _unit_columns(rng: np.random.Generator, n_cols: int) -> np.ndarray:
    cols = rng.standard_normal((3, n_cols))
    norms = np.linalg.norm(cols, axis=0)
    while np.any(norms == 0.0):  # measure-zero, but stay total
        bad = norms == 0.0
        cols[:, bad] = rng.standard_normal((3, int(bad.sum())))
        norms = np.linalg.norm(cols, axis=0)
    return cols / norms


def init_directions(n_cols: int, seed: int) -> np.ndarray:
    """Deterministic random unit columns, uniform on the sphere."""
    if n_cols < 1:
        raise ValidationError("n_cols must be >= 1")
    return _unit_columns(np.random.default_rng(seed), n_cols)


def update_velocity(projections: np.ndarray, directions: np.ndarray,
                    lambda_ridge: float) -> np.ndarray:
    """Ridge least-squares velocities given fixed directions.

    Solves V = V_r R^T (R R^T + lambda I)^-1 row-wise over windows.
    """
    r = np.asarray(directions, dtype=np.float64)
    vr = np.asarray(projections, dtype=np.float64)
    gram = r @ r.T + lambda_ridge * np.eye(3)
    try:
        return np.linalg.solve(gram, (vr @ r.T).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "direction gram matrix is singular; use a positive ridge") from exc


def _raw_directions(projections: np.ndarray, velocities: np.ndarray,
                    gamma: float) -> np.ndarray:
    v = np.asarray(velocities, dtype=np.float64)
    gram = v.T @ v + gamma * np.eye(3)
    try:
        return np.linalg.solve(gram, v.T @ np.asarray(projections, np.float64))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "velocity gram matrix is singular; use a positive ridge") from exc


def update_directions(projections: np.ndarray, velocities: np.ndarray,
                      gamma: float) -> np.ndarray:
    """Ridge least-squares directions, re-normalized to unit columns."""
    raw = _raw_directions(projections, velocities, gamma)
    norms = np.linalg.norm(raw, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateDirectionError(int(zero[0]))
    return raw / norms


def loss(projections: np.ndarray, velocities: np.ndarray,
         directions: np.ndarray, mu: float, gamma: float) -> float:
    """Normalized data term plus velocity and direction penalties."""
    vr = np.asarray(projections, dtype=np.float64)
    t, n = vr.shape
    resid = velocities @ directions - vr
    return float(np.sum(resid ** 2) / (t * n)
                 + mu * np.sum(velocities ** 2) / t
                 + gamma * np.sum(directions ** 2) / n)


def fit_dorf(projections: np.ndarray, cfg: FitConfig = FitConfig(), *,
             allow_low_rank: bool = False,
             normalize_directions: bool = True) -> DorfModel:
    """Alternating fit of shared velocities and unit directions.

    Stops when the loss falls below cfg.epsilon or after cfg.max_iters
    passes.  Direction columns that collapse to zero are resampled from
    the seeded sphere distribution and logged.  allow_low_rank accepts
    fewer than 3 columns (with a positive ridge floor);
    normalize_directions=False is a diagnostic hook that skips the
    re-normalization step.
    """
    vr = np.asarray(projections, dtype=np.float64)
    if vr.ndim != 2:
        raise ValidationError("projections must be 2-D (windows x columns)")
    t, n_cols = vr.shape
    if t < 3:
        raise ValidationError("need at least 3 windows to fit")
    if n_cols < 3 and not allow_low_rank:
        raise ValidationError("need at least 3 columns to fit (or allow_low_rank)")
    if n_cols < 1:
        raise ValidationError("need at least 1 column to fit")
    if not np.all(np.isfinite(vr)):
        raise ValidationError("projections must be finite")

    if cfg.mode == "consistent":
        lam, gam = cfg.mu * n_cols, cfg.gamma * t
    else:
        lam, gam = cfg.lambda_ridge, cfg.gamma
    if allow_low_rank and n_cols < 3:
        lam = max(lam, _RIDGE_FLOOR)
        gam = max(gam, _RIDGE_FLOOR)

    rng = np.random.default_rng(cfg.seed)
    directions = _unit_columns(rng, n_cols)
    velocities = np.zeros((t, 3))
    trace: list[float] = []
    converged = False
    for _ in range(cfg.max_iters):
        velocities = update_velocity(vr, directions, lam)
        raw = _raw_directions(vr, velocities, gam)
        norms = np.linalg.norm(raw, axis=0)
        zero = norms == 0.0
        if np.any(zero):
            count = int(zero.sum())
            log.warning("resampling %d collapsed direction column(s)", count)
            raw[:, zero] = _unit_columns(rng, count)
            norms = np.linalg.norm(raw, axis=0)
        directions = raw / norms if normalize_directions else raw
        value = loss(vr, velocities, directions, cfg.mu, cfg.gamma)
        if not np.isfinite(value):
            raise DivergenceError("fit loss became non-finite")
        trace.append(value)
        if value < cfg.epsilon:
            converged = True
            break
    return DorfModel(velocities=velocities, directions=directions,
                     loss_trace=tuple(trace), converged=converged)


def sphere_grid(rings: int) -> SphereGrid:
    """Latitude/longitude direction grid with 2 * rings**2 points.

    Polar angles sit at pi * (m + 0.5) / rings for ring m; each ring
    carries 2 * rings equally spaced azimuths.  Order is ring-major.
    """
    if rings < 1:
        raise ValidationError("rings must be >= 1")
    polar = np.pi * (np.arange(rings) + 0.5) / rings
    azimuth = 2.0 * np.pi * np.arange(2 * rings) / (2 * rings)
    sin_t = np.sin(polar)[:, None]
    dirs = np.stack([
        (sin_t * np.cos(azimuth)[None, :]).ravel(),
        (sin_t * np.sin(azimuth)[None, :]).ravel(),
        np.broadcast_to(np.cos(polar)[:, None], (rings, 2 * rings)).ravel(),
    ])
    return SphereGrid(directions=dirs, rings=rings)


def project_dorf(velocities: np.ndarray, grid: SphereGrid) -> DorfField:
    """Radial-velocity field over the grid: values = velocities @ grid."""
    v = np.asarray(velocities, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise ValidationError("velocities must have shape (T, 3)")
    return DorfField(values=v @ grid.directions)


def _procrustes_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Orthogonal matrix minimizing ||a @ r - b||_F."""
    u, _, vt = np.linalg.svd(a.T @ b)
    return u @ vt


def merge_velocity_estimates(estimates: Sequence[np.ndarray]) -> np.ndarray:
    """Fuse several velocity estimates of the same motion into one.

    Each factorization recovers the velocity series only up to an
    orthogonal gauge and a fit-dependent amplitude, so the estimates
    cannot simply be averaged.  Every estimate is scaled to unit
    Frobenius norm (amplitude differences between estimates of the same
    field are fit artifacts), rotated onto the first estimate by
    orthogonal Procrustes, and rotated once more onto the mean of that
    first pass, so that no single noisy estimate dictates the common
    orientation.  Returns the mean of the aligned estimates, shape
    (T, 3).
    """
    arrays = [np.asarray(v, dtype=np.float64) for v in estimates]
    if not arrays:
        raise ValidationError("need at least one velocity estimate")
    for v in arrays:
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError("estimates must have shape (T, 3)")
        if v.shape != arrays[0].shape:
            raise ValidationError("estimates must share one shape")
    scaled = []
    for v in arrays:
        norm = float(np.linalg.norm(v))
        scaled.append(v / norm if norm > 0.0 else v)
    ref = scaled[0]
    first_pass = [v @ _procrustes_rotation(v, ref) for v in scaled]
    mean = sum(first_pass) / len(first_pass)
    aligned = [v @ _procrustes_rotation(v, mean) for v in scaled]
    return sum(aligned) / len(aligned)


def save_model(model: DorfModel, path: str | Path) -> None:
    save_arrays(path, "dorf-model", {"converged": bool(model.converged)},
                {"velocities": model.velocities,
                 "directions": model.directions,
                 "loss_trace": np.asarray(model.loss_trace, dtype=np.float64)})


def load_model(path: str | Path) -> DorfModel:
    meta, arrays = load_arrays(path, "dorf-model")
    return DorfModel(velocities=arrays["velocities"],
                     directions=arrays["directions"],
                     loss_trace=tuple(float(x) for x in arrays["loss_trace"]),
                     converged=bool(meta.get("converged", False)))
