"""Synthetic multipath scenes with known ground truth.

A scene couples a stylized gesture velocity trajectory to a set of
propagation paths (one group per antenna, each path with a fixed
arrival direction, amplitude and base delay).  Scenes can be rendered
either directly as per-path radial-velocity projections (with the true
velocity/direction factors returned alongside) or as raw CSI frames
whose path delays drift with the motion, optionally with an injected
affine phase ramp and antenna-level corruption.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import (CsiFrameSet, LabeledTrial, RadioConfig, ValidationError,
                   iter_antennas)
from .doppler import ProjectionMatrix

GESTURE_CLASSES = ("circle", "left-right", "up-down", "push-pull")

# Axis convention: 0 = lateral, 1 = vertical, 2 = depth (toward sensor).
_GESTURE_AXES = {"left-right": (0,), "up-down": (1,), "push-pull": (2,),
                 "circle": (0, 1)}

# Base oscillation count per trial.  Fitted velocities are recovered only
# up to a global rotation, so absolute motion axes cannot separate the
# classes downstream; tempo survives any rotation and does.
_GESTURE_CYCLES = {"left-right": 2.0, "circle": 3.0, "up-down": 4.0,
                   "push-pull": 6.0}

CORRUPTION_MODELS = ("additive_white", "phase_spikes", "oscillator_drift",
                     "path_wander")

_BASE_SPEED = 0.6  # m/s, peak gesture speed before jitter


@dataclass(frozen=True)
class CorruptionSpec:
    """Degradation applied to a single antenna.

    additive_white scales that antenna's noise level; phase_spikes
    garbles random frames with per-subcarrier phase noise;
    oscillator_drift adds a slowly wandering affine phase (removable by
    sanitization, by design); path_wander randomly re-orients the
    antenna's arrival paths over the trial, as from a loose or
    vibrating element, so its readings keep normal strength but stop
    matching any fixed direction model.

    antenna may be None, leaving the spec floating: make_trial then
    pins it to an antenna drawn for that trial, modelling a fault that
    moves between sessions instead of one permanently bad unit.
    Floating specs must be pinned before reaching make_scene.
    """

    antenna: tuple[int, int] | None
    model: str = "additive_white"
    strength: float = 10.0

    def __post_init__(self):
        if self.model not in CORRUPTION_MODELS:
            raise ValidationError(f"model must be one of {CORRUPTION_MODELS}")
        if self.strength <= 0:
            raise ValidationError("strength must be positive")
        if self.antenna is not None:
            object.__setattr__(self, "antenna",
                               (int(self.antenna[0]), int(self.antenna[1])))


@dataclass(frozen=True, eq=False)
class Scene:
    """Everything needed to render one trial, plus its ground truth."""

    trajectory: np.ndarray          # (T, 3) velocities, m/s
    gesture: str
    layout: tuple[int, ...]
    directions: np.ndarray          # (3, P) unit columns, grouped by antenna
    amplitudes: np.ndarray          # (P,)
    base_delays_s: np.ndarray       # (P,)
    delay_bins: np.ndarray          # (P,) int, bin of each base delay
    path_antenna: np.ndarray        # (P,) int, flat antenna index per path
    noise_sigma: np.ndarray         # per-antenna noise level
    corruptions: tuple[CorruptionSpec, ...]
    seed: int
    static_amp: np.ndarray | None = None   # (A,) line-of-sight amplitude
    static_bins: np.ndarray | None = None  # (A,) int, its delay bin


def _derive_seed(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(parts)))


def gen_trajectory(gesture: str, num_samples: int, seed: int,
                   jitter: float = 0.1,
                   speed: float = _BASE_SPEED) -> np.ndarray:
    """Velocity trajectory (num_samples, 3) for one gesture class.

    Each active axis oscillates at a class-specific base tempo (see
    _GESTURE_CYCLES, in cycles per trial); amplitude, tempo and phase
    carry seeded relative jitter for intra-class variation; inactive
    axes are identically zero.  speed is the nominal peak speed in m/s
    before jitter.  With jitter = 0 the cycle count is a whole number,
    making the time-averaged velocity exactly zero.
    """
    if gesture not in GESTURE_CLASSES:
        raise ValidationError(f"unknown gesture {gesture!r}; "
                              f"expected one of {GESTURE_CLASSES}")
    if num_samples < 4:
        raise ValidationError("num_samples must be >= 4")
    if speed <= 0:
        raise ValidationError("speed must be positive")
    rng = _derive_seed(seed, 11)
    amp = speed * (1.0 + jitter * rng.uniform(-1.0, 1.0))
    cycles = _GESTURE_CYCLES[gesture] * (1.0 + jitter * rng.uniform(-1.0, 1.0))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    arg = 2.0 * np.pi * cycles * np.arange(num_samples) / num_samples + phase
    out = np.zeros((num_samples, 3))
    axes = _GESTURE_AXES[gesture]
    if gesture == "circle":
        out[:, axes[0]] = amp * np.cos(arg)
        out[:, axes[1]] = amp * np.sin(arg)
    else:
        out[:, axes[0]] = amp * np.cos(arg)
    return out


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix drawn uniformly over SO(3) (QR with sign fix)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0.0:
        q[:, 0] = -q[:, 0]
    return q


def _unit_columns(rng: np.random.Generator, n: int) -> np.ndarray:
    cols = rng.standard_normal((3, n))
    norms = np.linalg.norm(cols, axis=0)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        cols[:, bad] = rng.standard_normal((3, int(bad.sum())))
        norms = np.linalg.norm(cols, axis=0)
    return cols / norms


def make_scene(gesture: str, num_samples: int, seed: int,
               radio: RadioConfig, layout: Sequence[int] = (3, 3, 3, 3, 3),
               paths_per_antenna: int = 3, noise_sigma: float = 0.05,
               corruptions: Sequence[CorruptionSpec] = (),
               trajectory: np.ndarray | None = None,
               speed: float = _BASE_SPEED,
               direction_mode: str = "uniform",
               static_amp: float = 0.0) -> Scene:
    """Build a scene with per-antenna path groups on distinct delay bins.

    Arrival directions are drawn uniformly on the sphere per antenna by
    default; direction_mode "triad" instead gives each antenna a random
    orthonormal set (at most 3 paths), so every antenna carries the same
    total sensitivity to any motion direction and none is left nearly
    blind to the gesture by an unlucky draw.  Base delays sit on
    delay-bin centers of the given radio so the rendered CSI
    concentrates energy in known bins.  static_amp > 0 adds one
    motionless line-of-sight path of that amplitude per antenna (on its
    own delay bin); a dominant static component keeps the per-frame
    phase profile away from destructive nulls, so sanitization shifts
    the delay profile rigidly instead of smearing moving paths across
    bins.  additive_white corruption is baked into noise_sigma here;
    other models are applied at render time.
    """
    layout = tuple(int(m) for m in layout)
    if paths_per_antenna < 1:
        raise ValidationError("paths_per_antenna must be >= 1")
    if direction_mode not in ("uniform", "triad", "shared"):
        raise ValidationError(f"unknown direction_mode {direction_mode!r}; "
                              "expected 'uniform', 'triad' or 'shared'")
    if direction_mode in ("triad", "shared") and paths_per_antenna > 3:
        raise ValidationError(f"direction_mode {direction_mode!r} supports "
                              "at most 3 paths per antenna")
    if static_amp < 0:
        raise ValidationError("static_amp must be >= 0")
    if trajectory is None:
        trajectory = gen_trajectory(gesture, num_samples, seed, speed=speed)
    else:
        trajectory = np.asarray(trajectory, dtype=np.float64)
        if trajectory.shape != (num_samples, 3):
            raise ValidationError("trajectory must have shape (num_samples, 3)")
    antennas = iter_antennas(layout)
    num_antennas = len(antennas)
    rng = _derive_seed(seed, 23)
    total = num_antennas * paths_per_antenna
    if direction_mode == "triad":
        directions = np.hstack([
            _random_rotation(rng)[:, :paths_per_antenna]
            for _ in range(num_antennas)])
    elif direction_mode == "shared":
        base = _random_rotation(rng)
        directions = np.hstack([
            (_jitter_rotation(rng, _SHARED_JITTER_RAD) @ base)
            [:, :paths_per_antenna] for _ in range(num_antennas)])
    else:
        directions = _unit_columns(rng, total)
    amplitudes = rng.uniform(0.5, 1.5, total)
    n = radio.subcarrier_count
    lo, hi = 2, max(3, n // 2 - 2)
    bins = np.concatenate([
        rng.choice(np.arange(lo, hi), size=paths_per_antenna, replace=False)
        if hi - lo >= paths_per_antenna else
        (lo + np.arange(paths_per_antenna)) % n
        for _ in range(num_antennas)])
    delays = bins / (n * radio.subcarrier_spacing_hz)
    path_antenna = np.repeat(np.arange(num_antennas), paths_per_antenna)
    static_amps = static_bins = None
    if static_amp > 0.0:
        static_rng = _derive_seed(seed, 29)
        static_bins = np.empty(num_antennas, dtype=np.int64)
        for k in range(num_antennas):
            taken = set(bins[k * paths_per_antenna:(k + 1) * paths_per_antenna]
                        .tolist())
            pick = int(static_rng.integers(lo, hi))
            while pick in taken and hi - lo > paths_per_antenna:
                pick = int(static_rng.integers(lo, hi))
            static_bins[k] = pick
        static_amps = np.full(num_antennas, float(static_amp))
    sigma = np.full(num_antennas, float(noise_sigma))
    corruptions = tuple(corruptions)
    valid = set(antennas)
    for spec in corruptions:
        if spec.antenna is None:
            raise ValidationError("floating corruption reached make_scene; "
                                  "pin it to an antenna first (make_trial "
                                  "does this per trial)")
        if spec.antenna not in valid:
            raise ValidationError(f"corrupted antenna {spec.antenna} "
                                  f"not in layout {layout}")
        if spec.model == "additive_white":
            flat = antennas.index(spec.antenna)
            sigma[flat] *= spec.strength
    return Scene(trajectory=trajectory, gesture=gesture, layout=layout,
                 directions=directions, amplitudes=amplitudes,
                 base_delays_s=delays, delay_bins=bins.astype(np.int64),
                 path_antenna=path_antenna, noise_sigma=sigma,
                 corruptions=corruptions, seed=int(seed),
                 static_amp=static_amps, static_bins=static_bins)


def gen_projections(scene: Scene) -> tuple[ProjectionMatrix, np.ndarray, np.ndarray]:
    """Render per-sample radial velocities plus the true factors.

    Returns (projections, velocities, directions) where
    projections.values[s, i] = trajectory[s] . direction[i] + noise with
    the owning antenna's noise level.
    """
    t = scene.trajectory.shape[0]
    rng = _derive_seed(scene.seed, 47)
    clean = scene.trajectory @ scene.directions
    noise = rng.standard_normal(clean.shape) \
        * scene.noise_sigma[scene.path_antenna][None, :]
    antennas = iter_antennas(scene.layout)
    column_map = tuple(
        (antennas[flat][0], antennas[flat][1], int(scene.delay_bins[p]))
        for p, flat in enumerate(scene.path_antenna))
    pm = ProjectionMatrix(values=clean + noise, column_map=column_map,
                          window_times_s=np.arange(t, dtype=np.float64))
    return pm, scene.trajectory.copy(), scene.directions.copy()


def _wander_walk(base: np.ndarray, t: int, step_rad: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Unit-vector random walk: tangential Gaussian steps, renormalized."""
    out = np.empty((t, 3))
    m = base / np.linalg.norm(base)
    for s in range(t):
        out[s] = m
        g = rng.standard_normal(3)
        g -= (g @ m) * m
        m = m + step_rad * g
        m /= np.linalg.norm(m)
    return out


def gen_csi(scene: Scene, radio: RadioConfig,
            inject_ramp: tuple[float, float] | None = None) -> CsiFrameSet:
    """Render raw CSI frames for a scene.

    Each path contributes amplitude * exp(-2j*pi*f_n*tau(s)) per
    subcarrier, where f_n spans the carrier plus centered subcarrier
    offsets and tau(s) shrinks as the motion advances along the arrival
    direction (so approaching motion yields a positive Doppler shift).
    inject_ramp=(slope, intercept) multiplies every frame by
    exp(1j * (slope * n + intercept)).  path_wander corruption replaces
    the affected antenna's fixed arrival directions with slow unit-norm
    random walks before the delays are integrated.
    """
    t = scene.trajectory.shape[0]
    n = radio.subcarrier_count
    span = 1.0 / radio.subcarrier_spacing_hz
    if np.any(scene.base_delays_s < 0) or np.any(scene.base_delays_s >= span):
        raise ValidationError(
            "path delays must lie within the unambiguous range "
            f"[0, {span!r}) for this radio")
    dt = 1.0 / radio.sample_rate_hz
    freqs = radio.carrier_frequency_hz \
        + (np.arange(n) - n / 2.0) * radio.subcarrier_spacing_hz
    rng = _derive_seed(scene.seed, 61)
    antennas = iter_antennas(scene.layout)
    wander = {antennas.index(spec.antenna): 0.01 * spec.strength
              for spec in scene.corruptions if spec.model == "path_wander"}
    wander_rng = _derive_seed(scene.seed, 91) if wander else None
    samples = np.zeros((t, n, len(antennas)), dtype=np.complex128)
    for p in range(scene.directions.shape[1]):
        flat = int(scene.path_antenna[p])
        if flat in wander:
            dirs = _wander_walk(scene.directions[:, p], t, wander[flat],
                                wander_rng)
            radial = np.einsum("tj,tj->t", scene.trajectory, dirs)
        else:
            radial = scene.trajectory @ scene.directions[:, p]
        advance = np.concatenate([[0.0], np.cumsum(radial[:-1]) * dt])
        tau = scene.base_delays_s[p] - advance / radio.propagation_speed_m_per_s
        samples[:, :, flat] += scene.amplitudes[p] \
            * np.exp(-2j * np.pi * freqs[None, :] * tau[:, None])
    if scene.static_amp is not None:
        static_tau = scene.static_bins \
            / (n * radio.subcarrier_spacing_hz)
        samples += (scene.static_amp[None, :]
                    * np.exp(-2j * np.pi * freqs[:, None]
                             * static_tau[None, :]))[None, :, :]
    noise_scale = scene.noise_sigma / np.sqrt(2.0)
    samples += noise_scale[None, None, :] \
        * (rng.standard_normal(samples.shape)
           + 1j * rng.standard_normal(samples.shape))
    for spec in scene.corruptions:
        flat = antennas.index(spec.antenna)
        if spec.model == "phase_spikes":
            prob = min(0.5, 0.02 * spec.strength)
            spiked = rng.random(t) < prob
            jolts = rng.uniform(-np.pi, np.pi, (t, n))
            samples[spiked, :, flat] *= np.exp(1j * jolts[spiked])
        elif spec.model == "oscillator_drift":
            step = 0.05 * spec.strength
            phase_walk = np.cumsum(rng.standard_normal(t)) * step
            slope_walk = np.cumsum(rng.standard_normal(t)) * step / n
            ramp = phase_walk[:, None] + slope_walk[:, None] * np.arange(n)[None, :]
            samples[:, :, flat] *= np.exp(1j * ramp)
    if inject_ramp is not None:
        slope, intercept = float(inject_ramp[0]), float(inject_ramp[1])
        samples *= np.exp(1j * (slope * np.arange(n) + intercept))[None, :, None]
    timestamps = np.arange(t) * dt
    return CsiFrameSet(samples=samples, timestamps=timestamps, radio=radio,
                       layout=scene.layout)


def _pin_corruptions(corruptions: tuple[CorruptionSpec, ...],
                     layout: tuple[int, ...],
                     scene_seed: int) -> tuple[CorruptionSpec, ...]:
    """Pin floating corruption specs to antennas drawn for one trial.

    Each floating spec lands on its own AP (drawn without replacement)
    with a uniform antenna index inside it, so two moving faults never
    gang up on one AP's shared fit.  The draw comes from the trial's
    scene seed, making it reproducible and independent of group
    membership.
    """
    floating = [i for i, s in enumerate(corruptions) if s.antenna is None]
    if not floating:
        return corruptions
    if len(floating) > len(layout):
        raise ValidationError(f"{len(floating)} floating corruptions but "
                              f"only {len(layout)} APs to spread them over")
    rng = _derive_seed(scene_seed, 83)
    aps = rng.choice(len(layout), size=len(floating), replace=False)
    pinned = list(corruptions)
    for i, ap in zip(floating, aps):
        ant = int(rng.integers(layout[int(ap)])) + 1
        pinned[i] = replace(pinned[i], antenna=(int(ap) + 1, ant))
    return tuple(pinned)


def make_trial(radio: RadioConfig, classes: Sequence[str], class_idx: int,
               trial_idx: int, groups: int, seed: int,
               duration_s: float = 5.0,
               layout: Sequence[int] = (3, 3, 3, 3, 3),
               paths_per_antenna: int = 3, noise_sigma: float = 0.05,
               corruptions: Sequence[CorruptionSpec] = (),
               inject_ramp: bool = True,
               speed: float = _BASE_SPEED,
               direction_mode: str = "uniform",
               static_amp: float = 0.0) -> LabeledTrial:
    """One labeled trial; the scene seed derives from (seed, class, trial).

    With inject_ramp the trial also gets a random affine phase ramp for
    the sanitizer to remove.  Subjects cycle through seed groups.
    """
    if groups < 1:
        raise ValidationError("groups must be >= 1")
    num_samples = int(round(duration_s * radio.sample_rate_hz))
    scene_seed = int(np.random.SeedSequence(
        [int(seed), int(class_idx), int(trial_idx)]).generate_state(1)[0])
    corruptions = _pin_corruptions(tuple(corruptions),
                                   tuple(int(m) for m in layout), scene_seed)
    scene = make_scene(classes[class_idx], num_samples, scene_seed, radio,
                       layout=layout, paths_per_antenna=paths_per_antenna,
                       noise_sigma=noise_sigma, corruptions=corruptions,
                       speed=speed, direction_mode=direction_mode,
                       static_amp=static_amp)
    ramp = None
    if inject_ramp:
        ramp_rng = _derive_seed(scene_seed, 77)
        ramp = (float(ramp_rng.uniform(-0.5, 0.5)),
                float(ramp_rng.uniform(-np.pi, np.pi)))
    frames = gen_csi(scene, radio, inject_ramp=ramp)
    return LabeledTrial(frames=frames, label=class_idx,
                        subject=trial_idx % groups)


def make_dataset(radio: RadioConfig, classes: Sequence[str],
                 trials_per_class: int, groups: int, seed: int,
                 duration_s: float = 5.0,
                 layout: Sequence[int] = (3, 3, 3, 3, 3),
                 paths_per_antenna: int = 3, noise_sigma: float = 0.05,
                 corruptions: Sequence[CorruptionSpec] = (),
                 inject_ramp: bool = True,
                 speed: float = _BASE_SPEED,
                 direction_mode: str = "uniform",
                 static_amp: float = 0.0) -> list[LabeledTrial]:
    """Labeled synthetic trials covering classes x trials_per_class."""
    if trials_per_class < 1:
        raise ValidationError("trials_per_class must be >= 1")
    for name in classes:
        if name not in GESTURE_CLASSES:
            raise ValidationError(f"unknown gesture {name!r}")
    return [make_trial(radio, classes, ci, ti, groups, seed,
                       duration_s=duration_s, layout=layout,
                       paths_per_antenna=paths_per_antenna,
                       noise_sigma=noise_sigma, corruptions=corruptions,
                       inject_ramp=inject_ramp, speed=speed,
                       direction_mode=direction_mode,
                       static_amp=static_amp)
            for ci in range(len(classes))
            for ti in range(trials_per_class)]
