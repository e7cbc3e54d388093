"""Velocity projections from CSI.

Each antenna's frames are turned into a delay profile per time sample;
the highest-energy delay bins are tracked through time and their
short-time Doppler spectra yield one signed radial-velocity series per
kept bin.  Stacking those series column-wise gives the projection
matrix consumed by the radiance-field fit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CsiFrameSet, ValidationError


@dataclass(frozen=True)
class DopplerConfig:
    """Short-time spectrum settings.

    window_len / hop are in time samples; bins_per_antenna caps how
    many delay bins are kept per antenna (highest total energy first).
    """

    window_len: int = 64
    hop: int = 16
    bins_per_antenna: int = 8

    def __post_init__(self):
        if self.window_len < 4:
            raise ValidationError("window_len must be >= 4")
        if self.hop < 1:
            raise ValidationError("hop must be >= 1")
        if self.bins_per_antenna < 1:
            raise ValidationError("bins_per_antenna must be >= 1")


@dataclass(frozen=True, eq=False)
class DelayProfile:
    """Per-time delay-domain response of one antenna.

    values[s, i] is the complex response at delay bin i;
    bin_delays_s[i] = i / (N * subcarrier_spacing).
    """

    values: np.ndarray
    bin_delays_s: np.ndarray


@dataclass(frozen=True, eq=False)
class DopplerSpectrum:
    """Two-sided short-time power spectrum of one delay-bin series."""

    power: np.ndarray          # (num_windows, window_len), >= 0
    frequencies_hz: np.ndarray  # ascending, symmetric around 0
    window_starts: np.ndarray   # sample index of each window start


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """Radial-velocity series, one column per kept (ap, antenna, bin).

    values has shape (num_windows, num_columns); column_map holds the
    (ap, antenna, delay_bin) triple for each column in order.
    """

    values: np.ndarray
    column_map: tuple[tuple[int, int, int], ...]
    window_times_s: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        times = np.asarray(self.window_times_s, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError("values must be 2-D (windows x columns)")
        if len(self.column_map) != values.shape[1]:
            raise ValidationError("column_map length must match column count")
        if times.shape != (values.shape[0],):
            raise ValidationError("window_times_s must have one entry per row")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "window_times_s", times)
        object.__setattr__(self, "column_map",
                           tuple((int(q), int(a), int(b))
                                 for q, a, b in self.column_map))

    def ap_ids(self) -> tuple[int, ...]:
        seen: list[int] = []
        for q, _, _ in self.column_map:
            if q not in seen:
                seen.append(q)
        return tuple(seen)

    def antennas(self) -> tuple[tuple[int, int], ...]:
        seen: list[tuple[int, int]] = []
        for q, a, _ in self.column_map:
            if (q, a) not in seen:
                seen.append((q, a))
        return tuple(seen)

    def columns_for_antenna(self, q: int, a: int) -> np.ndarray:
        idx = [i for i, (cq, ca, _) in enumerate(self.column_map)
               if cq == q and ca == a]
        return np.asarray(idx, dtype=np.intp)

    def for_ap(self, q: int) -> "ProjectionMatrix":
        idx = [i for i, (cq, _, _) in enumerate(self.column_map) if cq == q]
        if not idx:
            raise ValidationError(f"no columns for ap {q}")
        return ProjectionMatrix(
            values=self.values[:, idx],
            column_map=tuple(self.column_map[i] for i in idx),
            window_times_s=self.window_times_s)

    def split_by_ap(self) -> list["ProjectionMatrix"]:
        return [self.for_ap(q) for q in self.ap_ids()]


def delay_profile(csi_row: np.ndarray) -> np.ndarray:
    """N-point inverse DFT of one frame's subcarrier response.

    output[i] = (1/N) * sum_n input[n] * exp(+2j*pi*n*i/N), i.e. the
    response at delay i / (N * subcarrier_spacing).
    """
    csi_row = np.asarray(csi_row, dtype=np.complex128)
    if csi_row.ndim != 1 or csi_row.shape[0] < 2:
        raise ValidationError("csi_row must be a complex vector of length >= 2")
    return np.fft.ifft(csi_row)


def delay_profiles(frames: CsiFrameSet, q: int, a: int) -> DelayProfile:
    """Delay profiles over time for one antenna."""
    samples = frames.samples_for(q, a)
    values = np.fft.ifft(samples, axis=1)
    n = frames.num_subcarriers
    bin_delays = np.arange(n) / (n * frames.radio.subcarrier_spacing_hz)
    return DelayProfile(values=values, bin_delays_s=bin_delays)


def doppler_psd(bin_series: np.ndarray, window_len: int, hop: int,
                sample_rate_hz: float) -> DopplerSpectrum:
    """Short-time two-sided power spectrum of a complex bin series.

    Each window is mean-removed (static clutter suppression), Hann
    weighted and transformed; power is scaled so the per-window sum
    equals the windowed segment energy.
    """
    series = np.asarray(bin_series, dtype=np.complex128)
    if series.ndim != 1:
        raise ValidationError("bin_series must be 1-D")
    if window_len < 4 or hop < 1:
        raise ValidationError("window_len must be >= 4 and hop >= 1")
    if series.shape[0] < window_len:
        raise ValidationError(
            f"series of length {series.shape[0]} shorter than one window "
            f"({window_len})")
    num_windows = 1 + (series.shape[0] - window_len) // hop
    starts = np.arange(num_windows) * hop
    idx = starts[:, None] + np.arange(window_len)[None, :]
    segments = series[idx]
    segments = segments - segments.mean(axis=1, keepdims=True)
    tapered = segments * np.hanning(window_len)[None, :]
    spectrum = np.fft.fft(tapered, axis=1)
    power = np.fft.fftshift(np.abs(spectrum) ** 2, axes=1) / window_len
    freqs = np.fft.fftshift(np.fft.fftfreq(window_len, d=1.0 / sample_rate_hz))
    return DopplerSpectrum(power=power, frequencies_hz=freqs,
                           window_starts=starts)


def _peak_frequency(power_row: np.ndarray, freqs: np.ndarray) -> float:
    """Signed peak frequency with 3-point quadratic refinement.

    The refinement fits a parabola to log-power around the argmax; ties
    resolve to the lowest bin and an all-zero spectrum maps to 0 Hz.
    """
    k = int(np.argmax(power_row))
    peak = power_row[k]
    if peak <= 0.0:
        return 0.0
    if 0 < k < power_row.shape[0] - 1:
        left, right = power_row[k - 1], power_row[k + 1]
        if left > 0.0 and right > 0.0:
            y1, y2, y3 = np.log(left), np.log(peak), np.log(right)
            denom = y1 - 2.0 * y2 + y3
            if denom < 0.0:
                delta = 0.5 * (y1 - y3) / denom
                delta = float(np.clip(delta, -0.5, 0.5))
                bin_width = freqs[1] - freqs[0]
                return float(freqs[k] + delta * bin_width)
    return float(freqs[k])


def _top_energy_bins(profile_values: np.ndarray, keep: int) -> np.ndarray:
    energy = np.sum(np.abs(profile_values) ** 2, axis=0)
    keep = min(keep, energy.shape[0])
    # Highest energy first, ties broken toward the lower bin index.
    order = np.lexsort((np.arange(energy.shape[0]), -energy))
    return np.sort(order[:keep])


def radial_velocity_field(frames: CsiFrameSet,
                          cfg: DopplerConfig = DopplerConfig()) -> ProjectionMatrix:
    """Per-window signed radial velocities for every kept delay bin.

    Expects sanitized frames.  For each antenna the bins_per_antenna
    highest-energy delay bins are kept; each bin's short-time spectrum
    peak maps to a velocity through the carrier wavelength.
    """
    t = frames.num_times
    if t < cfg.window_len:
        raise ValidationError(
            f"trial of {t} samples shorter than one window ({cfg.window_len})")
    wavelength = frames.radio.wavelength_m
    columns = []
    column_map = []
    window_starts = None
    for q, a in frames.antennas():
        profile = delay_profiles(frames, q, a)
        kept = _top_energy_bins(profile.values, cfg.bins_per_antenna)
        for b in kept:
            spec = doppler_psd(profile.values[:, b], cfg.window_len, cfg.hop,
                               frames.radio.sample_rate_hz)
            window_starts = spec.window_starts
            peaks = np.array([_peak_frequency(row, spec.frequencies_hz)
                              for row in spec.power])
            columns.append(peaks * wavelength)
            column_map.append((q, a, int(b)))
    times = (frames.timestamps[window_starts]
             + frames.timestamps[window_starts + cfg.window_len - 1]) / 2.0
    return ProjectionMatrix(values=np.column_stack(columns),
                            column_map=tuple(column_map),
                            window_times_s=times)


def write_projection_csv(pm: ProjectionMatrix, path: str | Path) -> None:
    """CSV with one row per window; header names each column's triple."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s"] + [f"q{q}:a{a}:b{b}"
                                      for q, a, b in pm.column_map])
        for i in range(pm.values.shape[0]):
            writer.writerow([repr(float(pm.window_times_s[i]))]
                            + [repr(float(v)) for v in pm.values[i]])


def read_projection_csv(path: str | Path) -> ProjectionMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["time_s"]:
        raise ValidationError("not a projection CSV")
    column_map = []
    for name in rows[0][1:]:
        q, a, b = name.split(":")
        column_map.append((int(q[1:]), int(a[1:]), int(b[1:])))
    data = np.array([[float(v) for v in row] for row in rows[1:]],
                    dtype=np.float64)
    if data.size == 0:
        raise ValidationError("projection CSV has no rows")
    return ProjectionMatrix(values=data[:, 1:], column_map=tuple(column_map),
                            window_times_s=data[:, 0])
