"""CSI phase sanitization.

Commodity receivers add an affine-in-subcarrier phase error (timing and
sampling-frequency offsets) on top of the true channel phase.  Each
frame is cleaned independently: unwrap the phase across subcarriers,
fit a straight line to it by least squares, and keep only the residual.
Magnitudes pass through untouched.
"""

from __future__ import annotations

import numpy as np

from .core import CsiFrameSet, ValidationError

_TWO_PI = 2.0 * np.pi


def unwrap_phase(wrapped: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unwrap phase so successive differences fall in (-pi, pi].

    The first element along ``axis`` is preserved and the output equals
    the input modulo 2*pi elementwise.
    """
    wrapped = np.asarray(wrapped, dtype=np.float64)
    if wrapped.shape[axis] < 1:
        raise ValidationError("cannot unwrap an empty vector")
    if not np.all(np.isfinite(wrapped)):
        raise ValidationError("phase values must be finite")
    d = np.diff(wrapped, axis=axis)
    # Map each difference into (-pi, pi]; the correction is an exact
    # multiple of 2*pi, so values are preserved modulo 2*pi.
    adjusted = d - _TWO_PI * np.ceil((d - np.pi) / _TWO_PI)
    first = np.take(wrapped, [0], axis=axis)
    return np.concatenate([first, first + np.cumsum(adjusted, axis=axis)],
                          axis=axis)


def _detrended_phase(phase: np.ndarray) -> np.ndarray:
    # Least-squares affine fit along the subcarrier axis (axis 1),
    # vectorized over any leading/trailing axes of shape (T, N, ...).
    n = phase.shape[1]
    idx = np.arange(n, dtype=np.float64)
    centered = idx - idx.mean()
    denom = np.dot(centered, centered)
    shaped = centered.reshape((1, n) + (1,) * (phase.ndim - 2))
    slope = np.sum(shaped * phase, axis=1, keepdims=True) / denom
    intercept = phase.mean(axis=1, keepdims=True) - slope * idx.mean()
    return phase - (slope * idx.reshape(shaped.shape) + intercept)


def sanitize_frame(frame: np.ndarray) -> np.ndarray:
    """Remove the affine phase trend from one CSI frame.

    Args:
        frame: complex vector over subcarriers, length >= 2.

    Returns:
        Complex vector with identical magnitudes and zero-mean,
        detrended phase.
    """
    frame = np.asarray(frame, dtype=np.complex128)
    if frame.ndim != 1 or frame.shape[0] < 2:
        raise ValidationError("frame must be a complex vector of length >= 2")
    if not np.all(np.isfinite(frame)):
        raise ValidationError("frame values must be finite")
    phase = unwrap_phase(np.angle(frame))
    residual = _detrended_phase(phase[np.newaxis, :])[0]
    return np.abs(frame) * np.exp(1j * residual)


def sanitize_frames(frames: CsiFrameSet) -> CsiFrameSet:
    """Sanitize every (time, antenna, ap) frame of a trial.

    Frames are treated independently; the fitted affine error may
    differ per frame.
    """
    phase = unwrap_phase(np.angle(frames.samples), axis=1)
    residual = _detrended_phase(phase)
    cleaned = np.abs(frames.samples) * np.exp(1j * residual)
    return CsiFrameSet(samples=cleaned, timestamps=frames.timestamps,
                       radio=frames.radio, layout=frames.layout)
