"""Shared domain types and the binary dataset container.

Everything downstream consumes the types defined here: the radio
parameters, dense CSI frame sets indexed by (time, subcarrier, antenna,
access point), and labeled trials.  Antennas are always addressed as
1-based (ap, antenna) pairs at module boundaries; flat column indices
are an internal detail.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = "1.0"

# Conventional RF propagation speed; keeps derived wavelengths on round
# numbers (2.4 GHz -> 0.125 m).
PROPAGATION_SPEED = 3.0e8

_HEADER_PREFIX = struct.Struct("<Q")


class ValidationError(ValueError):
    """A value violates a documented precondition or invariant."""


class DecodeError(ValueError):
    """A serialized container cannot be decoded.

    Carries the byte offset of the failure and the header field or
    payload section involved, when known.
    """

    def __init__(self, message: str, *, offset: int | None = None,
                 field: str | None = None):
        detail = message
        if field is not None:
            detail += f" (field: {field})"
        if offset is not None:
            detail += f" (byte offset: {offset})"
        super().__init__(detail)
        self.offset = offset
        self.field = field


class DivergenceError(RuntimeError):
    """An iterative fit produced a non-finite loss."""


@dataclass(frozen=True)
class RadioConfig:
    """Static radio parameters of a capture or synthesis run."""

    carrier_frequency_hz: float
    subcarrier_spacing_hz: float
    subcarrier_count: int
    sample_rate_hz: float
    propagation_speed_m_per_s: float = PROPAGATION_SPEED

    def __post_init__(self):
        if self.carrier_frequency_hz <= 0:
            raise ValidationError("carrier_frequency_hz must be positive")
        if self.subcarrier_spacing_hz <= 0:
            raise ValidationError("subcarrier_spacing_hz must be positive")
        if int(self.subcarrier_count) != self.subcarrier_count or self.subcarrier_count < 2:
            raise ValidationError("subcarrier_count must be an integer >= 2")
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample_rate_hz must be positive")
        if self.propagation_speed_m_per_s <= 0:
            raise ValidationError("propagation_speed_m_per_s must be positive")

    @property
    def wavelength_m(self) -> float:
        return self.propagation_speed_m_per_s / self.carrier_frequency_hz

    def to_dict(self) -> dict:
        return {
            "carrier_frequency_hz": self.carrier_frequency_hz,
            "subcarrier_spacing_hz": self.subcarrier_spacing_hz,
            "subcarrier_count": int(self.subcarrier_count),
            "sample_rate_hz": self.sample_rate_hz,
            "propagation_speed_m_per_s": self.propagation_speed_m_per_s,
        }

    @staticmethod
    def from_dict(d: dict) -> "RadioConfig":
        try:
            return RadioConfig(
                carrier_frequency_hz=float(d["carrier_frequency_hz"]),
                subcarrier_spacing_hz=float(d["subcarrier_spacing_hz"]),
                subcarrier_count=int(d["subcarrier_count"]),
                sample_rate_hz=float(d["sample_rate_hz"]),
                propagation_speed_m_per_s=float(
                    d.get("propagation_speed_m_per_s", PROPAGATION_SPEED)),
            )
        except KeyError as exc:
            raise DecodeError("missing radio parameter", field=str(exc)) from exc


# Testbed preset: 2.4 GHz carrier, 64 subcarriers at the standard
# 20 MHz / 64 spacing, 100 Hz frame rate, five 3-antenna access points,
# 5 second trials.
RADIO_PRESETS: dict[str, RadioConfig] = {
    "2g4-64sub-100hz": RadioConfig(
        carrier_frequency_hz=2.4e9,
        subcarrier_spacing_hz=312.5e3,
        subcarrier_count=64,
        sample_rate_hz=100.0,
    ),
}
DEFAULT_LAYOUT: tuple[int, ...] = (3, 3, 3, 3, 3)
DEFAULT_TRIAL_SECONDS = 5.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CsiFrameSet:
    """Dense complex CSI samples for one trial.

    samples has shape (T, N, A) where A = sum(layout) and antenna
    columns are grouped by access point in layout order.  Use
    ``samples_for(q, a)`` with 1-based identifiers rather than flat
    indices.
    """

    samples: np.ndarray
    timestamps: np.ndarray
    radio: RadioConfig
    layout: tuple[int, ...]

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        timestamps = np.asarray(self.timestamps, dtype=np.float64)
        layout = tuple(int(m) for m in self.layout)
        if not layout or any(m < 1 for m in layout):
            raise ValidationError("layout must list >= 1 antenna per access point")
        if samples.ndim != 3:
            raise ValidationError("samples must have shape (T, N, A)")
        t, n, a = samples.shape
        if t < 1:
            raise ValidationError("at least one time sample required")
        if n != self.radio.subcarrier_count:
            raise ValidationError(
                f"samples have {n} subcarriers, radio declares "
                f"{self.radio.subcarrier_count}")
        if a != sum(layout):
            raise ValidationError(
                f"samples have {a} antenna columns, layout sums to {sum(layout)}")
        if timestamps.shape != (t,):
            raise ValidationError("timestamps must have shape (T,)")
        if t > 1 and not np.all(np.diff(timestamps) > 0):
            raise ValidationError("timestamps must be strictly increasing")
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "timestamps", _frozen(timestamps))
        object.__setattr__(self, "layout", layout)

    @property
    def num_times(self) -> int:
        return self.samples.shape[0]

    @property
    def num_subcarriers(self) -> int:
        return self.samples.shape[1]

    def antennas(self) -> tuple[tuple[int, int], ...]:
        """All (ap, antenna) pairs, 1-based, in storage order."""
        out = []
        for q, m in enumerate(self.layout, start=1):
            out.extend((q, a) for a in range(1, m + 1))
        return tuple(out)

    def flat_index(self, q: int, a: int) -> int:
        if not (1 <= q <= len(self.layout)):
            raise ValidationError(f"ap index {q} out of range")
        if not (1 <= a <= self.layout[q - 1]):
            raise ValidationError(f"antenna index {a} out of range for ap {q}")
        return sum(self.layout[: q - 1]) + (a - 1)

    def samples_for(self, q: int, a: int) -> np.ndarray:
        """(T, N) complex view of one antenna's samples."""
        return self.samples[:, :, self.flat_index(q, a)]


@dataclass(frozen=True, eq=False)
class LabeledTrial:
    """One trial: frames plus an activity label and a subject/group id."""

    frames: CsiFrameSet
    label: int
    subject: int

    def __post_init__(self):
        if int(self.label) != self.label or self.label < 0:
            raise ValidationError("label must be a non-negative integer")
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "subject", int(self.subject))


def _split_version(version: str) -> tuple[int, int]:
    parts = str(version).split(".")
    try:
        return int(parts[0]), int(parts[1]) if len(parts) > 1 else 0
    except (ValueError, IndexError) as exc:
        raise DecodeError(f"unparseable version {version!r}", field="version") from exc


def _write_container(path: str | Path, header: dict, payload: bytes) -> None:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER_PREFIX.pack(len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def _read_container(path: str | Path, expect_kind: str) -> tuple[dict, bytes, int]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_PREFIX.size:
        raise DecodeError("file too short for header length prefix",
                          offset=0, field="header_length")
    (header_len,) = _HEADER_PREFIX.unpack_from(raw, 0)
    base = _HEADER_PREFIX.size
    if len(raw) < base + header_len:
        raise DecodeError("file truncated inside JSON header",
                          offset=len(raw), field="header")
    try:
        header = json.loads(raw[base:base + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        offset = base + getattr(exc, "pos", 0)
        raise DecodeError("malformed JSON header", offset=offset,
                          field="header") from exc
    if "version" not in header:
        raise DecodeError("header missing version", offset=base, field="version")
    major, _ = _split_version(header["version"])
    if major != _split_version(FORMAT_VERSION)[0]:
        raise DecodeError(
            f"unsupported major version {header['version']!r}",
            offset=base, field="version")
    if header.get("kind") != expect_kind:
        raise DecodeError(
            f"expected kind {expect_kind!r}, found {header.get('kind')!r}",
            offset=base, field="kind")
    payload_start = base + header_len
    return header, raw[payload_start:], payload_start


def _take(payload: bytes, payload_start: int, offset: int, nbytes: int,
          dtype: str, shape: tuple[int, ...], name: str) -> np.ndarray:
    end = offset + nbytes
    if end > len(payload) or offset < 0:
        raise DecodeError("payload truncated", offset=payload_start + len(payload),
                          field=name)
    arr = np.frombuffer(payload, dtype=np.dtype(dtype), count=int(np.prod(shape)) if shape else 1,
                        offset=offset)
    return arr.reshape(shape).copy()


def save_dataset(trials: Sequence[LabeledTrial], path: str | Path) -> None:
    """Write labeled trials to a single self-describing file.

    Layout: 8-byte little-endian header length, UTF-8 JSON header, then
    a binary payload.  Complex samples are stored per trial as float64
    little-endian (real, imag) pairs, time-major, subcarrier next,
    antenna columns (grouped by access point) fastest.
    """
    trials = list(trials)
    if not trials:
        raise ValidationError("cannot save an empty trial list")
    radio = trials[0].frames.radio
    layout = trials[0].frames.layout
    for i, tr in enumerate(trials):
        if tr.frames.radio != radio:
            raise ValidationError(f"trial {i}: radio config differs from trial 0")
        if tr.frames.layout != layout:
            raise ValidationError(f"trial {i}: antenna layout differs from trial 0")

    chunks: list[bytes] = []
    offset = 0
    trial_meta = []
    for tr in trials:
        samples_bytes = np.ascontiguousarray(
            tr.frames.samples, dtype="<c16").tobytes()
        times_bytes = np.ascontiguousarray(
            tr.frames.timestamps, dtype="<f8").tobytes()
        trial_meta.append({
            "label": tr.label,
            "subject": tr.subject,
            "T": tr.frames.num_times,
            "offsets": {"samples": offset,
                        "timestamps": offset + len(samples_bytes)},
        })
        chunks.append(samples_bytes)
        chunks.append(times_bytes)
        offset += len(samples_bytes) + len(times_bytes)

    header = {
        "version": FORMAT_VERSION,
        "kind": "dataset",
        "radio": radio.to_dict(),
        "layout": list(layout),
        "trials": trial_meta,
    }
    _write_container(path, header, b"".join(chunks))


def load_dataset(path: str | Path) -> list[LabeledTrial]:
    """Read back trials written by save_dataset, bit-exactly."""
    header, payload, payload_start = _read_container(path, "dataset")
    for key in ("radio", "layout", "trials"):
        if key not in header:
            raise DecodeError(f"header missing {key}", offset=payload_start,
                              field=key)
    radio = RadioConfig.from_dict(header["radio"])
    layout = tuple(int(m) for m in header["layout"])
    n = radio.subcarrier_count
    a_total = sum(layout)
    trials = []
    for i, meta in enumerate(header["trials"]):
        try:
            t = int(meta["T"])
            offs = meta["offsets"]
            samples = _take(payload, payload_start, int(offs["samples"]),
                            t * n * a_total * 16, "<c16", (t, n, a_total),
                            f"trials[{i}].samples")
            times = _take(payload, payload_start, int(offs["timestamps"]),
                          t * 8, "<f8", (t,), f"trials[{i}].timestamps")
            label = meta["label"]
            subject = meta["subject"]
        except KeyError as exc:
            raise DecodeError(f"trial {i} missing key", offset=payload_start,
                              field=f"trials[{i}].{exc.args[0]}") from exc
        try:
            frames = CsiFrameSet(samples=samples, timestamps=times,
                                 radio=radio, layout=layout)
            trials.append(LabeledTrial(frames=frames, label=label,
                                       subject=subject))
        except ValidationError as exc:
            raise ValidationError(f"trial {i}: {exc}") from exc
    return trials


def save_arrays(path: str | Path, kind: str, meta: dict,
                arrays: dict[str, np.ndarray]) -> None:
    """Generic named-array container used for model checkpoints."""
    chunks = []
    offset = 0
    index = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        data = arr.astype(dt, copy=False).tobytes()
        index[name] = {"dtype": dt.str, "shape": list(arr.shape),
                       "offset": offset}
        chunks.append(data)
        offset += len(data)
    header = {"version": FORMAT_VERSION, "kind": "arrays",
              "payload_kind": kind, "meta": meta, "arrays": index}
    _write_container(path, header, b"".join(chunks))


def load_arrays(path: str | Path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    header, payload, payload_start = _read_container(path, "arrays")
    if header.get("payload_kind") != kind:
        raise DecodeError(
            f"expected payload kind {kind!r}, found {header.get('payload_kind')!r}",
            offset=payload_start, field="payload_kind")
    out = {}
    for name, info in header.get("arrays", {}).items():
        dtype = np.dtype(info["dtype"])
        shape = tuple(int(s) for s in info["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        out[name] = _take(payload, payload_start, int(info["offset"]),
                          nbytes, info["dtype"], shape, f"arrays.{name}")
    return header.get("meta", {}), out


def iter_antennas(layout: Iterable[int]) -> tuple[tuple[int, int], ...]:
    """(ap, antenna) pairs for a layout, 1-based, deterministic order."""
    out = []
    for q, m in enumerate(layout, start=1):
        out.extend((q, a) for a in range(1, int(m) + 1))
    return tuple(out)
