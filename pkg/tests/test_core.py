import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dorfhar.core import (CsiFrameSet, DecodeError, LabeledTrial, RADIO_PRESETS,
                          RadioConfig, ValidationError, iter_antennas,
                          load_arrays, load_dataset, save_arrays, save_dataset)
from dorfhar.synth import make_dataset


def small_radio(n=4):
    return RadioConfig(carrier_frequency_hz=2.4e9,
                       subcarrier_spacing_hz=312.5e3,
                       subcarrier_count=n,
                       sample_rate_hz=100.0)


def small_frames(t=2, n=4, layout=(1,), seed=0):
    rng = np.random.default_rng(seed)
    a = sum(layout)
    samples = rng.standard_normal((t, n, a)) + 1j * rng.standard_normal((t, n, a))
    return CsiFrameSet(samples=samples, timestamps=np.arange(t) * 0.01,
                       radio=small_radio(n), layout=layout)


def read_header(path):
    raw = path.read_bytes()
    (hlen,) = struct.unpack_from("<Q", raw, 0)
    return json.loads(raw[8:8 + hlen]), raw, hlen


def rewrite_header(path, header, raw, hlen):
    body = json.dumps(header, sort_keys=True).encode()
    path.write_bytes(struct.pack("<Q", len(body)) + body + raw[8 + hlen:])


class TestRadioConfig:
    def test_preset_wavelength(self):
        radio = RADIO_PRESETS["2g4-64sub-100hz"]
        assert radio.wavelength_m == pytest.approx(0.125, abs=0.0)
        assert radio.subcarrier_count == 64
        assert radio.sample_rate_hz == 100.0

    @given(fc=st.floats(min_value=1e8, max_value=1e11),
           c=st.floats(min_value=1e8, max_value=3.1e8))
    def test_wavelength_is_speed_over_carrier(self, fc, c):
        radio = RadioConfig(carrier_frequency_hz=fc,
                            subcarrier_spacing_hz=312.5e3,
                            subcarrier_count=8, sample_rate_hz=100.0,
                            propagation_speed_m_per_s=c)
        assert radio.wavelength_m == c / fc

    def test_rejects_bad_fields(self):
        with pytest.raises(ValidationError):
            small_radio(1)
        with pytest.raises(ValidationError):
            RadioConfig(-1.0, 312.5e3, 4, 100.0)
        with pytest.raises(ValidationError):
            RadioConfig(2.4e9, 312.5e3, 4, 0.0)

    def test_dict_round_trip(self):
        radio = small_radio()
        assert RadioConfig.from_dict(radio.to_dict()) == radio


class TestCsiFrameSet:
    def test_shape_and_antenna_addressing(self):
        frames = small_frames(t=3, n=4, layout=(2, 1))
        assert frames.num_times == 3
        assert frames.num_subcarriers == 4
        assert frames.antennas() == ((1, 1), (1, 2), (2, 1))
        assert frames.flat_index(1, 1) == 0
        assert frames.flat_index(2, 1) == 2
        assert np.array_equal(frames.samples_for(2, 1), frames.samples[:, :, 2])

    def test_flat_index_bounds(self):
        frames = small_frames(layout=(2, 1))
        with pytest.raises(ValidationError):
            frames.flat_index(3, 1)
        with pytest.raises(ValidationError):
            frames.flat_index(1, 3)

    def test_arrays_frozen(self):
        frames = small_frames()
        with pytest.raises(ValueError):
            frames.samples[0, 0, 0] = 0.0
        with pytest.raises(ValueError):
            frames.timestamps[0] = -1.0

    def test_invariants_enforced(self):
        good = small_frames(t=2, n=4)
        with pytest.raises(ValidationError):
            CsiFrameSet(samples=good.samples, timestamps=np.array([0.0, 0.0]),
                        radio=good.radio, layout=good.layout)
        with pytest.raises(ValidationError):
            CsiFrameSet(samples=good.samples[:, :3, :], timestamps=good.timestamps,
                        radio=good.radio, layout=good.layout)
        with pytest.raises(ValidationError):
            CsiFrameSet(samples=good.samples, timestamps=good.timestamps,
                        radio=good.radio, layout=(2,))
        with pytest.raises(ValidationError):
            CsiFrameSet(samples=good.samples[0], timestamps=good.timestamps,
                        radio=good.radio, layout=good.layout)
        with pytest.raises(ValidationError):
            CsiFrameSet(samples=good.samples, timestamps=good.timestamps,
                        radio=good.radio, layout=(0, 1))

    def test_label_validation(self):
        frames = small_frames()
        with pytest.raises(ValidationError):
            LabeledTrial(frames=frames, label=-1, subject=0)


class TestDatasetCodec:
    def test_minimal_round_trip(self, tmp_path):
        trial = LabeledTrial(frames=small_frames(t=2, n=4, layout=(1,)),
                             label=0, subject=0)
        path = tmp_path / "one.bin"
        save_dataset([trial], path)
        loaded = load_dataset(path)
        assert len(loaded) == 1
        assert loaded[0].frames.samples.shape == (2, 4, 1)
        assert np.array_equal(loaded[0].frames.samples, trial.frames.samples)
        assert np.array_equal(loaded[0].frames.timestamps,
                              trial.frames.timestamps)
        assert loaded[0].frames.radio == trial.frames.radio

    def test_empty_list_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            save_dataset([], tmp_path / "empty.bin")

    def test_inconsistent_radio_rejected(self, tmp_path):
        t1 = LabeledTrial(frames=small_frames(n=4), label=0, subject=0)
        t2 = LabeledTrial(frames=small_frames(n=8), label=0, subject=0)
        with pytest.raises(ValidationError, match="trial 1"):
            save_dataset([t1, t2], tmp_path / "bad.bin")

    def test_synth_seed7_round_trip_bit_exact(self, tmp_path):
        # Byte-comparison oracle: save -> load -> save must reproduce the
        # file, and every complex sample must round-trip unchanged.
        trials = make_dataset(small_radio(8), ("circle", "left-right",
                                               "up-down", "push-pull"),
                              trials_per_class=5, groups=2, seed=7,
                              duration_s=0.32, layout=(1, 2))
        assert len(trials) == 20
        labels = sorted(tr.label for tr in trials)
        assert labels == sorted([0, 1, 2, 3] * 5)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_dataset(trials, p1)
        loaded = load_dataset(p1)
        save_dataset(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        for orig, back in zip(trials, loaded):
            assert np.array_equal(orig.frames.samples, back.frames.samples)
            assert orig.label == back.label
            assert orig.subject == back.subject

    def test_non_increasing_timestamps_named_by_trial(self, tmp_path):
        trials = [LabeledTrial(frames=small_frames(t=3, seed=s), label=0,
                               subject=0) for s in range(2)]
        path = tmp_path / "ts.bin"
        save_dataset(trials, path)
        header, raw, hlen = read_header(path)
        ts_off = 8 + hlen + header["trials"][1]["offsets"]["timestamps"]
        # overwrite trial 1's second timestamp with its first
        patched = bytearray(raw)
        patched[ts_off + 8:ts_off + 16] = patched[ts_off:ts_off + 8]
        path.write_bytes(bytes(patched))
        with pytest.raises(ValidationError, match="trial 1"):
            load_dataset(path)

    def test_truncated_payload_names_section(self, tmp_path):
        trial = LabeledTrial(frames=small_frames(), label=0, subject=0)
        path = tmp_path / "trunc.bin"
        save_dataset([trial], path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(DecodeError) as err:
            load_dataset(path)
        assert err.value.field == "trials[0].timestamps"
        assert err.value.offset is not None

    def test_file_too_short(self, tmp_path):
        path = tmp_path / "tiny.bin"
        path.write_bytes(b"\x01\x02")
        with pytest.raises(DecodeError) as err:
            load_dataset(path)
        assert err.value.offset == 0

    def test_malformed_json_header(self, tmp_path):
        body = b'{"version": '
        path = tmp_path / "badjson.bin"
        path.write_bytes(struct.pack("<Q", len(body)) + body)
        with pytest.raises(DecodeError) as err:
            load_dataset(path)
        assert err.value.field == "header"
        assert err.value.offset is not None

    def test_unknown_major_version_rejected(self, tmp_path):
        trial = LabeledTrial(frames=small_frames(), label=0, subject=0)
        path = tmp_path / "v2.bin"
        save_dataset([trial], path)
        header, raw, hlen = read_header(path)
        header["version"] = "2.0"
        rewrite_header(path, header, raw, hlen)
        with pytest.raises(DecodeError, match="version") as err:
            load_dataset(path)
        assert err.value.field == "version"

    def test_minor_version_accepted(self, tmp_path):
        trial = LabeledTrial(frames=small_frames(), label=0, subject=0)
        path = tmp_path / "v1_9.bin"
        save_dataset([trial], path)
        header, raw, hlen = read_header(path)
        header["version"] = "1.9"
        rewrite_header(path, header, raw, hlen)
        assert len(load_dataset(path)) == 1

    def test_missing_version_rejected(self, tmp_path):
        trial = LabeledTrial(frames=small_frames(), label=0, subject=0)
        path = tmp_path / "nov.bin"
        save_dataset([trial], path)
        header, raw, hlen = read_header(path)
        del header["version"]
        rewrite_header(path, header, raw, hlen)
        with pytest.raises(DecodeError) as err:
            load_dataset(path)
        assert err.value.field == "version"

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "arrays.bin"
        save_arrays(path, "model", {}, {"x": np.arange(3.0)})
        with pytest.raises(DecodeError) as err:
            load_dataset(path)
        assert err.value.field == "kind"

    @settings(max_examples=25, deadline=None)
    @given(t=st.integers(1, 4), n=st.integers(2, 6),
           layout=st.lists(st.integers(1, 2), min_size=1, max_size=2),
           seed=st.integers(0, 2**31))
    def test_round_trip_identity_property(self, tmp_path_factory, t, n,
                                          layout, seed):
        frames = small_frames(t=t, n=n, layout=tuple(layout), seed=seed)
        trial = LabeledTrial(frames=frames, label=seed % 5, subject=seed % 3)
        path = tmp_path_factory.mktemp("codec") / "rt.bin"
        save_dataset([trial], path)
        back = load_dataset(path)[0]
        assert np.array_equal(back.frames.samples, frames.samples)
        assert np.array_equal(back.frames.timestamps, frames.timestamps)
        assert back.frames.layout == frames.layout
        assert back.frames.radio == frames.radio
        assert (back.label, back.subject) == (trial.label, trial.subject)


class TestArrayContainer:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "arrs.bin"
        arrays = {"weights": np.linspace(0, 1, 7).reshape(1, 7),
                  "steps": np.arange(4, dtype=np.int64)}
        save_arrays(path, "checkpoint", {"note": "x"}, arrays)
        meta, back = load_arrays(path, "checkpoint")
        assert meta == {"note": "x"}
        assert np.array_equal(back["weights"], arrays["weights"])
        assert back["weights"].dtype == np.float64
        assert np.array_equal(back["steps"], arrays["steps"])

    def test_payload_kind_mismatch(self, tmp_path):
        path = tmp_path / "arrs.bin"
        save_arrays(path, "checkpoint", {}, {"x": np.zeros(2)})
        with pytest.raises(DecodeError) as err:
            load_arrays(path, "other")
        assert err.value.field == "payload_kind"


def test_iter_antennas_order():
    assert iter_antennas((2, 1)) == ((1, 1), (1, 2), (2, 1))
    assert iter_antennas(()) == ()
