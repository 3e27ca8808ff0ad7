import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairaudit.audio import (
    MASK_FILL,
    AudioClip,
    OversamplePlan,
    OversampleTarget,
    Spectrogram,
    apply_freq_mask,
    apply_time_mask,
    circular_shift,
    compile_plan,
    frame_count,
    freq_mask,
    load_plan,
    load_spectrogram,
    log_mel,
    low_pass,
    mel_from_hz,
    read_wav,
    save_spectrogram,
    time_mask,
    time_shift,
    write_wav,
)
from fairaudit.errors import DataError, SchemaError
from fairaudit.records import Label

from conftest import make_record


def sine_clip(freq_hz, duration_s=1.0, sample_rate=16000, amp=0.5, subject_id="t"):
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    return AudioClip(samples=amp * np.sin(2 * np.pi * freq_hz * t),
                     sample_rate=sample_rate, subject_id=subject_id)


def rms(x):
    return float(np.sqrt(np.mean(np.asarray(x) ** 2)))


class TestAudioClip:
    def test_truncated_to_thirty_seconds(self, caplog):
        with caplog.at_level("WARNING"):
            clip = AudioClip(samples=np.zeros(16000 * 35), sample_rate=16000)
        assert clip.samples.size == 16000 * 30
        assert any("truncating" in r.message for r in caplog.records)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            AudioClip(samples=np.array([]), sample_rate=16000)

    def test_wav_round_trip(self, tmp_path):
        clip = sine_clip(440, duration_s=0.25)
        path = tmp_path / "t.wav"
        write_wav(path, clip)
        loaded = read_wav(path)
        assert loaded.sample_rate == 16000
        np.testing.assert_allclose(loaded.samples, clip.samples, atol=1e-4)

    def test_unsupported_rate_rejected(self, tmp_path):
        import wave
        path = tmp_path / "bad.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(8000)
            wf.writeframes(b"\x00\x00" * 100)
        with pytest.raises(SchemaError, match="sample rate"):
            read_wav(path)


class TestLowPass:
    def test_passband_tone_preserved(self):
        clip = sine_clip(1000, sample_rate=44100)
        out = low_pass(clip, 8000.0)
        assert abs(rms(out.samples) / rms(clip.samples) - 1.0) < 0.01
        assert out.samples.size == clip.samples.size

    def test_stopband_tone_crushed(self):
        clip = sine_clip(15000, sample_rate=44100)
        out = low_pass(clip, 8000.0)
        assert rms(out.samples) / rms(clip.samples) < 0.01

    def test_dc_unchanged(self):
        clip = AudioClip(samples=np.full(5000, 0.25), sample_rate=16000)
        out = low_pass(clip, 7000.0)
        np.testing.assert_allclose(out.samples, clip.samples, atol=1e-6)

    def test_default_cutoff_respects_nyquist(self):
        clip = sine_clip(1000, sample_rate=16000)
        out = low_pass(clip)  # min(8000, 0.45*16000) = 7200 < Nyquist
        assert out.samples.size == clip.samples.size

    def test_cutoff_at_nyquist_rejected(self):
        clip = sine_clip(1000, sample_rate=16000)
        with pytest.raises(DataError):
            low_pass(clip, 8000.0)


class TestLogMel:
    def test_frame_count_formula(self):
        clip = AudioClip(samples=np.zeros(16000), sample_rate=16000)
        spec = log_mel(clip)
        assert spec.frames == 1 + (16000 - 2048) // 512 == 28
        assert spec.values.shape == (128, 28)

    def test_silence_is_constant_log_floor(self):
        clip = AudioClip(samples=np.zeros(4096), sample_rate=16000)
        spec = log_mel(clip)
        np.testing.assert_allclose(spec.values, math.log(1e-10))

    def test_tone_peaks_at_analytic_mel_bin(self):
        clip = sine_clip(1000, duration_s=1.0, sample_rate=16000)
        spec = log_mel(clip)
        # invert the mel scale: filter i peaks at mel position (i+1)/(129) of
        # the full range, so the bin containing 1 kHz is the nearest peak
        mel_max = mel_from_hz(8000.0)
        expected = int(round(float(mel_from_hz(1000.0)) / (mel_max / 129.0))) - 1
        for frame in range(spec.frames):
            assert abs(int(np.argmax(spec.values[:, frame])) - expected) <= 0

    def test_too_short_clip_rejected(self):
        clip = AudioClip(samples=np.zeros(2047), sample_rate=16000)
        with pytest.raises(DataError):
            log_mel(clip)

    @given(st.integers(min_value=2048, max_value=480000))
    @settings(max_examples=30, deadline=None)
    def test_frame_count_closed_form(self, n):
        assert frame_count(n) == 1 + (n - 2048) // 512

    def test_serialization_round_trip(self, tmp_path):
        clip = sine_clip(500, duration_s=0.5)
        spec = log_mel(clip)
        save_spectrogram(spec, tmp_path / "spec")
        loaded = load_spectrogram(tmp_path / "spec")
        assert loaded.values.shape == spec.values.shape
        np.testing.assert_allclose(loaded.values, spec.values, atol=1e-5)
        meta = json.loads((tmp_path / "spec.json").read_text())
        assert meta["channels"] == 128 and meta["fft_window"] == 2048


class TestTimeShift:
    def test_forced_rotation(self):
        clip = AudioClip(samples=np.array([1.0, 2.0, 3.0, 4.0]), sample_rate=16000)
        out = circular_shift(clip, 1)
        np.testing.assert_allclose(out.samples, [4.0, 1.0, 2.0, 3.0])

    def test_multiset_preserved(self, rng):
        clip = sine_clip(300, duration_s=3.0)
        out = time_shift(clip, rng)
        np.testing.assert_allclose(np.sort(out.samples), np.sort(clip.samples))

    def test_offset_range_over_seeded_draws(self):
        clip = sine_clip(200, duration_s=10.0)
        n = clip.samples.size
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            out = time_shift(clip, rng)
            # recover the offset by locating the rotation point
            matches = np.flatnonzero(np.isclose(out.samples, clip.samples[0], atol=1e-12))
            offsets = {(m % n) for m in matches}
            # at least one candidate must be inside [1 s, 5 s] in either direction
            valid = {o for o in offsets
                     if clip.sample_rate <= o <= n // 2
                     or clip.sample_rate <= (n - o) % n <= n // 2}
            assert valid, f"seed {seed}: no admissible rotation offset found"

    def test_short_clip_returned_unshifted(self, caplog, rng):
        clip = sine_clip(300, duration_s=1.0)
        with caplog.at_level("WARNING"):
            out = time_shift(clip, rng)
        np.testing.assert_array_equal(out.samples, clip.samples)

    def test_inverse_rotation_restores(self, rng):
        clip = sine_clip(250, duration_s=2.5)
        shifted = circular_shift(clip, 12345)
        restored = circular_shift(shifted, -12345)
        np.testing.assert_array_equal(restored.samples, clip.samples)


def small_spec(frames=100, fill=0.0):
    return Spectrogram(values=np.full((128, frames), fill), sample_rate=16000)


class TestMasks:
    def test_freq_mask_exact_block(self):
        spec = small_spec(frames=50, fill=1.0)
        out = apply_freq_mask(spec, start=10, width=5)
        changed = out.values != spec.values
        assert changed.sum() == 5 * 50
        assert np.all(out.values[10:15, :] == MASK_FILL)
        assert np.all(out.values[:10, :] == 1.0) and np.all(out.values[15:, :] == 1.0)

    def test_time_mask_exact_block(self):
        spec = small_spec(frames=40, fill=2.0)
        out = apply_time_mask(spec, start=0, width=3)
        assert np.all(out.values[:, :3] == MASK_FILL)
        assert (out.values != spec.values).sum() == 3 * 128

    def test_freq_mask_draw_ranges(self):
        spec = small_spec(frames=70, fill=1.0)
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            out = freq_mask(spec, rng)
            rows = np.flatnonzero((out.values == MASK_FILL).all(axis=1))
            width = rows.size
            assert 1 <= width <= 60
            assert rows[-1] - rows[0] + 1 == width  # contiguous
            assert rows[0] + width <= 128

    def test_time_mask_draw_ranges_and_short_clip_clamp(self):
        spec = small_spec(frames=28, fill=1.0)
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            out = time_mask(spec, rng)
            cols = np.flatnonzero((out.values == MASK_FILL).all(axis=0))
            assert 1 <= cols.size <= 27
            assert cols[0] + cols.size <= 28

    def test_disjoint_masks_compose(self):
        spec = small_spec(frames=30, fill=1.0)
        out = apply_freq_mask(apply_freq_mask(spec, 0, 4), 20, 6)
        rows = np.flatnonzero((out.values == MASK_FILL).all(axis=1))
        assert set(rows.tolist()) == set(range(0, 4)) | set(range(20, 26))

    def test_original_untouched(self):
        spec = small_spec(frames=30, fill=1.0)
        apply_freq_mask(spec, 0, 10)
        assert np.all(spec.values == 1.0)

    def test_single_frame_spectrogram_rejected(self, rng):
        with pytest.raises(DataError):
            time_mask(small_spec(frames=1), rng)


class TestCompilePlan:
    def records(self):
        recs = []
        for i in range(5):
            recs.append(make_record(f"old{i}", label="mci", age=85))
        recs.append(make_record("young0", label="control", age=50))
        return recs

    def test_round_robin_expansion(self):
        plan = OversamplePlan(targets=[OversampleTarget(
            predicate={"age_group": "a80_plus"}, label=Label.MCI, copies=2,
            operators=("time_shift",))], seed=9)
        instances = compile_plan(self.records(), plan)
        assert len(instances) == 10
        counts = {}
        for inst in instances:
            counts[inst.source_id] = counts.get(inst.source_id, 0) + 1
        assert all(v == 2 for v in counts.values())

    def test_single_copy_single_source(self):
        plan = OversamplePlan(targets=[OversampleTarget(
            predicate={"age_group": "a46_65"}, label=None, copies=1,
            operators=("freq_mask",))], seed=0)
        instances = compile_plan(self.records(), plan)
        assert len(instances) == 1
        assert instances[0].source_id == "young0"

    def test_empty_cross_predicate_names_it(self):
        plan = OversamplePlan(targets=[OversampleTarget(
            predicate={"gender": "female", "language": "spanish"}, label=None,
            copies=1, operators=("time_shift",))], seed=0)
        with pytest.raises(DataError, match="gender=female & language=spanish"):
            compile_plan(self.records(), plan)

    def test_unknown_attribute_rejected(self):
        plan = OversamplePlan(targets=[OversampleTarget(
            predicate={"height": "tall"}, label=None, copies=1,
            operators=("time_shift",))], seed=0)
        with pytest.raises(DataError):
            compile_plan(self.records(), plan)

    def test_deterministic_expansion(self):
        plan = OversamplePlan(targets=[OversampleTarget(
            predicate={"age_group": "a80_plus"}, label=Label.MCI, copies=3,
            operators=("time_shift", "freq_mask"))], seed=21)
        a = compile_plan(self.records(), plan)
        b = compile_plan(self.records(), plan)
        assert a == b
        ops = [i.operator for i in a]
        assert ops[:4] == ["time_shift", "freq_mask", "time_shift", "freq_mask"]

    def test_plan_file_round_trip(self, tmp_path):
        obj = {"seed": 4, "targets": [{"predicate": {"age_group": "a80_plus"},
                                       "label": "mci", "copies": 2,
                                       "operators": ["time_mask"]}]}
        path = tmp_path / "plan.json"
        path.write_text(json.dumps(obj))
        plan = load_plan(path)
        assert plan.seed == 4
        assert plan.targets[0].label is Label.MCI
