"""Audio front end and oversampling operators.

Covers the low-pass cleanup filter, log-mel spectrogram extraction, and
the three spectrogram-level augmentation operators (circular time shift,
frequency masking, time masking), plus the subgroup-targeted oversampling
planner. Neural voice conversion and TTS synthesis are outside this
toolkit; the planner emits the work list they would consume.

Masked cells are set to the spectrogram's silence value log(1e-10) rather
than zero, so a masked band reads as silence, not as unit energy.
"""

from __future__ import annotations

import json
import logging
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, SchemaError
from .records import Label, PROTECTED_ATTRIBUTES, SubjectRecord

log = logging.getLogger(__name__)

MAX_DURATION_S = 30.0
FFT_WINDOW = 2048
HOP = 512
N_MELS = 128
LOG_FLOOR = 1e-10
MASK_FILL = float(np.log(LOG_FLOOR))
SUPPORTED_RATES = (16000, 44100)


@dataclass
class AudioClip:
    """Mono audio samples in [-1, 1]; clips longer than 30 s are truncated."""

    samples: np.ndarray
    sample_rate: int
    subject_id: str = ""

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("audio clip must be a nonempty 1-D sample array")
        max_len = int(MAX_DURATION_S * self.sample_rate)
        if self.samples.size > max_len:
            log.warning("clip %r exceeds 30 s (%d samples); truncating",
                        self.subject_id, self.samples.size)
            self.samples = self.samples[:max_len]

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Spectrogram:
    """128-channel log-mel matrix, rows = mel channels, columns = frames."""

    values: np.ndarray
    sample_rate: int
    fft_window: int = FFT_WINDOW
    hop: int = HOP

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != N_MELS:
            raise DataError(f"spectrogram must have {N_MELS} channel rows, got shape {self.values.shape}")

    @property
    def frames(self) -> int:
        return self.values.shape[1]


def read_wav(path: str | Path, subject_id: str = "") -> AudioClip:
    """Read a mono 16-bit PCM WAV at 16000 or 44100 Hz."""
    path = Path(path)
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise SchemaError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise SchemaError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        rate = wf.getframerate()
        if rate not in SUPPORTED_RATES:
            raise SchemaError(f"{path}: unsupported sample rate {rate} (expected {SUPPORTED_RATES})")
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return AudioClip(samples=samples, sample_rate=rate, subject_id=subject_id or path.stem)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    ints = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(ints.tobytes())


def save_spectrogram(spec: Spectrogram, base_path: str | Path) -> tuple[Path, Path]:
    """Write the matrix as little-endian float32 plus a JSON sidecar."""
    base = Path(base_path)
    data_path = base.with_suffix(".f32")
    meta_path = base.with_suffix(".json")
    data_path.write_bytes(spec.values.astype("<f4").tobytes(order="C"))
    meta = {"channels": int(spec.values.shape[0]), "frames": int(spec.frames),
            "fft_window": spec.fft_window, "hop": spec.hop, "sample_rate": spec.sample_rate}
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return data_path, meta_path


def load_spectrogram(base_path: str | Path) -> Spectrogram:
    base = Path(base_path)
    meta = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    raw = np.frombuffer(base.with_suffix(".f32").read_bytes(), dtype="<f4")
    values = raw.reshape(meta["channels"], meta["frames"]).astype(float)
    return Spectrogram(values=values, sample_rate=meta["sample_rate"],
                       fft_window=meta["fft_window"], hop=meta["hop"])


# ---------------------------------------------------------------------------
# Filtering and spectrogram extraction

LOWPASS_TAPS = 128  # FIR order 127


def _lowpass_kernel(cutoff_hz: float, sample_rate: int) -> np.ndarray:
    m = np.arange(LOWPASS_TAPS) - (LOWPASS_TAPS - 1) / 2.0
    ratio = 2.0 * cutoff_hz / sample_rate
    h = ratio * np.sinc(ratio * m) * np.hamming(LOWPASS_TAPS)
    return h / h.sum()


def low_pass(clip: AudioClip, cutoff_hz: Optional[float] = None) -> AudioClip:
    """Zero-phase windowed-sinc low-pass filter (order 127, Hamming window).

    Applied forward and backward with reflect padding, so the output has
    the input's length, no phase shift, and the squared magnitude response.
    Default cutoff is min(8000, 0.45 * sample_rate).
    """
    if cutoff_hz is None:
        cutoff_hz = min(8000.0, 0.45 * clip.sample_rate)
    nyquist = clip.sample_rate / 2.0
    if not 0.0 < cutoff_hz < nyquist:
        raise DataError(f"cutoff {cutoff_hz} Hz outside (0, Nyquist={nyquist})")
    h = _lowpass_kernel(cutoff_hz, clip.sample_rate)
    x = clip.samples
    pad = min(3 * LOWPASS_TAPS, x.size - 1)
    xp = np.pad(x, pad, mode="reflect") if pad > 0 else x
    y = np.convolve(xp, h)[: xp.size]
    z = np.convolve(y[::-1], h)[: y.size][::-1]
    out = z[pad: pad + x.size]
    return AudioClip(samples=out, sample_rate=clip.sample_rate, subject_id=clip.subject_id)


def mel_from_hz(freq_hz: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=float) / 700.0)


def hz_from_mel(mel: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int = FFT_WINDOW, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular mel filters spanning 0 Hz to Nyquist, shape (n_mels, n_fft//2+1)."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_points = np.linspace(0.0, float(mel_from_hz(sample_rate / 2.0)), n_mels + 2)
    hz_points = np.asarray(hz_from_mel(mel_points))
    filters = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (fft_freqs - lo) / (center - lo)
        down = (hi - fft_freqs) / (hi - center)
        filters[i] = np.maximum(0.0, np.minimum(up, down))
    return filters


def frame_count(n_samples: int, fft_window: int = FFT_WINDOW, hop: int = HOP) -> int:
    if n_samples < fft_window:
        raise DataError(f"clip of {n_samples} samples is shorter than one window ({fft_window})")
    return 1 + (n_samples - fft_window) // hop


def log_mel(clip: AudioClip) -> Spectrogram:
    """Hann STFT (window 2048, hop 512, no padding) -> power -> 128 mel -> log.

    Frames are taken fully inside the signal, so the frame count is exactly
    1 + floor((N - 2048) / 512).
    """
    x = clip.samples
    t = frame_count(x.size)
    window = np.hanning(FFT_WINDOW)
    idx = np.arange(FFT_WINDOW)[None, :] + HOP * np.arange(t)[:, None]
    frames = x[idx] * window[None, :]
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2  # (t, bins)
    filters = mel_filterbank(clip.sample_rate)
    mel = filters @ power.T  # (128, t)
    return Spectrogram(values=np.log(mel + LOG_FLOOR), sample_rate=clip.sample_rate)


# ---------------------------------------------------------------------------
# Augmentation operators

def circular_shift(clip: AudioClip, offset: int) -> AudioClip:
    """Rotate samples circularly; positive offsets shift content forward."""
    shifted = np.roll(clip.samples, offset)
    return AudioClip(samples=shifted, sample_rate=clip.sample_rate, subject_id=clip.subject_id)


def time_shift(clip: AudioClip, rng: np.random.Generator) -> AudioClip:
    """Circular shift by |offset| ~ U[1 s, 0.5 * duration], random sign.

    Clips shorter than 2 s (where the offset range would be empty) are
    returned unshifted with a warning.
    """
    duration = clip.duration
    if duration < 2.0:
        log.warning("clip %r is %.2f s (< 2 s); returned unshifted", clip.subject_id, duration)
        return AudioClip(samples=clip.samples.copy(), sample_rate=clip.sample_rate,
                         subject_id=clip.subject_id)
    k_seconds = 0.5 * duration
    magnitude_s = rng.uniform(1.0, k_seconds)
    offset = int(round(magnitude_s * clip.sample_rate))
    offset = max(clip.sample_rate, min(offset, clip.samples.size // 2))
    sign = 1 if rng.random() < 0.5 else -1
    return circular_shift(clip, sign * offset)


def _masked_copy(spec: Spectrogram, row_slice: slice, col_slice: slice) -> Spectrogram:
    values = spec.values.copy()
    values[row_slice, col_slice] = MASK_FILL
    return Spectrogram(values=values, sample_rate=spec.sample_rate,
                       fft_window=spec.fft_window, hop=spec.hop)


def apply_freq_mask(spec: Spectrogram, start: int, width: int) -> Spectrogram:
    if width < 1 or start < 0 or start + width > N_MELS:
        raise DataError(f"frequency mask [{start}, {start + width}) outside [0, {N_MELS}]")
    return _masked_copy(spec, slice(start, start + width), slice(None))


def freq_mask(spec: Spectrogram, rng: np.random.Generator) -> Spectrogram:
    """Mask a contiguous band of f ~ U[1, 60] mel channels from f0 ~ U[0, 128-f)."""
    f = int(rng.integers(1, 61))
    f0 = int(rng.integers(0, N_MELS - f))
    return apply_freq_mask(spec, f0, f)


def apply_time_mask(spec: Spectrogram, start: int, width: int) -> Spectrogram:
    if width < 1 or start < 0 or start + width > spec.frames:
        raise DataError(f"time mask [{start}, {start + width}) outside [0, {spec.frames}]")
    return _masked_copy(spec, slice(None), slice(start, start + width))


def time_mask(spec: Spectrogram, rng: np.random.Generator) -> Spectrogram:
    """Mask t ~ U[1, 60] consecutive frames from t0 ~ U[0, frames - t).

    For clips with at most 60 frames the width is clamped to frames - 1.
    """
    tau = spec.frames
    if tau < 2:
        raise DataError(f"cannot time-mask a {tau}-frame spectrogram")
    t = int(rng.integers(1, min(60, tau - 1) + 1))
    t0 = int(rng.integers(0, tau - t))
    return apply_time_mask(spec, t0, t)


# ---------------------------------------------------------------------------
# Oversampling planner

@dataclass(frozen=True)
class OversampleTarget:
    """One oversampling directive: who to copy and with which operators."""

    predicate: dict[str, str]          # attribute -> required value (conjunction)
    copies: int
    operators: tuple[str, ...]
    label: Optional[Label] = None

    def describe(self) -> str:
        parts = [f"{k}={v}" for k, v in sorted(self.predicate.items())]
        if self.label is not None:
            parts.append(f"label={self.label.value}")
        return " & ".join(parts) if parts else "<all>"


@dataclass
class OversamplePlan:
    targets: list[OversampleTarget]
    seed: int


KNOWN_OPERATORS = ("time_shift", "freq_mask", "time_mask")


@dataclass(frozen=True)
class PlanInstance:
    """One synthetic sample to materialize, with full provenance."""

    source_id: str
    operator: str
    seed: int
    target_index: int
    instance_index: int


def plan_from_dict(obj: dict) -> OversamplePlan:
    targets = []
    for t in obj["targets"]:
        predicate = {str(k): str(v) for k, v in t.get("predicate", {}).items()}
        label = Label(t["label"]) if t.get("label") else None
        operators = tuple(t.get("operators") or ("time_shift",))
        targets.append(OversampleTarget(predicate=predicate, copies=int(t["copies"]),
                                        operators=operators, label=label))
    return OversamplePlan(targets=targets, seed=int(obj.get("seed", 0)))


def load_plan(path: str | Path) -> OversamplePlan:
    return plan_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def compile_plan(records: Sequence[SubjectRecord], plan: OversamplePlan) -> list[PlanInstance]:
    """Expand the plan into per-instance directives, round-robin over sources.

    Deterministic: instance seeds derive from (plan.seed, target index,
    instance index) only.
    """
    instances: list[PlanInstance] = []
    for t_idx, target in enumerate(plan.targets):
        if target.copies < 1:
            raise DataError(f"target {target.describe()}: copies must be >= 1")
        for attr in target.predicate:
            if attr not in PROTECTED_ATTRIBUTES:
                raise DataError(f"target predicate references unknown attribute {attr!r}")
        for op in target.operators:
            if op not in KNOWN_OPERATORS:
                raise DataError(f"unknown operator {op!r} (expected one of {KNOWN_OPERATORS})")
        sources = sorted(
            r.subject_id for r in records
            if all(r.attribute_value(a) == v for a, v in target.predicate.items())
            and (target.label is None or r.label is target.label)
        )
        if not sources:
            raise DataError(f"no records match oversampling predicate {target.describe()}")
        counter = 0
        for _ in range(target.copies):
            for sid in sources:
                seed = int(np.random.SeedSequence(
                    entropy=plan.seed, spawn_key=(t_idx, counter)).generate_state(1)[0])
                op = target.operators[counter % len(target.operators)]
                instances.append(PlanInstance(source_id=sid, operator=op, seed=seed,
                                              target_index=t_idx, instance_index=counter))
                counter += 1
    return instances
