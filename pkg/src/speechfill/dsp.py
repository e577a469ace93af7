"""Audio <-> log-mel spectrogram frontend.

Analysis: centered, reflect-padded STFT with a periodic Hann window, squared
magnitudes through a triangular HTK-scale mel filterbank, then a floored log.
Synthesis: clamped pseudo-inverse back to linear magnitudes plus Griffin-Lim
phase recovery (stands in for a neural vocoder, which is out of scope).
"""
from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 24000
    hop_seconds: float = 0.0125
    frame_seconds: float = 0.040
    fft_size: int = 1024
    d_mel: int = 64
    f_min: float = 20.0
    f_max: float = 12000.0
    floor_epsilon: float = 1e-5

    @property
    def hop_samples(self) -> int:
        return round(self.hop_seconds * self.sample_rate)

    @property
    def frame_samples(self) -> int:
        return round(self.frame_seconds * self.sample_rate)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def __post_init__(self):
        if self.frame_samples > self.fft_size:
            raise ValueError(
                f"frame of {self.frame_samples} samples exceeds fft_size {self.fft_size}")
        if self.f_max > self.sample_rate / 2:
            raise ValueError(f"f_max {self.f_max} above Nyquist {self.sample_rate / 2}")


#: paper-scale analysis geometry (3 s crops -> 240 x 64 log-mels)
PAPER_DSP = DspConfig()

#: reduced geometry for the desk-scale presets (2.4 s crops -> 48 x 16)
TOY_DSP = DspConfig(sample_rate=8000, hop_seconds=0.05, frame_seconds=0.1,
                    fft_size=1024, d_mel=16, f_min=20.0, f_max=4000.0)


@dataclass
class AudioBuffer:
    """Mono audio; samples are floats nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.isfinite(self.samples).all():
            raise ValueError("audio contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """n x d_mel grid of floored log-scale mel energies."""

    values: np.ndarray
    hop_seconds: float
    frame_seconds: float
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def d_mel(self) -> int:
        return self.values.shape[1]


def frame_count(num_samples: int, hop_samples: int) -> int:
    """Frames produced by centered framing: one start every hop."""
    return 1 + (num_samples - 1) // hop_samples


@lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    # periodic Hann (COLA-friendly for overlap-add)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(audio: AudioBuffer, cfg: DspConfig) -> np.ndarray:
    """Complex spectrogram (frames x fft/2+1) of the centered, padded signal."""
    x = audio.samples
    frame, hop = cfg.frame_samples, cfg.hop_samples
    if len(x) < frame:
        raise ValueError(f"audio of {len(x)} samples is shorter than one {frame}-sample frame")
    pad = frame // 2
    xp = np.pad(x, pad, mode="reflect")
    n = frame_count(len(x), hop)
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    frames = xp[idx] * _hann(frame)
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def istft(spec: np.ndarray, cfg: DspConfig, length: int) -> np.ndarray:
    """Overlap-add inverse of `stft`, trimmed back to `length` samples."""
    frame, hop = cfg.frame_samples, cfg.hop_samples
    pad = frame // 2
    win = _hann(frame)
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, :frame] * win
    total = (spec.shape[0] - 1) * hop + frame
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(spec.shape[0]):
        out[i * hop:i * hop + frame] += frames[i]
        norm[i * hop:i * hop + frame] += win * win
    out /= np.maximum(norm, 1e-10)
    return out[pad:pad + length]


@lru_cache(maxsize=8)
def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    """d_mel triangular filters (rows) over the rfft bins, HTK mel scale."""
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def to_hz(mel):
        return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)

    edges_hz = to_hz(np.linspace(to_mel(cfg.f_min), to_mel(cfg.f_max), cfg.d_mel + 2))
    bin_hz = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_size
    fb = np.zeros((cfg.d_mel, cfg.n_bins))
    for j in range(cfg.d_mel):
        lo, center, hi = edges_hz[j], edges_hz[j + 1], edges_hz[j + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[j] = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=8)
def mel_band_centers(cfg: DspConfig) -> np.ndarray:
    """Center frequency (Hz) of each mel band."""
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    edges_mel = np.linspace(to_mel(cfg.f_min), to_mel(cfg.f_max), cfg.d_mel + 2)
    centers = 700.0 * (10.0 ** (edges_mel[1:-1] / 2595.0) - 1.0)
    centers.setflags(write=False)
    return centers


def log_mel(spec: np.ndarray, cfg: DspConfig) -> MelSpectrogram:
    """Floored log mel energies of a complex spectrogram from `stft`."""
    if spec.shape[1] != cfg.n_bins:
        raise ValueError(f"spectrogram has {spec.shape[1]} bins, filterbank expects {cfg.n_bins}")
    power = np.abs(spec) ** 2
    mel_power = power @ mel_filterbank(cfg).T
    values = np.log(np.maximum(mel_power, cfg.floor_epsilon))
    return MelSpectrogram(values, cfg.hop_seconds, cfg.frame_seconds, cfg.sample_rate)


def analyze(audio: AudioBuffer, cfg: DspConfig) -> MelSpectrogram:
    return log_mel(stft(audio, cfg), cfg)


@lru_cache(maxsize=8)
def _mel_pinv(cfg: DspConfig) -> np.ndarray:
    pinv = np.linalg.pinv(mel_filterbank(cfg))
    pinv.setflags(write=False)
    return pinv


def griffin_lim(magnitudes: np.ndarray, cfg: DspConfig, iterations: int,
                length: int, return_curve: bool = False):
    """Recover a waveform from linear magnitudes by iterative phase estimation."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    target = magnitudes
    phase = np.zeros_like(target)
    curve = []
    audio = None
    for _ in range(iterations):
        audio = istft(target * np.exp(1j * phase), cfg, length)
        reproj = stft(AudioBuffer(audio, cfg.sample_rate), cfg)
        phase = np.angle(reproj)
        if return_curve:
            num = np.linalg.norm(np.abs(reproj) - target)
            curve.append(num / max(np.linalg.norm(target), 1e-12))
    return (audio, curve) if return_curve else audio


def invert_mel(mel: MelSpectrogram, cfg: DspConfig, iterations: int = 60) -> AudioBuffer:
    """Approximate audio for a log-mel grid: clamped pinv to linear, Griffin-Lim phase."""
    mel_power = np.exp(mel.values)
    linear_power = np.maximum(mel_power @ _mel_pinv(cfg).T, 0.0)
    magnitudes = np.sqrt(linear_power)
    length = (mel.n_frames - 1) * cfg.hop_samples + cfg.hop_samples
    audio = griffin_lim(magnitudes, cfg, iterations, length)
    return AudioBuffer(np.clip(audio, -1.0, 1.0), cfg.sample_rate)


def amplitude_scale(audio: AudioBuffer, gain: float) -> AudioBuffer:
    """Scale samples by `gain` (> 0) and clip to [-1, 1]."""
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain}")
    return AudioBuffer(np.clip(audio.samples * gain, -1.0, 1.0), audio.sample_rate)


def trim_silence(audio: AudioBuffer, threshold_db: float = -40.0,
                 window_seconds: float = 0.025) -> AudioBuffer:
    """Drop leading / trailing windows whose RMS is below threshold_db (dBFS)."""
    win = max(1, round(window_seconds * audio.sample_rate))
    n = len(audio.samples) // win
    if n == 0:
        return audio
    rms = np.sqrt(np.mean(audio.samples[:n * win].reshape(n, win) ** 2, axis=1))
    loud = np.flatnonzero(20.0 * np.log10(np.maximum(rms, 1e-12)) > threshold_db)
    if loud.size == 0:
        return AudioBuffer(audio.samples[:0], audio.sample_rate)
    start = loud[0] * win
    end = min(len(audio.samples), (loud[-1] + 1) * win)
    return AudioBuffer(audio.samples[start:end], audio.sample_rate)


# ---------------------------------------------------------------------------
# WAV I/O (mono PCM 16-bit little-endian)
# ---------------------------------------------------------------------------

def load_wav(path: str | Path) -> AudioBuffer:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        raw = f.readframes(f.getnframes())
        rate = f.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def save_wav(audio: AudioBuffer, path: str | Path):
    clipped = np.clip(audio.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(audio.sample_rate)
        f.writeframes(pcm.tobytes())
