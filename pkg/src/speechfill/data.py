"""Training-pair construction: crops, time-domain gap masking, transcripts.

Masking is always done on the waveform (zeroing a sample span) before
analysis, never on the spectrogram, so frames whose analysis windows avoid
the gap stay bit-identical to the unmasked analysis.

Also provides a synthetic tone-symbol corpus: each symbol of a small
alphabet maps deterministically to a fixed-duration tone whose fundamental
sits on a distinct mel band, so the content of a masked span is recoverable
from the transcript alone. Utterances are written as `<id>.wav` + `<id>.txt`
pairs, the same layout used for real data ingestion.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer, DspConfig, MelSpectrogram, analyze, amplitude_scale
from .dsp import load_wav, mel_band_centers, save_wav

WHITESPACE_BYTE = 32


@dataclass(frozen=True)
class PipelineConfig:
    crop_seconds: float = 3.0
    gain_min: float = 0.3
    gain_max: float = 1.0
    max_gap_seconds: float = 1.0
    eval_min_gap_seconds: float = 0.75
    eval_max_gap_seconds: float = 1.0
    eval_context_seconds: float = 0.3


@dataclass
class GapSpec:
    """A contiguous masked span, in spectrogram frames and in samples."""

    start_frame: int
    len_frames: int
    start_sample: int
    len_samples: int

    @classmethod
    def from_frames(cls, start_frame: int, len_frames: int, hop_samples: int) -> "GapSpec":
        return cls(start_frame, len_frames,
                   start_frame * hop_samples, len_frames * hop_samples)

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.len_frames


@dataclass
class TranscriptEncoding:
    """UTF-8 byte ids, whitespace-padded to a fixed length."""

    byte_ids: np.ndarray
    original_length: int

    def decode(self) -> str:
        return bytes(self.byte_ids[:self.original_length].astype(np.uint8)).decode("utf-8")


@dataclass
class TrainingExample:
    target_mel: MelSpectrogram
    masked_mel: MelSpectrogram
    transcript: TranscriptEncoding
    gap: GapSpec
    crop_start_sample: int = 0  # offset of the crop inside the source utterance


def crop_random(audio: AudioBuffer, seconds: float, rng: np.random.Generator) -> AudioBuffer:
    """Uniformly placed contiguous crop of exactly `seconds`."""
    want = round(seconds * audio.sample_rate)
    if len(audio.samples) < want:
        raise ValueError(
            f"utterance of {len(audio.samples)} samples is shorter than a "
            f"{want}-sample crop")
    start = int(rng.integers(0, len(audio.samples) - want + 1))
    return AudioBuffer(audio.samples[start:start + want].copy(), audio.sample_rate)


def sample_gap(n_frames: int, mode: str, rng: np.random.Generator,
               dsp_cfg: DspConfig, pipe_cfg: PipelineConfig) -> GapSpec:
    """Draw a gap placement.

    train: length uniform over (0, 1 s] worth of frames, start anywhere valid.
    eval: length uniform over [750 ms, 1 s], with at least 300 ms of intact
    audio on each side.
    """
    hop = dsp_cfg.hop_seconds
    max_gap = round(pipe_cfg.max_gap_seconds / hop)
    if mode == "train":
        hi = min(max_gap, n_frames)
        if hi < 1:
            raise ValueError(f"cannot place a gap in {n_frames} frames")
        length = int(rng.integers(1, hi + 1))
        start = int(rng.integers(0, n_frames - length + 1))
    elif mode == "eval":
        lo = round(pipe_cfg.eval_min_gap_seconds / hop)
        hi = round(pipe_cfg.eval_max_gap_seconds / hop)
        ctx = round(pipe_cfg.eval_context_seconds / hop)
        hi = min(hi, n_frames - 2 * ctx)
        if hi < lo:
            raise ValueError(
                f"{n_frames} frames cannot hold a {lo}-frame gap with {ctx}-frame contexts")
        length = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(ctx, n_frames - ctx - length + 1))
    else:
        raise ValueError(f"unknown gap mode {mode!r}")
    return GapSpec.from_frames(start, length, dsp_cfg.hop_samples)


def apply_mask(audio: AudioBuffer, gap: GapSpec) -> AudioBuffer:
    """Zero the gap's sample span; everything else is bit-identical."""
    end = gap.start_sample + gap.len_samples
    if gap.start_sample < 0 or end > len(audio.samples):
        raise ValueError(
            f"gap [{gap.start_sample}, {end}) outside audio of {len(audio.samples)} samples")
    out = audio.samples.copy()
    out[gap.start_sample:end] = 0.0
    return AudioBuffer(out, audio.sample_rate)


def encode_transcript(text: str, m: int = 500) -> TranscriptEncoding:
    raw = text.encode("utf-8")
    if len(raw) > m:
        raise ValueError(f"transcript is {len(raw)} bytes, limit is {m}")
    ids = np.full(m, WHITESPACE_BYTE, dtype=np.int64)
    ids[:len(raw)] = np.frombuffer(raw, dtype=np.uint8)
    return TranscriptEncoding(ids, len(raw))


def make_training_example(audio: AudioBuffer, text: str, dsp_cfg: DspConfig,
                          pipe_cfg: PipelineConfig, m: int, rng: np.random.Generator,
                          mode: str = "train", augment: bool = True) -> TrainingExample:
    want = round(pipe_cfg.crop_seconds * audio.sample_rate)
    start = int(rng.integers(0, len(audio.samples) - want + 1))
    crop = AudioBuffer(audio.samples[start:start + want].copy(), audio.sample_rate)
    if augment:
        gain = float(np.exp(rng.uniform(np.log(pipe_cfg.gain_min), np.log(pipe_cfg.gain_max))))
        crop = amplitude_scale(crop, gain)
    target_mel = analyze(crop, dsp_cfg)
    gap = sample_gap(target_mel.n_frames, mode, rng, dsp_cfg, pipe_cfg)
    masked_mel = analyze(apply_mask(crop, gap), dsp_cfg)
    return TrainingExample(target_mel, masked_mel, encode_transcript(text, m), gap,
                           crop_start_sample=start)


class PairDataset:
    """Directory of `<id>.wav` + `<id>.txt` pairs; audio cached on first read."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.ids = sorted(p.stem for p in self.root.glob("*.wav")
                          if (self.root / f"{p.stem}.txt").exists())
        if not self.ids:
            raise ValueError(f"no wav/txt pairs under {self.root}")
        self._cache: dict[str, tuple[AudioBuffer, str]] = {}

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> tuple[AudioBuffer, str]:
        key = self.ids[i]
        if key not in self._cache:
            audio = load_wav(self.root / f"{key}.wav")
            text = (self.root / f"{key}.txt").read_text(encoding="utf-8").strip()
            self._cache[key] = (audio, text)
        return self._cache[key]


# ---------------------------------------------------------------------------
# synthetic tone-symbol corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyConfig:
    n_symbols: int = 8
    symbol_seconds: float = 0.25
    min_symbols: int = 10
    max_symbols: int = 14
    fade_seconds: float = 0.01   # raised-cosine fade at each segment boundary
    distractor_max: int = 0      # max extra chars around the true string
    amplitude: float = 0.4

    def __post_init__(self):
        if self.n_symbols < 4:
            raise ValueError("toy alphabet needs at least 4 symbols")

    @property
    def alphabet(self) -> str:
        return "abcdefghijklmnopqrstuvwxyz"[:self.n_symbols]


DISTRACTOR_CHARS = "0123456789"


def symbol_bands(toy: ToyConfig, dsp_cfg: DspConfig) -> np.ndarray:
    """Mel band index assigned to each symbol (distinct, spread over the range)."""
    idx = np.round(np.linspace(2, dsp_cfg.d_mel - 3, toy.n_symbols)).astype(int)
    if len(set(idx.tolist())) != toy.n_symbols:
        raise ValueError(f"{toy.n_symbols} symbols do not fit {dsp_cfg.d_mel} mel bands")
    return idx


def symbol_frequencies(toy: ToyConfig, dsp_cfg: DspConfig) -> np.ndarray:
    return mel_band_centers(dsp_cfg)[symbol_bands(toy, dsp_cfg)]


def synth_symbol(ch: str, toy: ToyConfig, dsp_cfg: DspConfig) -> np.ndarray:
    """The fixed tone segment for one symbol: sine at its band center with a
    symbol-specific envelope exponent; segment tapers to zero at both ends."""
    k = toy.alphabet.index(ch)
    sr = dsp_cfg.sample_rate
    n = round(toy.symbol_seconds * sr)
    t = np.arange(n) / sr
    freq = symbol_frequencies(toy, dsp_cfg)[k]
    tau = np.arange(n) / max(n - 1, 1)
    env = np.sin(np.pi * tau) ** (0.2 + 0.15 * (k % 4))
    fade = round(toy.fade_seconds * sr)
    if fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        env[:fade] *= ramp
        env[-fade:] *= ramp[::-1]
    return toy.amplitude * env * np.sin(2 * np.pi * freq * t)


def synth_utterance(text: str, toy: ToyConfig, dsp_cfg: DspConfig,
                    gain: float = 1.0) -> AudioBuffer:
    """Deterministic audio for a symbol string: fixed 250 ms grid, one tone per
    symbol, smooth (tapered) transitions at every boundary."""
    segs = [synth_symbol(ch, toy, dsp_cfg) for ch in text]
    return AudioBuffer(np.concatenate(segs) * gain, dsp_cfg.sample_rate)


def toy_core(text: str, toy: ToyConfig) -> tuple[str, int]:
    """Strip distractor characters; returns (symbol string, its char offset)."""
    chars = set(toy.alphabet)
    first = next((i for i, c in enumerate(text) if c in chars), len(text))
    last = max((i for i, c in enumerate(text) if c in chars), default=-1)
    return text[first:last + 1], first


def generate_toy_corpus(out_dir: str | Path, size: int, rng: np.random.Generator,
                        dsp_cfg: DspConfig, toy: ToyConfig) -> list[str]:
    """Write `size` utterances as wav/txt pairs; returns the transcript list."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seen: set[str] = set()
    texts = []
    for i in range(size):
        while True:
            n = int(rng.integers(toy.min_symbols, toy.max_symbols + 1))
            core = "".join(toy.alphabet[j] for j in rng.integers(0, toy.n_symbols, n))
            if core not in seen:
                seen.add(core)
                break
        gain = float(np.exp(rng.uniform(np.log(0.5), np.log(1.0))))
        audio = synth_utterance(core, toy, dsp_cfg, gain=gain)
        text = core
        if toy.distractor_max > 0:
            pre = int(rng.integers(0, toy.distractor_max + 1))
            post = int(rng.integers(0, toy.distractor_max + 1))
            text = ("".join(rng.choice(list(DISTRACTOR_CHARS), pre)) + core
                    + "".join(rng.choice(list(DISTRACTOR_CHARS), post)))
        save_wav(audio, out / f"{i:06d}.wav")
        (out / f"{i:06d}.txt").write_text(text + "\n", encoding="utf-8")
        texts.append(text)
    return texts
