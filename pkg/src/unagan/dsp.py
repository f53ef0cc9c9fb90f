"""Audio ingestion and mel-spectrogram features.

A mel-spectrogram is a plain ``numpy`` array of shape ``(n_mels, n_frames)``:
row = mel band, column = time frame. Values are natural-log magnitudes,
floored at ``log_floor``, and usually z-normalized per band with
:class:`NormStats` before they reach the models.

The on-disk mel format is little-endian: magic ``MEL1``, u32 band count,
u32 frame count, then band-major float32 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInput

MEL_MAGIC = b"MEL1"


@dataclass
class DspConfig:
    """STFT / mel filterbank settings for the whole pipeline."""

    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None  # None means sample_rate / 2
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.fmax is None:
            self.fmax = self.sample_rate / 2
        self.validate()

    def validate(self):
        if self.sample_rate <= 0:
            raise InvalidInput(f"sample_rate must be positive, got {self.sample_rate}")
        if self.n_mels < 1:
            raise InvalidInput(f"n_mels must be >= 1, got {self.n_mels}")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise InvalidInput(
                f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin} "
                f"fmax={self.fmax} sample_rate={self.sample_rate}"
            )
        if self.hop < 1 or self.n_fft < 1 or self.hop > self.n_fft:
            raise InvalidInput(f"need 1 <= hop <= n_fft, got hop={self.hop} n_fft={self.n_fft}")
        if self.log_floor <= 0:
            raise InvalidInput(f"log_floor must be positive, got {self.log_floor}")

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "n_fft": self.n_fft,
            "hop": self.hop,
            "n_mels": self.n_mels,
            "fmin": self.fmin,
            "fmax": self.fmax,
            "log_floor": self.log_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DspConfig":
        return cls(**d)


@dataclass
class NormStats:
    """Per-band mean/std over a training corpus. std is clamped to >= 1e-8."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), 1e-8)
        if self.mean.ndim != 1 or self.mean.shape != self.std.shape:
            raise InvalidInput("mean and std must be 1-D vectors of equal length")

    @property
    def n_mels(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def identity(cls, n_mels: int) -> "NormStats":
        return cls(np.zeros(n_mels), np.ones(n_mels))


def hz_to_mel(f):
    """HTK mel scale: mel(f) = 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft//2 + 1).

    Filter centers are equally spaced on the HTK mel scale between fmin and
    fmax. Each row is rescaled so its maximum is exactly 1.0.
    """
    cfg.validate()
    n_bins = cfg.n_fft // 2 + 1
    bin_hz = np.arange(n_bins, dtype=np.float64) * cfg.sample_rate / cfg.n_fft

    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)

    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for k in range(cfg.n_mels):
        lo, ctr, hi = hz_pts[k], hz_pts[k + 1], hz_pts[k + 2]
        rising = (bin_hz - lo) / max(ctr - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - ctr, 1e-12)
        tri = np.maximum(0.0, np.minimum(rising, falling))
        peak = tri.max()
        if peak <= 0.0:
            raise InvalidInput(
                f"mel filter {k} has no positive FFT bin; n_mels={cfg.n_mels} is too "
                f"large for n_fft={cfg.n_fft} over [{cfg.fmin}, {cfg.fmax}] Hz"
            )
        fb[k] = tri / peak
    return fb


def _hann(n: int) -> np.ndarray:
    # Periodic Hann window.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frame_count(n_samples: int, hop: int) -> int:
    return 1 + n_samples // hop


def _pad_centered(audio: np.ndarray, n_fft: int) -> np.ndarray:
    pad = n_fft // 2
    if len(audio) > pad:
        return np.pad(audio, pad, mode="reflect")
    # Too short for reflection; zero padding keeps ingestion total.
    return np.pad(audio, pad, mode="constant")


def stft_magnitude(audio: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """Centered magnitude STFT, shape (n_fft//2 + 1, 1 + len(audio)//hop)."""
    audio = np.asarray(audio, dtype=np.float64)
    n_frames = _frame_count(len(audio), cfg.hop)
    padded = _pad_centered(audio, cfg.n_fft)
    window = _hann(cfg.n_fft)
    frames = np.stack(
        [padded[t * cfg.hop : t * cfg.hop + cfg.n_fft] for t in range(n_frames)], axis=1
    )
    return np.abs(np.fft.rfft(frames * window[:, None], axis=0))


def melspec(audio: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """Log-mel spectrogram of a sample vector, shape (n_mels, 1 + len//hop).

    Pipeline: centered STFT (reflect padding, periodic Hann) -> magnitude ->
    mel filterbank -> ln(max(value, log_floor)). Deterministic: identical
    input and config give bitwise-identical output.
    """
    audio = np.asarray(audio)
    if audio.size == 0:
        raise InvalidInput("audio is empty")
    if not np.all(np.isfinite(audio)):
        raise InvalidInput("audio contains non-finite samples")
    cfg.validate()
    mag = stft_magnitude(audio, cfg)
    mel = mel_filterbank(cfg) @ mag
    return np.log(np.maximum(mel, cfg.log_floor)).astype(np.float32)


def silence_value(cfg: DspConfig) -> float:
    """Log-mel value of digital silence (the log floor)."""
    return float(np.log(cfg.log_floor))


def normalize(mel: np.ndarray, stats: NormStats) -> np.ndarray:
    """Per-band z-normalization: (x - mean_k) / std_k. Exact inverse: denormalize."""
    mel = np.asarray(mel)
    if mel.ndim != 2 or mel.shape[0] != stats.n_mels:
        raise InvalidInput(
            f"mel has {mel.shape[0] if mel.ndim == 2 else '?'} bands, stats expect {stats.n_mels}"
        )
    out = (mel.astype(np.float64) - stats.mean[:, None]) / stats.std[:, None]
    return out.astype(np.float32)


def denormalize(mel: np.ndarray, stats: NormStats) -> np.ndarray:
    mel = np.asarray(mel)
    if mel.ndim != 2 or mel.shape[0] != stats.n_mels:
        raise InvalidInput(
            f"mel has {mel.shape[0] if mel.ndim == 2 else '?'} bands, stats expect {stats.n_mels}"
        )
    out = mel.astype(np.float64) * stats.std[:, None] + stats.mean[:, None]
    return out.astype(np.float32)


def write_mel(mel: np.ndarray, path) -> None:
    """Write a mel matrix: magic 'MEL1', u32 K, u32 T, K*T little-endian f32, band-major."""
    mel = np.asarray(mel, dtype=np.float32)
    if mel.ndim != 2:
        raise InvalidInput(f"mel must be 2-D, got shape {mel.shape}")
    if not np.all(np.isfinite(mel)):
        raise InvalidInput("mel contains non-finite values")
    k, t = mel.shape
    with open(path, "wb") as fh:
        fh.write(MEL_MAGIC)
        fh.write(struct.pack("<II", k, t))
        fh.write(np.ascontiguousarray(mel, dtype="<f4").tobytes())


def read_mel(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MEL_MAGIC:
        raise FormatError(f"{path}: not a MEL1 file")
    k, t = struct.unpack("<II", blob[4:12])
    payload = blob[12:]
    if len(payload) != 4 * k * t:
        raise FormatError(
            f"{path}: header says {k}x{t} ({4 * k * t} bytes) but payload has {len(payload)} bytes"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(k, t).copy()


def sample_segment(
    mel: np.ndarray, t_seg: int, rng: np.random.Generator, pad_value=0.0
) -> tuple[np.ndarray, int]:
    """Contiguous K x t_seg crop at a uniformly random offset.

    Short inputs are right-padded with ``pad_value`` (scalar or per-band
    vector; normalized silence in the training pipeline). Returns
    (segment, n_padded_frames).
    """
    if t_seg < 1:
        raise InvalidInput(f"t_seg must be >= 1, got {t_seg}")
    mel = np.asarray(mel)
    k, n_frames = mel.shape
    if n_frames < t_seg:
        seg = np.empty((k, t_seg), dtype=mel.dtype)
        seg[:] = np.reshape(np.asarray(pad_value, dtype=mel.dtype), (-1, 1))
        seg[:, :n_frames] = mel
        return seg, t_seg - n_frames
    offset = int(rng.integers(0, n_frames - t_seg + 1))
    return mel[:, offset : offset + t_seg].copy(), 0


def _istft(spec: np.ndarray, cfg: DspConfig, n_samples: int) -> np.ndarray:
    """Inverse of stft_magnitude's framing, via windowed overlap-add."""
    window = _hann(cfg.n_fft)
    n_frames = spec.shape[1]
    total = cfg.n_fft + cfg.hop * (n_frames - 1)
    acc = np.zeros(total)
    wsum = np.zeros(total)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=0)
    for t in range(n_frames):
        sl = slice(t * cfg.hop, t * cfg.hop + cfg.n_fft)
        acc[sl] += frames[:, t] * window
        wsum[sl] += window**2
    acc /= np.maximum(wsum, 1e-8)
    pad = cfg.n_fft // 2
    return acc[pad : pad + n_samples]


def griffin_lim(mel: np.ndarray, stats: NormStats, cfg: DspConfig, iters: int = 64) -> np.ndarray:
    """Approximate waveform for a normalized log-mel matrix.

    Denormalizes, exponentiates, pseudo-inverts the filterbank
    (transpose with per-bin weight normalization), then runs ``iters``
    rounds of iterative phase recovery. Preview quality only.
    """
    if iters < 1:
        raise InvalidInput(f"iters must be >= 1, got {iters}")
    mel = np.asarray(mel)
    linear_mel = np.exp(denormalize(mel, stats).astype(np.float64))
    fb = mel_filterbank(cfg)
    weights = np.maximum(fb.sum(axis=0), 1e-8)
    target_mag = (fb.T @ linear_mel) / weights[:, None]

    n_frames = mel.shape[1]
    n_samples = cfg.hop * (n_frames - 1) if n_frames > 1 else cfg.hop
    rng = np.random.default_rng(0)
    phase = np.exp(2j * np.pi * rng.random(target_mag.shape))
    spec = target_mag * phase
    for _ in range(iters):
        audio = _istft(spec, cfg, n_samples)
        re_padded = _pad_centered(audio, cfg.n_fft)
        window = _hann(cfg.n_fft)
        t_avail = _frame_count(len(audio), cfg.hop)
        frames = np.stack(
            [re_padded[t * cfg.hop : t * cfg.hop + cfg.n_fft] for t in range(t_avail)], axis=1
        )
        est = np.fft.rfft(frames * window[:, None], axis=0)
        if est.shape[1] < spec.shape[1]:
            est = np.pad(est, ((0, 0), (0, spec.shape[1] - est.shape[1])))
        est = est[:, : spec.shape[1]]
        angles = est / np.maximum(np.abs(est), 1e-12)
        spec = target_mag * angles
    audio = _istft(spec, cfg, n_samples)
    peak = np.max(np.abs(audio))
    if peak > 1.0:
        audio = audio / peak
    return audio.astype(np.float32)
