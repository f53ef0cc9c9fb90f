"""Deterministic synthetic corpora for smoke tests and the acceptance suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import save_wav


def _tone(
    rng: np.random.Generator,
    seconds: float,
    rate: int,
    f0: float,
    modulated: bool = True,
    noise_amp: float = 0.01,
) -> np.ndarray:
    """Band-limited tone: a few harmonics, optionally amplitude-modulated and
    dithered with noise."""
    n = int(seconds * rate)
    t = np.arange(n) / rate
    audio = np.zeros(n)
    for h, weight in enumerate([1.0, 0.5, 0.25], start=1):
        freq = f0 * h
        if freq >= rate / 2:
            break
        audio += weight * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    if modulated:
        envelope = 0.6 + 0.4 * np.sin(
            2 * np.pi * rng.uniform(0.3, 1.5) * t + rng.uniform(0, 2 * np.pi)
        )
        audio = audio * envelope
    audio = audio / np.max(np.abs(audio))
    if noise_amp:
        audio += noise_amp * rng.standard_normal(n)
    return 0.7 * audio / np.max(np.abs(audio))


def make_toy_corpus(
    out_dir, n_clips: int = 10, seconds: float = 2.5, rate: int = 22050, seed: int = 0
) -> list[Path]:
    """Write n_clips short WAVs of tones at varied pitches. Deterministic per seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_clips):
        f0 = float(rng.uniform(150.0, 900.0))
        audio = _tone(rng, seconds, rate, f0)
        path = out_dir / f"clip_{i:02d}.wav"
        save_wav(audio, path, rate)
        paths.append(path)
    return paths


def make_two_mode_corpus(
    out_dir,
    n_clips_per_mode: int = 5,
    seconds: float = 2.0,
    rate: int = 22050,
    seed: int = 0,
    low_hz: float = 220.0,
    high_hz: float = 1800.0,
    stationary: bool = False,
) -> list[Path]:
    """Write a corpus with two well-separated spectral modes (low vs high tones).

    With stationary=True the clips are constant-amplitude noiseless tones,
    which makes the two modes maximally clean for coverage experiments.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_clips_per_mode * 2):
        base = low_hz if i % 2 == 0 else high_hz
        f0 = float(base * rng.uniform(0.97, 1.03))
        audio = _tone(
            rng, seconds, rate, f0,
            modulated=not stationary,
            noise_amp=0.0 if stationary else 0.01,
        )
        path = out_dir / f"clip_{i:02d}.wav"
        save_wav(audio, path, rate)
        paths.append(path)
    return paths
