"""Dataset manifest, WAV ingestion, and corpus statistics.

A prepared dataset is a directory of ``.mel`` files plus one JSON manifest
recording the DSP config, per-band normalization stats, and the file list.
Mel paths in the manifest are relative to the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import dsp
from .errors import FormatError, InvalidInput

MANIFEST_FORMAT = "unagan-manifest"
MANIFEST_VERSION = 1


def load_wav(path, expect_rate: int) -> np.ndarray:
    """Read a 16-bit PCM WAV as float64 in [-1, 1). Stereo is averaged to mono.

    Files at a different sample rate, or not 16-bit PCM, are rejected.
    """
    try:
        rate, raw = wavfile.read(path)
    except ValueError as exc:
        raise InvalidInput(f"{path}: unreadable WAV ({exc})") from exc
    if raw.dtype != np.int16:
        raise InvalidInput(f"{path}: expected 16-bit PCM, got dtype {raw.dtype}")
    if rate != expect_rate:
        raise InvalidInput(f"{path}: sample rate {rate} != configured {expect_rate}")
    audio = raw.astype(np.float64) / 32768.0
    if audio.ndim == 2:
        audio = audio.mean(axis=1)
    if audio.size == 0:
        raise InvalidInput(f"{path}: empty WAV")
    return audio


def save_wav(audio: np.ndarray, path, rate: int) -> None:
    clipped = np.clip(np.asarray(audio, dtype=np.float64), -1.0, 1.0 - 1.0 / 32768.0)
    wavfile.write(path, rate, (clipped * 32768.0).astype(np.int16))


@dataclass
class ManifestEntry:
    path: str  # relative to the manifest directory
    n_frames: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    dsp_config: dsp.DspConfig
    stats: dsp.NormStats
    root: Path  # directory the entry paths are relative to

    def mel_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def to_json(self) -> str:
        doc = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "dsp": self.dsp_config.to_dict(),
            "stats": {"mean": self.stats.mean.tolist(), "std": self.stats.std.tolist()},
            "entries": [{"path": e.path, "n_frames": e.n_frames} for e in self.entries],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(manifest.to_json())


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot parse manifest ({exc})") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: not a {MANIFEST_FORMAT} document")
    if doc.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {doc.get('version')}")
    cfg = dsp.DspConfig.from_dict(doc["dsp"])
    stats = dsp.NormStats(np.array(doc["stats"]["mean"]), np.array(doc["stats"]["std"]))
    if stats.n_mels != cfg.n_mels:
        raise FormatError(f"{path}: stats dimension {stats.n_mels} != n_mels {cfg.n_mels}")
    entries = [ManifestEntry(e["path"], int(e["n_frames"])) for e in doc["entries"]]
    manifest = DatasetManifest(entries, cfg, stats, path.parent)
    for entry in manifest.entries:
        if not manifest.mel_path(entry).exists():
            raise FormatError(f"{path}: listed mel file missing: {entry.path}")
    return manifest


def corpus_stats(mels: list[np.ndarray]) -> dsp.NormStats:
    """Per-band mean/std pooled over all frames of all clips."""
    if not mels:
        raise InvalidInput("no mel matrices given")
    joined = np.concatenate([np.asarray(m, dtype=np.float64) for m in mels], axis=1)
    return dsp.NormStats(joined.mean(axis=1), joined.std(axis=1))


def load_corpus(manifest: DatasetManifest, normalized: bool = True) -> list[np.ndarray]:
    """Read every mel in the manifest, optionally z-normalized with its stats."""
    mels = []
    for entry in manifest.entries:
        mel = dsp.read_mel(manifest.mel_path(entry))
        if mel.shape[0] != manifest.dsp_config.n_mels:
            raise FormatError(
                f"{entry.path}: has {mel.shape[0]} bands, manifest expects "
                f"{manifest.dsp_config.n_mels}"
            )
        if normalized:
            mel = dsp.normalize(mel, manifest.stats)
        mels.append(mel)
    return mels


def prepare_dataset(wav_paths: list[Path], out_dir: Path, cfg: dsp.DspConfig) -> DatasetManifest:
    """Extract mels for every WAV, compute corpus stats, write mels + manifest.

    Unreadable files are skipped with a warning on stderr; fails only if all
    are skipped. Re-running overwrites deterministically.
    """
    import sys

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mels, names = [], []
    for wav in sorted(wav_paths):
        try:
            audio = load_wav(wav, cfg.sample_rate)
            mels.append(dsp.melspec(audio, cfg))
            names.append(Path(wav).stem)
        except InvalidInput as exc:
            print(f"warning: skipping {wav}: {exc}", file=sys.stderr)
    if not mels:
        raise InvalidInput("no usable WAV files found")
    stats = corpus_stats(mels)
    entries = []
    for name, mel in zip(names, mels):
        rel = f"{name}.mel"
        dsp.write_mel(mel, out_dir / rel)
        entries.append(ManifestEntry(rel, mel.shape[1]))
    manifest = DatasetManifest(entries, cfg, stats, out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
