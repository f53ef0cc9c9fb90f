"""Command-line entry point.

Subcommands: prepare (WAVs -> mels + manifest), train, generate, eval
(NDB/JSD report), plot (mel -> PNG). A JSON config file may set any field;
explicit flags win over the file. Exit codes: 0 success, 2 input error,
3 training divergence, 4 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data, dsp, metrics, training
from .errors import (
    CheckpointError,
    FormatError,
    InvalidInput,
    TrainingDiverged,
    UnaganError,
)
from .generator import GeneratorConfig, generate_frames

CONFIG_SECTIONS = ("dsp", "generator", "train", "eval")


@dataclass
class EvalSettings:
    n_bins: int = 100
    alpha: float = 0.05
    patch_frames: int = 16
    patch_stride: int = 16

    def validate(self):
        if self.n_bins < 1:
            raise InvalidInput(f"n_bins must be >= 1, got {self.n_bins}")
        if not (0 < self.alpha < 1):
            raise InvalidInput(f"alpha must be in (0, 1), got {self.alpha}")

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "alpha": self.alpha,
            "patch_frames": self.patch_frames,
            "patch_stride": self.patch_stride,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSettings":
        return cls(**d)


def load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"{path}: cannot read config ({exc})") from exc
    if not isinstance(doc, dict):
        raise InvalidInput(f"{path}: config must be a JSON object")
    unknown = set(doc) - set(CONFIG_SECTIONS)
    if unknown:
        raise InvalidInput(f"{path}: unknown config sections {sorted(unknown)}")
    return doc


def _build_section(cls, section: dict, overrides: dict):
    """Instantiate a config dataclass from file section + flag overrides."""
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls.from_dict(merged) if hasattr(cls, "from_dict") else cls(**merged)
    except TypeError as exc:
        raise InvalidInput(f"bad config keys for {cls.__name__}: {exc}") from exc


def _parse_channels(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise InvalidInput(f"bad --channels value {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unagan",
        description="Unconditional mel-spectrogram generation and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="base random seed (default 0)")

    p = sub.add_parser("prepare", help="extract mels from a directory of WAVs")
    add_common(p)
    p.add_argument("input_dir", type=Path, help="directory containing 16-bit PCM WAV files")
    p.add_argument("out_dir", type=Path, help="output directory for mels + manifest")
    p.add_argument("--sample-rate", type=int, default=None, help="expected WAV rate (22050)")
    p.add_argument("--n-fft", type=int, default=None, help="FFT size (1024)")
    p.add_argument("--hop", type=int, default=None, help="hop size in samples (256)")
    p.add_argument("--n-mels", type=int, default=None, help="mel band count (80)")
    p.add_argument("--fmin", type=float, default=None, help="lowest filterbank edge Hz (0)")
    p.add_argument("--fmax", type=float, default=None, help="highest edge Hz (sample_rate/2)")
    p.add_argument("--log-floor", type=float, default=None, help="magnitude floor (1e-5)")

    p = sub.add_parser("train", help="run adversarial training on a prepared dataset")
    add_common(p)
    p.add_argument("manifest", type=Path, help="manifest.json from `unagan prepare`")
    p.add_argument("out_dir", type=Path, help="directory for checkpoints and the log")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    p.add_argument("--steps", type=int, default=None, help="total training steps (2000)")
    p.add_argument("--learning-rate", type=float, default=None, help="Adam learning rate (1e-4)")
    p.add_argument("--batch-size", type=int, default=None, help="segments per step (5)")
    p.add_argument("--beta", type=float, default=None, help="tau update gain (0.001)")
    p.add_argument("--gamma", type=float, default=None, help="diversity ratio in (0,1] (1.0)")
    p.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help="cycle-loss weight; 0 disables the encoder (1.0)")
    p.add_argument("--segment-frames", type=int, default=None, help="training crop length (64)")
    p.add_argument("--checkpoint-interval", type=int, default=None,
                   help="steps between checkpoints (500)")
    p.add_argument("--n-levels", type=int, default=None, help="generator refinement levels (3)")
    p.add_argument("--noise-dims", type=int, default=None, help="noise vector dimension (20)")
    p.add_argument("--channels", type=str, default=None,
                   help="comma-separated per-level widths (256,256,256)")
    p.add_argument("--gru-layers", type=int, default=None, help="GRU layers per GBlock (1)")

    p = sub.add_parser("generate", help="sample mels (and optional WAV previews)")
    add_common(p)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--n-samples", type=int, default=1, help="number of mels to generate (1)")
    p.add_argument("--frames", type=int, default=860, help="frames per sample (~10 s)")
    p.add_argument("--wav", action="store_true", help="also write Griffin-Lim previews")
    p.add_argument("--gl-iters", type=int, default=64, help="Griffin-Lim iterations (64)")

    p = sub.add_parser("eval", help="NDB/JSD diversity report for generated mels")
    add_common(p)
    p.add_argument("manifest", type=Path, help="manifest.json of the training data")
    p.add_argument("generated_dir", type=Path, help="directory of generated .mel files")
    p.add_argument("--n-bins", type=int, default=None, help="k-means bins (100)")
    p.add_argument("--alpha", type=float, default=None, help="significance level (0.05)")
    p.add_argument("--patch-frames", type=int, default=None, help="frames per patch (16)")
    p.add_argument("--patch-stride", type=int, default=None, help="patch stride (16)")
    p.add_argument("--report", type=Path, default=None,
                   help="report path (default <generated_dir>/bin_report.json)")

    p = sub.add_parser("plot", help="render a mel file as a grayscale PNG")
    add_common(p)
    p.add_argument("mel_file", type=Path)
    p.add_argument("out_image", type=Path)

    return parser


def _sections(args) -> dict:
    return load_config_file(args.config) if args.config else {}


def _dsp_config(args, sections) -> dsp.DspConfig:
    overrides = {
        "sample_rate": getattr(args, "sample_rate", None),
        "n_fft": getattr(args, "n_fft", None),
        "hop": getattr(args, "hop", None),
        "n_mels": getattr(args, "n_mels", None),
        "fmin": getattr(args, "fmin", None),
        "fmax": getattr(args, "fmax", None),
        "log_floor": getattr(args, "log_floor", None),
    }
    return _build_section(dsp.DspConfig, sections.get("dsp", {}), overrides)


def cmd_prepare(args) -> int:
    sections = _sections(args)
    cfg = _dsp_config(args, sections)
    wavs = sorted(args.input_dir.glob("*.wav")) + sorted(args.input_dir.glob("*.WAV"))
    if not wavs:
        raise InvalidInput(f"no WAV files in {args.input_dir}")
    manifest = data.prepare_dataset(wavs, args.out_dir, cfg)
    print(f"prepared {len(manifest.entries)} clips -> {args.out_dir / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    sections = _sections(args)
    seed = args.seed if args.seed is not None else 0
    train_overrides = {
        "learning_rate": args.learning_rate,
        "batch_size": args.batch_size,
        "total_steps": args.steps,
        "beta": args.beta,
        "gamma": args.gamma,
        "lambda": args.lambda_,
        "segment_frames": args.segment_frames,
        "checkpoint_interval": args.checkpoint_interval,
        "seed": args.seed,
    }
    manifest = data.load_manifest(args.manifest)
    if args.resume is not None:
        trainer = training.load_checkpoint(
            args.resume, corpus=data.load_corpus(manifest), expect_dsp=manifest.dsp_config
        )
        ignored = {
            k: v for k, v in train_overrides.items()
            if v is not None and k not in ("total_steps", "seed")
        }
        if ignored:
            print(
                f"warning: resuming keeps the checkpoint's config; ignoring {sorted(ignored)}",
                file=sys.stderr,
            )
        if args.steps is not None:
            trainer.cfg.total_steps = args.steps
    else:
        gen_overrides = {
            "n_levels": args.n_levels,
            "noise_dims": args.noise_dims,
            "channels": _parse_channels(args.channels) if args.channels else None,
            "gru_layers": args.gru_layers,
            "mel_dims": manifest.dsp_config.n_mels,
        }
        gen_cfg = _build_section(GeneratorConfig, sections.get("generator", {}), gen_overrides)
        train_section = dict(sections.get("train", {}))
        train_section.setdefault("seed", seed)
        train_cfg = _build_section(training.TrainConfig, train_section, train_overrides)
        trainer = training.Trainer.from_manifest(manifest, gen_cfg, train_cfg)

    out_dir = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    final_path = out_dir / "checkpoint_final.ckpt"
    mode = "a" if args.resume is not None and log_path.exists() else "w"
    with open(log_path, mode) as log:
        if mode == "w":
            log.write(json.dumps(trainer.log_header(), sort_keys=True) + "\n")
        try:
            while trainer.state.step < trainer.cfg.total_steps:
                m = trainer.step()
                log.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")
                if m.step % trainer.cfg.checkpoint_interval == 0:
                    trainer.save_checkpoint(out_dir / f"checkpoint_{m.step:07d}.ckpt")
        except TrainingDiverged as exc:
            log.write(json.dumps({"type": "diverged", "error": str(exc)}) + "\n")
            print(f"error: {exc}", file=sys.stderr)
            return 3
    trainer.save_checkpoint(final_path)
    print(f"trained to step {trainer.state.step}: {final_path}")
    return 0


def cmd_generate(args) -> int:
    sections = _sections(args)
    expect_dsp = (
        _build_section(dsp.DspConfig, sections["dsp"], {}) if "dsp" in sections else None
    )
    trainer = training.load_checkpoint(args.checkpoint, expect_dsp=expect_dsp)
    if args.n_samples < 1 or args.frames < 1:
        raise InvalidInput("--n-samples and --frames must be >= 1")
    seed = args.seed if args.seed is not None else 0
    args.out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(args.n_samples):
        rng = np.random.default_rng((seed, i))
        mel_norm = generate_frames(args.frames, trainer.g, rng)
        mel = dsp.denormalize(mel_norm, trainer.stats)
        path = args.out_dir / f"gen_{i:05d}.mel"
        dsp.write_mel(mel, path)
        paths.append(path)
        if args.wav:
            audio = dsp.griffin_lim(mel_norm, trainer.stats, trainer.dsp_cfg, args.gl_iters)
            data.save_wav(audio, args.out_dir / f"gen_{i:05d}.wav", trainer.dsp_cfg.sample_rate)
    print(f"wrote {len(paths)} samples to {args.out_dir}")
    return 0


def cmd_eval(args) -> int:
    sections = _sections(args)
    overrides = {
        "n_bins": args.n_bins,
        "alpha": args.alpha,
        "patch_frames": args.patch_frames,
        "patch_stride": args.patch_stride,
    }
    settings = _build_section(EvalSettings, sections.get("eval", {}), overrides)
    settings.validate()
    seed = args.seed if args.seed is not None else 0

    manifest = data.load_manifest(args.manifest)
    train_mels = data.load_corpus(manifest, normalized=True)
    gen_files = sorted(args.generated_dir.glob("*.mel"))
    if not gen_files:
        raise InvalidInput(f"no .mel files in {args.generated_dir}")
    gen_mels = [
        dsp.normalize(dsp.read_mel(p), manifest.stats) for p in gen_files
    ]

    train_vecs = metrics.patchify(train_mels, settings.patch_frames, settings.patch_stride)
    gen_vecs = metrics.patchify(gen_mels, settings.patch_frames, settings.patch_stride)
    model = metrics.fit_bins(train_vecs, settings.n_bins, seed)
    report = metrics.assign_and_test(gen_vecs, model, settings.alpha)

    report_path = args.report or (args.generated_dir / "bin_report.json")
    report_path.write_text(metrics.report_to_json(report))
    print(metrics.format_report(report), end="")
    print(f"report: {report_path}")
    return 0


def mel_to_image(mel: np.ndarray) -> "np.ndarray":
    """Map a (bands x frames) mel to a uint8 image array (frames wide, bands
    tall; min -> black, max -> white; band 0 ends up at the bottom row)."""
    mel = np.asarray(mel, dtype=np.float64)
    lo, hi = mel.min(), mel.max()
    scaled = np.zeros_like(mel) if hi == lo else (mel - lo) / (hi - lo)
    return (np.round(scaled * 255.0)).astype(np.uint8)[::-1, :]


def cmd_plot(args) -> int:
    from PIL import Image

    mel = dsp.read_mel(args.mel_file)
    img = Image.fromarray(mel_to_image(mel), mode="L")
    args.out_image.parent.mkdir(parents=True, exist_ok=True)
    img.save(args.out_image, format="PNG")
    print(f"wrote {args.out_image} ({img.size[0]}x{img.size[1]})")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (InvalidInput, FormatError, UnaganError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
