import json

import numpy as np
import pytest
from PIL import Image

from unagan import dsp, toydata
from unagan.cli import main, mel_to_image

FAST_TRAIN = [
    "--channels", "8,8,8",
    "--noise-dims", "8",
    "--batch-size", "2",
    "--segment-frames", "16",
    "--checkpoint-interval", "5",
    "--lambda", "0.5",
]


@pytest.fixture(scope="module")
def wav_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("wavs")
    toydata.make_toy_corpus(d, n_clips=3, seconds=1.0, seed=1)
    return d


@pytest.fixture(scope="module")
def dataset(tmp_path_factory, wav_dir):
    out = tmp_path_factory.mktemp("ds")
    assert main(["prepare", str(wav_dir), str(out), "--n-mels", "16"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("run")
    code = main(
        ["train", str(dataset / "manifest.json"), str(out), "--steps", "4", "--seed", "0"]
        + FAST_TRAIN
    )
    assert code == 0
    return out


class TestPrepare:
    def test_manifest_and_mels_written(self, dataset):
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert len(manifest["entries"]) == 3
        assert manifest["dsp"]["n_mels"] == 16
        for entry in manifest["entries"]:
            assert (dataset / entry["path"]).exists()

    def test_empty_dir_exit_2(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["prepare", str(empty), str(tmp_path / "out")]) == 2

    def test_rerun_byte_identical(self, wav_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["prepare", str(wav_dir), str(a), "--n-mels", "16"]) == 0
        assert main(["prepare", str(wav_dir), str(b), "--n-mels", "16"]) == 0
        for pa in sorted(a.iterdir()):
            assert pa.read_bytes() == (b / pa.name).read_bytes()


class TestTrain:
    def test_log_and_checkpoint(self, trained):
        lines = (trained / "train_log.jsonl").read_text().splitlines()
        header = json.loads(lines[0])
        assert header["type"] == "header"
        assert "tau_update" in header
        steps = [json.loads(line) for line in lines[1:]]
        assert [s["step"] for s in steps] == [1, 2, 3, 4]
        assert (trained / "checkpoint_final.ckpt").exists()

    def test_resume_continues_log(self, dataset, trained, tmp_path):
        out = tmp_path / "resumed"
        out.mkdir()
        ckpt = trained / "checkpoint_final.ckpt"
        code = main(
            [
                "train", str(dataset / "manifest.json"), str(out),
                "--resume", str(ckpt), "--steps", "6",
            ]
        )
        assert code == 0
        steps = [
            json.loads(line)["step"]
            for line in (out / "train_log.jsonl").read_text().splitlines()
            if json.loads(line)["type"] == "step"
        ]
        assert steps == [5, 6]

    def test_lambda_zero_logs_zero_cycle(self, dataset, tmp_path):
        out = tmp_path / "nocycle"
        args = [a for a in FAST_TRAIN]
        args[args.index("--lambda") + 1] = "0"
        assert (
            main(
                ["train", str(dataset / "manifest.json"), str(out), "--steps", "2"]
                + args
            )
            == 0
        )
        steps = [
            json.loads(line)
            for line in (out / "train_log.jsonl").read_text().splitlines()
        ][1:]
        assert all(s["loss_cycle"] == 0.0 for s in steps)

    def test_bad_manifest_exit_2(self, tmp_path):
        missing = tmp_path / "nope.json"
        assert main(["train", str(missing), str(tmp_path / "o")]) == 2

    def test_divergence_exit_3_keeps_last_good_checkpoint(self, dataset, trained, tmp_path):
        import torch

        from unagan.training import load_checkpoint

        poisoned = tmp_path / "poisoned.ckpt"
        trainer = load_checkpoint(trained / "checkpoint_final.ckpt")
        with torch.no_grad():
            trainer.g.heads[-1].conv.bias.fill_(float("nan"))
        trainer.save_checkpoint(poisoned)

        out = tmp_path / "diverged"
        code = main(
            ["train", str(dataset / "manifest.json"), str(out),
             "--resume", str(poisoned), "--steps", "8"]
        )
        assert code == 3
        records = [
            json.loads(line)
            for line in (out / "train_log.jsonl").read_text().splitlines()
        ]
        assert records[-1]["type"] == "diverged"
        assert poisoned.exists()  # the resumed-from checkpoint is untouched


class TestGenerate:
    def test_writes_requested_mels(self, trained, tmp_path):
        out = tmp_path / "gen"
        ckpt = trained / "checkpoint_final.ckpt"
        code = main(
            ["generate", str(ckpt), str(out), "--n-samples", "2", "--frames", "30",
             "--seed", "5"]
        )
        assert code == 0
        files = sorted(out.glob("*.mel"))
        assert len(files) == 2
        for f in files:
            assert dsp.read_mel(f).shape == (16, 30)

    def test_single_frame(self, trained, tmp_path):
        out = tmp_path / "one"
        ckpt = trained / "checkpoint_final.ckpt"
        assert main(["generate", str(ckpt), str(out), "--frames", "1"]) == 0
        assert dsp.read_mel(next(out.glob("*.mel"))).shape == (16, 1)

    def test_same_seed_byte_identical(self, trained, tmp_path):
        ckpt = trained / "checkpoint_final.ckpt"
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert (
                main(
                    ["generate", str(ckpt), str(out), "--n-samples", "2",
                     "--frames", "20", "--seed", "9"]
                )
                == 0
            )
        for pa in sorted(a.glob("*.mel")):
            assert pa.read_bytes() == (b / pa.name).read_bytes()

    def test_wav_preview(self, trained, tmp_path):
        out = tmp_path / "wav"
        ckpt = trained / "checkpoint_final.ckpt"
        assert (
            main(["generate", str(ckpt), str(out), "--frames", "16", "--wav",
                  "--gl-iters", "2"])
            == 0
        )
        assert len(list(out.glob("*.wav"))) == 1

    def test_mismatched_config_exit_4(self, trained, tmp_path):
        ckpt = trained / "checkpoint_final.ckpt"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dsp": {"n_mels": 16, "n_fft": 2048}}))
        code = main(
            ["generate", str(ckpt), str(tmp_path / "o"), "--config", str(cfg)]
        )
        assert code == 4

    def test_corrupt_checkpoint_exit_4(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        assert main(["generate", str(bad), str(tmp_path / "o")]) == 4


class TestEval:
    def test_self_evaluation_ndb_zero(self, dataset, tmp_path):
        report_path = tmp_path / "report.json"
        code = main(
            ["eval", str(dataset / "manifest.json"), str(dataset),
             "--n-bins", "3", "--patch-frames", "8", "--patch-stride", "8",
             "--report", str(report_path)]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["ndb"] == 0
        assert report["jsd"] == 0.0

    def test_report_round_trips(self, dataset, trained, tmp_path):
        gen_dir = tmp_path / "gen"
        ckpt = trained / "checkpoint_final.ckpt"
        assert (
            main(["generate", str(ckpt), str(gen_dir), "--n-samples", "3",
                  "--frames", "32", "--seed", "2"])
            == 0
        )
        code = main(
            ["eval", str(dataset / "manifest.json"), str(gen_dir),
             "--n-bins", "3", "--patch-frames", "8", "--patch-stride", "8"]
        )
        assert code == 0
        from unagan.metrics import report_from_json

        report = report_from_json((gen_dir / "bin_report.json").read_text())
        assert 0 <= report.ndb <= 3
        assert 0.0 <= report.jsd <= 1.0

    def test_deterministic_reports(self, dataset, tmp_path):
        a, b = tmp_path / "ra.json", tmp_path / "rb.json"
        for path in (a, b):
            assert (
                main(["eval", str(dataset / "manifest.json"), str(dataset),
                      "--n-bins", "3", "--patch-frames", "8", "--patch-stride", "8",
                      "--seed", "4", "--report", str(path)])
                == 0
            )
        assert a.read_bytes() == b.read_bytes()

    def test_too_few_vectors_exit_2(self, dataset, tmp_path):
        assert (
            main(["eval", str(dataset / "manifest.json"), str(dataset),
                  "--n-bins", "5000"])
            == 2
        )

    def test_empty_generated_dir_exit_2(self, dataset, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert main(["eval", str(dataset / "manifest.json"), str(empty)]) == 2


class TestPlot:
    def test_image_dimensions(self, tmp_path):
        mel = np.random.default_rng(0).standard_normal((80, 100)).astype(np.float32)
        mel_path = tmp_path / "m.mel"
        dsp.write_mel(mel, mel_path)
        out = tmp_path / "m.png"
        assert main(["plot", str(mel_path), str(out)]) == 0
        img = Image.open(out)
        assert img.size == (100, 80)
        assert img.mode == "L"

    def test_constant_mel_uniform_image(self, tmp_path):
        mel = np.full((8, 12), 3.0, dtype=np.float32)
        mel_path = tmp_path / "c.mel"
        dsp.write_mel(mel, mel_path)
        out = tmp_path / "c.png"
        assert main(["plot", str(mel_path), str(out)]) == 0
        pixels = np.asarray(Image.open(out))
        assert pixels.shape == (8, 12)
        assert len(np.unique(pixels)) == 1

    def test_min_max_map_to_black_white(self):
        mel = np.array([[0.0, 5.0], [2.5, 2.5]])
        img = mel_to_image(mel)
        assert img.min() == 0 and img.max() == 255
        flat = mel_to_image(mel).astype(float)
        assert flat[np.unravel_index(0, flat.shape)] in (0.0, 127.0, 128.0, 255.0)

    def test_bad_mel_exit_2(self, tmp_path):
        bad = tmp_path / "bad.mel"
        bad.write_bytes(b"XXXX1234")
        assert main(["plot", str(bad), str(tmp_path / "x.png")]) == 2


class TestEntrypoint:
    def test_console_script_help(self):
        import subprocess
        import sys

        proc = subprocess.run(
            [sys.executable, "-m", "unagan.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        for sub in ("prepare", "train", "generate", "eval", "plot"):
            assert sub in proc.stdout

    def test_every_flag_has_help(self):
        from unagan.cli import build_parser

        parser = build_parser()
        value_flags = []
        for action in parser._subparsers._group_actions[0].choices.values():
            for arg in action._actions:
                if arg.option_strings and arg.option_strings[0] not in ("-h", "--help"):
                    assert arg.help, arg.option_strings
                    if arg.type in (int, float) and arg.option_strings[0] != "--seed":
                        value_flags.append(arg.help)
        # Numeric tunables spell out their effective default in the help text.
        assert all(any(ch.isdigit() for ch in h) for h in value_flags)


class TestConfigFile:
    def test_unknown_section_rejected(self, wav_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dsppp": {}}))
        assert (
            main(["prepare", str(wav_dir), str(tmp_path / "o"), "--config", str(cfg)])
            == 2
        )

    def test_unknown_key_rejected(self, wav_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dsp": {"bogus_key": 1}}))
        assert (
            main(["prepare", str(wav_dir), str(tmp_path / "o"), "--config", str(cfg)])
            == 2
        )

    def test_flags_override_file(self, wav_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dsp": {"n_mels": 24}}))
        out = tmp_path / "o"
        assert (
            main(["prepare", str(wav_dir), str(out), "--config", str(cfg),
                  "--n-mels", "16"])
            == 0
        )
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["dsp"]["n_mels"] == 16
