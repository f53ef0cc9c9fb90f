"""Adversarial training with equilibrium balancing and cycle regularization.

The discriminator is an autoencoder scored by mean absolute reconstruction
error L(M) = mean |D(M) - M|. Per step:

    loss_d     = L(X) - tau * L(G(Z))          (G's output held constant)
    loss_g     = L(G(Z))                        (D's parameters held constant)
    loss_cycle = mean|E(G(Z)) - Z| + mean|G(E(X)) - X|
    loss_g'    = loss_g + lambda * loss_cycle
    tau       <- clamp(tau + beta * (gamma * L(X) - L(G(Z))), 0, 1)

Both L1 terms of the cycle loss are element means, so lambda's scale does
not depend on segment length or batch size. The tau update reads L(X) and
L(G(Z)) from the updated discriminator (noted in the log header).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import dsp, tensorio
from .blocks import Discriminator, Encoder
from .data import DatasetManifest, load_corpus
from .errors import CheckpointError, FormatError, InvalidInput, ShapeError, TrainingDiverged
from .generator import Generator, GeneratorConfig

CHECKPOINT_MAGIC = b"UNAG"
CHECKPOINT_VERSION = 1
ADAM_BETAS = (0.5, 0.999)
ADAM_EPS = 1e-8
TAU_CONVENTION = "post-update discriminator outputs"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 5
    total_steps: int = 2000  # desk-scale default; full-scale runs pass 100000
    beta: float = 0.001  # tau step gain
    gamma: float = 1.0  # diversity ratio
    lambda_: float = 1.0  # cycle-loss weight; 0 disables the encoder path
    segment_frames: int = 64
    seed: int = 0
    checkpoint_interval: int = 500

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.learning_rate < 0:
            raise InvalidInput(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidInput(f"batch_size must be >= 1, got {self.batch_size}")
        if self.beta <= 0:
            raise InvalidInput(f"beta must be > 0, got {self.beta}")
        if not (0 < self.gamma <= 1):
            raise InvalidInput(f"gamma must be in (0, 1], got {self.gamma}")
        if self.lambda_ < 0:
            raise InvalidInput(f"lambda must be >= 0, got {self.lambda_}")
        if self.segment_frames < 1:
            raise InvalidInput(f"segment_frames must be >= 1, got {self.segment_frames}")
        if self.total_steps < 0 or self.checkpoint_interval < 1:
            raise InvalidInput("total_steps must be >= 0 and checkpoint_interval >= 1")

    def to_dict(self) -> dict:
        d = {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "total_steps": self.total_steps,
            "beta": self.beta,
            "gamma": self.gamma,
            "lambda": self.lambda_,
            "segment_frames": self.segment_frames,
            "seed": self.seed,
            "checkpoint_interval": self.checkpoint_interval,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        return cls(**d)


@dataclass
class EquilibriumState:
    tau: float = 0.0
    step: int = 0


@dataclass
class StepMetrics:
    step: int
    loss_d: float
    loss_g: float
    loss_cycle: float
    l_x: float
    l_gz: float
    tau: float
    m_conv: float

    def to_dict(self) -> dict:
        return {
            "type": "step",
            "step": self.step,
            "loss_d": self.loss_d,
            "loss_g": self.loss_g,
            "loss_cycle": self.loss_cycle,
            "l_x": self.l_x,
            "l_gz": self.l_gz,
            "tau": self.tau,
            "m_conv": self.m_conv,
        }


def reconstruction_error(m: torch.Tensor, d_out: torch.Tensor) -> torch.Tensor:
    """L(M): mean absolute difference between a batch and its reconstruction."""
    if m.shape != d_out.shape:
        raise ShapeError(f"shape mismatch: {tuple(m.shape)} vs {tuple(d_out.shape)}")
    return (d_out - m).abs().mean()


def discriminator_loss(
    d: Discriminator, x: torch.Tensor, x_fake: torch.Tensor, tau: float
) -> torch.Tensor:
    """L(X) - tau * L(G(Z)); the generated batch is detached so gradients
    reach the discriminator only."""
    xf = x_fake.detach()
    return reconstruction_error(x, d(x)) - tau * reconstruction_error(xf, d(xf))


def generator_loss(d: Discriminator, x_fake: torch.Tensor) -> torch.Tensor:
    """L(G(Z)) with gradients flowing through the generator's output."""
    return reconstruction_error(x_fake, d(x_fake))


def cycle_loss(
    g: Generator,
    e: Encoder,
    x: torch.Tensor,
    z: torch.Tensor,
    x_fake: torch.Tensor,
) -> torch.Tensor:
    """mean|E(G(Z)) - Z| + mean|G(E(X)) - X|, both as element means."""
    return (e(x_fake) - z).abs().mean() + (g(e(x)) - x).abs().mean()


def total_generator_loss(
    g: Generator,
    d: Discriminator,
    e: Encoder | None,
    x: torch.Tensor,
    z: torch.Tensor,
    x_fake: torch.Tensor,
    lambda_: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
    """Returns (total, loss_g, loss_cycle); loss_cycle is None when disabled."""
    loss_g = generator_loss(d, x_fake)
    if lambda_ == 0:
        return loss_g, loss_g, None
    if e is None:
        raise InvalidInput("cycle loss enabled but no encoder given")
    loss_c = cycle_loss(g, e, x, z, x_fake)
    return loss_g + lambda_ * loss_c, loss_g, loss_c


def update_tau(state: EquilibriumState, l_x: float, l_gz: float, cfg: TrainConfig) -> EquilibriumState:
    """tau' = clamp(tau + beta * (gamma * L(X) - L(G(Z))), 0, 1); step increments."""
    tau = state.tau + cfg.beta * (cfg.gamma * l_x - l_gz)
    return EquilibriumState(tau=min(1.0, max(0.0, tau)), step=state.step + 1)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng((seed, step))


class Trainer:
    """Owns the three models, their optimizers, and the equilibrium state.

    All randomness is drawn from a per-step generator derived from
    (seed, step index), so a run resumed from a checkpoint replays exactly
    the metrics of an uninterrupted run.
    """

    def __init__(
        self,
        corpus: list[np.ndarray],
        gen_cfg: GeneratorConfig,
        train_cfg: TrainConfig,
        dsp_cfg: dsp.DspConfig | None = None,
        stats: dsp.NormStats | None = None,
    ):
        if not corpus:
            raise InvalidInput("empty training corpus")
        s = gen_cfg.downsample_factor
        if train_cfg.segment_frames % s:
            raise InvalidInput(
                f"segment_frames={train_cfg.segment_frames} not divisible by "
                f"downsample factor {s}"
            )
        for mel in corpus:
            if mel.shape[0] != gen_cfg.mel_dims:
                raise ShapeError(
                    f"corpus mel has {mel.shape[0]} bands, generator expects {gen_cfg.mel_dims}"
                )
        self.corpus = [np.asarray(m, dtype=np.float32) for m in corpus]
        self.gen_cfg = gen_cfg
        self.cfg = train_cfg
        self.dsp_cfg = dsp_cfg if dsp_cfg is not None else dsp.DspConfig(n_mels=gen_cfg.mel_dims)
        self.stats = stats if stats is not None else dsp.NormStats.identity(gen_cfg.mel_dims)
        pad = (dsp.silence_value(self.dsp_cfg) - self.stats.mean) / self.stats.std
        self.pad_value = pad.astype(np.float32)

        torch.manual_seed(train_cfg.seed)
        self.g = Generator(gen_cfg)
        self.d = Discriminator(mel_bands=gen_cfg.mel_dims)
        self.e = Encoder(
            mel_bands=gen_cfg.mel_dims,
            noise_dims=gen_cfg.noise_dims,
            downsample_factor=s,
        )
        self.opt_d = torch.optim.Adam(
            self.d.parameters(), lr=train_cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
        )
        self.opt_g = torch.optim.Adam(
            list(self.g.parameters()) + list(self.e.parameters()),
            lr=train_cfg.learning_rate,
            betas=ADAM_BETAS,
            eps=ADAM_EPS,
        )
        self.state = EquilibriumState()

    @classmethod
    def from_manifest(
        cls, manifest: DatasetManifest, gen_cfg: GeneratorConfig, train_cfg: TrainConfig
    ) -> "Trainer":
        corpus = load_corpus(manifest, normalized=True)
        return cls(corpus, gen_cfg, train_cfg, manifest.dsp_config, manifest.stats)

    def sample_batch(self, rng: np.random.Generator) -> np.ndarray:
        segs = []
        for _ in range(self.cfg.batch_size):
            clip = self.corpus[int(rng.integers(0, len(self.corpus)))]
            seg, _ = dsp.sample_segment(clip, self.cfg.segment_frames, rng, self.pad_value)
            segs.append(seg)
        return np.stack(segs)

    def _apply_grads(self, opt: torch.optim.Optimizer, params, grads):
        for p, grad in zip(params, grads):
            p.grad = grad
        opt.step()
        opt.zero_grad(set_to_none=True)

    def step(self) -> StepMetrics:
        """One alternating update: D on loss_d, then G (and E when enabled)
        on loss_g', then the tau update from post-update measurements."""
        cfg = self.cfg
        rng = _step_rng(cfg.seed, self.state.step)
        x = torch.from_numpy(self.sample_batch(rng))
        t_prime = cfg.segment_frames // self.gen_cfg.downsample_factor
        z = torch.from_numpy(
            rng.standard_normal(
                (cfg.batch_size, self.gen_cfg.noise_dims, t_prime)
            ).astype(np.float32)
        )

        self.g.train()
        self.d.train()
        self.e.train()
        x_fake = self.g(z)

        loss_d = discriminator_loss(self.d, x, x_fake, self.state.tau)
        d_params = list(self.d.parameters())
        self._apply_grads(self.opt_d, d_params, torch.autograd.grad(loss_d, d_params))

        e = self.e if cfg.lambda_ > 0 else None
        total, loss_g, loss_c = total_generator_loss(
            self.g, self.d, e, x, z, x_fake, cfg.lambda_
        )
        ge_params = list(self.g.parameters())
        if e is not None:
            ge_params += list(self.e.parameters())
        self._apply_grads(self.opt_g, ge_params, torch.autograd.grad(total, ge_params))

        with torch.no_grad():
            l_x = reconstruction_error(x, self.d(x)).item()
        l_gz = loss_g.item()

        self.state = update_tau(self.state, l_x, l_gz, cfg)
        metrics = StepMetrics(
            step=self.state.step,
            loss_d=loss_d.item(),
            loss_g=l_gz,
            loss_cycle=loss_c.item() if loss_c is not None else 0.0,
            l_x=l_x,
            l_gz=l_gz,
            tau=self.state.tau,
            m_conv=l_x + abs(cfg.gamma * l_x - l_gz),
        )
        values = [metrics.loss_d, metrics.loss_g, metrics.loss_cycle, l_x, l_gz]
        if not all(np.isfinite(v) for v in values):
            raise TrainingDiverged(f"non-finite loss at step {metrics.step}: {metrics.to_dict()}")
        return metrics

    def log_header(self) -> dict:
        return {
            "type": "header",
            "tau_update": TAU_CONVENTION,
            "train": self.cfg.to_dict(),
            "generator": self.gen_cfg.to_dict(),
            "dsp": self.dsp_cfg.to_dict(),
        }

    # -- checkpointing -------------------------------------------------------

    def _named_params(self, opt_name: str):
        if opt_name == "d":
            return [("d." + n, p) for n, p in self.d.named_parameters()]
        pairs = [("g." + n, p) for n, p in self.g.named_parameters()]
        pairs += [("e." + n, p) for n, p in self.e.named_parameters()]
        return pairs

    def _tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, model in (("g", self.g), ("d", self.d), ("e", self.e)):
            for name, tensor in model.state_dict().items():
                out[f"model.{prefix}.{name}"] = tensor.detach().numpy().astype(np.float32)
        for opt_name, opt in (("d", self.opt_d), ("ge", self.opt_g)):
            for pname, p in self._named_params(opt_name):
                st = opt.state.get(p)
                if not st:
                    continue
                out[f"opt.{opt_name}.{pname}.exp_avg"] = st["exp_avg"].numpy().astype(np.float32)
                out[f"opt.{opt_name}.{pname}.exp_avg_sq"] = (
                    st["exp_avg_sq"].numpy().astype(np.float32)
                )
                out[f"opt.{opt_name}.{pname}.step"] = np.float32(st["step"])
        out["equilibrium.tau"] = np.float32(self.state.tau)
        out["equilibrium.step"] = np.float32(self.state.step)
        return out

    def dsp_digest(self) -> bytes:
        return tensorio.digest_of(tensorio.canonical_json(self.dsp_cfg.to_dict()))

    def save_checkpoint(self, path) -> None:
        meta = {
            "train": self.cfg.to_dict(),
            "generator": self.gen_cfg.to_dict(),
            "dsp": self.dsp_cfg.to_dict(),
            "stats": {"mean": self.stats.mean.tolist(), "std": self.stats.std.tolist()},
        }
        tensorio.write_container(
            path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, self.dsp_digest(), meta, self._tensors()
        )

    def _restore_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for prefix, model in (("g", self.g), ("d", self.d), ("e", self.e)):
            sd = model.state_dict()
            fresh = {}
            for name, tensor in sd.items():
                key = f"model.{prefix}.{name}"
                if key not in tensors:
                    raise CheckpointError(f"checkpoint missing tensor {key}")
                arr = tensors[key]
                if tuple(arr.shape) != tuple(tensor.shape):
                    raise CheckpointError(
                        f"{key}: shape {arr.shape} does not match model {tuple(tensor.shape)}"
                    )
                fresh[name] = torch.from_numpy(arr).to(tensor.dtype)
            model.load_state_dict(fresh)
        for opt_name, opt in (("d", self.opt_d), ("ge", self.opt_g)):
            for pname, p in self._named_params(opt_name):
                key = f"opt.{opt_name}.{pname}.exp_avg"
                if key not in tensors:
                    continue
                opt.state[p] = {
                    "step": torch.tensor(
                        float(tensors[f"opt.{opt_name}.{pname}.step"]), dtype=torch.float32
                    ),
                    "exp_avg": torch.from_numpy(tensors[key]),
                    "exp_avg_sq": torch.from_numpy(tensors[f"opt.{opt_name}.{pname}.exp_avg_sq"]),
                }
        self.state = EquilibriumState(
            tau=float(tensors["equilibrium.tau"]), step=int(tensors["equilibrium.step"])
        )


def load_checkpoint(
    path,
    corpus: list[np.ndarray] | None = None,
    expect_dsp: dsp.DspConfig | None = None,
) -> Trainer:
    """Rebuild a Trainer from a checkpoint.

    With no corpus the trainer can generate but not step. If expect_dsp is
    given its digest must match the one stored in the checkpoint.
    """
    try:
        version, digest, meta, tensors = tensorio.read_container(path, CHECKPOINT_MAGIC)
    except FormatError as exc:
        raise CheckpointError(str(exc)) from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if expect_dsp is not None:
        want = tensorio.digest_of(tensorio.canonical_json(expect_dsp.to_dict()))
        if want != digest:
            raise CheckpointError(
                f"{path}: checkpoint was prepared with a different DSP config"
            )
    gen_cfg = GeneratorConfig.from_dict(meta["generator"])
    train_cfg = TrainConfig.from_dict(meta["train"])
    dsp_cfg = dsp.DspConfig.from_dict(meta["dsp"])
    stats = dsp.NormStats(np.array(meta["stats"]["mean"]), np.array(meta["stats"]["std"]))
    placeholder = corpus if corpus is not None else [
        np.zeros((gen_cfg.mel_dims, train_cfg.segment_frames), dtype=np.float32)
    ]
    trainer = Trainer(placeholder, gen_cfg, train_cfg, dsp_cfg, stats)
    trainer._restore_tensors(tensors)
    return trainer
