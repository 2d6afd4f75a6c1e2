"""Weighted BCE reconstruction loss, WGAN-GP adversarial loss and the training loop."""

from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .checkpoint import Checkpoint, save_checkpoint
from .condition import encode_batch
from .model import Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, block_masks

PROB_EPS = 1e-7
DEFAULT_ALPHA = 0.85
DEFAULT_BETA = 0.8

LOG_FIELDS = ("step", "epoch", "lr", "l_ae", "l_gan_g", "l_gan_d", "gp", "total", "wall_time")


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss or gradient goes non-finite; carries the last good checkpoint."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


def loss_ae(target, output, alpha: float):
    """Per-voxel mean of ``-a t log(o) - (1 - a)(1 - t) log(1 - o)``."""
    if target.shape != output.shape:
        raise ValueError(f"shape mismatch: target {tuple(target.shape)} vs output {tuple(output.shape)}")
    o = output.clamp(PROB_EPS, 1 - PROB_EPS)
    t = target.to(o.dtype)
    per_voxel = -alpha * t * torch.log(o) - (1 - alpha) * (1 - t) * torch.log1p(-o)
    return per_voxel.mean()


def loss_total(l_ae, l_gan_g, beta: float):
    return beta * l_ae + (1 - beta) * l_gan_g


@dataclass
class GanLosses:
    d_loss: torch.Tensor
    g_loss: torch.Tensor
    gp: torch.Tensor
    score_real: torch.Tensor
    score_fake: torch.Tensor


def gradient_penalty(critic, real, fake, gp_lambda: float, eps=None, generator=None):
    """``lambda * mean((||grad critic(x_hat)||_2 - 1)^2)`` at ``x_hat = eps*real + (1-eps)*fake``."""
    b = real.shape[0]
    if eps is None:
        eps = torch.rand(b, generator=generator, dtype=real.dtype, device=real.device)
    eps = eps.reshape(b, *([1] * (real.dim() - 1)))
    x_hat = (eps * real + (1 - eps) * fake).detach().requires_grad_(True)
    scores = critic(x_hat)
    grad = None
    # a critic that ignores its input has zero gradient
    if scores.requires_grad:
        (grad,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(x_hat)
    if not torch.isfinite(grad).all():
        raise NonFiniteLossError("non-finite critic gradient at interpolated samples")
    norms = grad.reshape(b, -1).norm(2, dim=1)
    return gp_lambda * ((norms - 1) ** 2).mean()


def loss_gan(critic, real, fake, gp_lambda: float = 10.0, eps=None, generator=None) -> GanLosses:
    """WGAN-GP critic and generator losses for one batch.

    ``critic`` maps a batch of grids to one score each (condition masks are
    bound inside it and held fixed).
    """
    score_real = critic(real)
    score_fake = critic(fake)
    gp = gradient_penalty(critic, real, fake, gp_lambda, eps, generator) if gp_lambda else real.new_zeros(())
    d_loss = score_fake.mean() - score_real.mean() + gp
    g_loss = -score_fake.mean()
    return GanLosses(d_loss, g_loss, gp, score_real, score_fake)


@dataclass
class TrainConfig:
    alpha: float
    beta: float
    gp_lambda: float = 10.0
    batch_size: int = 8
    lr_initial: float = 5e-4
    lr_after_epoch1: float = 1e-4
    epochs: int = 1
    critic_steps_per_gen_step: int = 1
    seed: int = 0
    max_steps: int | None = None
    adam_betas: tuple = (0.9, 0.999)

    def __post_init__(self):
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ValueError(f"adam_betas must be two values in [0, 1), got {self.adam_betas}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.gp_lambda < 0:
            raise ValueError("gp_lambda must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.critic_steps_per_gen_step < 1:
            raise ValueError("batch_size, epochs and critic_steps_per_gen_step must be >= 1")

    def lr_for_epoch(self, epoch: int) -> float:
        return self.lr_initial if epoch == 0 else self.lr_after_epoch1


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("train log steps must increase")
        self.records.append({k: record[k] for k in LOG_FIELDS})

    def __len__(self):
        return len(self.records)

    def to_lines(self) -> list[str]:
        return [json.dumps(r) for r in self.records]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")

    @classmethod
    def read(cls, path) -> "TrainLog":
        log = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    log.append(json.loads(line))
        return log


def _step_generator(seed: int, step: int, sub: int = 0) -> torch.Generator:
    return torch.Generator().manual_seed(int(np.random.SeedSequence([seed, step, sub]).generate_state(1)[0]))


def _snapshot(gen, disc, opt_g, opt_d, epoch, step, config) -> Checkpoint:
    return Checkpoint(
        gen.spec,
        disc.spec,
        {k: v.detach().clone().cpu() for k, v in gen.state_dict().items()},
        {k: v.detach().clone().cpu() for k, v in disc.state_dict().items()},
        {"G": copy.deepcopy(opt_g.state_dict()), "D": copy.deepcopy(opt_d.state_dict())},
        epoch,
        step,
        config.seed,
        asdict(config),
    )


def build_networks(gspec: GeneratorSpec, dspec: DiscriminatorSpec, seed: int):
    torch.manual_seed(seed)
    return Generator(gspec), Discriminator(dspec)


def train(
    dataset,
    gspec: GeneratorSpec,
    dspec: DiscriminatorSpec,
    config: TrainConfig,
    *,
    resume: Checkpoint | None = None,
    checkpoint_path=None,
    log_path=None,
    callback=None,
):
    """Alternate critic and generator Adam updates over ``dataset``.

    Shuffling and interpolation draws are keyed on ``(seed, epoch)`` and
    ``(seed, step)``, so a resumed run replays the uninterrupted one.
    Returns ``(checkpoint, log)``.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if gspec.resolution != dataset.resolution or dspec.resolution != dataset.resolution:
        raise ValueError(
            f"specs are for N={gspec.resolution}/{dspec.resolution} but the dataset has N={dataset.resolution}"
        )
    torch.use_deterministic_algorithms(True, warn_only=True)
    gen, disc = build_networks(gspec, dspec, config.seed)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr_initial, betas=config.adam_betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr_initial, betas=config.adam_betas)
    epoch0, step = 0, 0
    if resume is not None:
        gen.load_state_dict(resume.generator_state)
        disc.load_state_dict(resume.discriminator_state)
        if "G" in resume.optimizer_states:
            opt_g.load_state_dict(resume.optimizer_states["G"])
        if "D" in resume.optimizer_states:
            opt_d.load_state_dict(resume.optimizer_states["D"])
        epoch0, step = resume.epoch, resume.step

    gen.train()
    disc.train()
    inputs = torch.from_numpy(dataset.inputs).float()
    targets = torch.from_numpy(dataset.targets).float()
    conds = torch.from_numpy(encode_batch([tuple(c) for c in dataset.conditions]))
    mask_size = dspec.mask_spatial
    log = TrainLog()
    use_critic = config.beta < 1
    last_good = _snapshot(gen, disc, opt_g, opt_d, epoch0, step, config)
    start = time.perf_counter()
    done = False

    for epoch in range(epoch0, config.epochs):
        lr = config.lr_for_epoch(epoch)
        for opt in (opt_g, opt_d):
            for group in opt.param_groups:
                group["lr"] = lr
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        for lo in range(0, n, config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                done = True
                break
            step += 1
            idx = torch.from_numpy(order[lo : lo + config.batch_size])
            x, t, c = inputs[idx], targets[idx], conds[idx]
            masks = block_masks(c, mask_size)

            def critic(grid):
                return disc(grid, masks)

            # the generator is unchanged during the critic updates, so one forward serves both
            out = gen(x, c)
            d_loss = gp = torch.zeros(())
            if use_critic:
                fake = out.detach()
                for sub in range(config.critic_steps_per_gen_step):
                    losses = loss_gan(critic, t, fake, config.gp_lambda, generator=_step_generator(config.seed, step, sub))
                    d_loss, gp = losses.d_loss, losses.gp
                    if not torch.isfinite(d_loss):
                        raise NonFiniteLossError(f"non-finite critic loss at step {step}", last_good)
                    opt_d.zero_grad()
                    d_loss.backward()
                    opt_d.step()

            l_ae = loss_ae(t, out, config.alpha)
            g_gan = -critic(out).mean() if use_critic else torch.zeros(())
            total = loss_total(l_ae, g_gan, config.beta)
            if not torch.isfinite(total):
                raise NonFiniteLossError(f"non-finite generator loss at step {step}", last_good)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()

            record = {
                "step": step,
                "epoch": epoch,
                "lr": lr,
                "l_ae": float(l_ae.detach()),
                "l_gan_g": float(g_gan.detach()),
                "l_gan_d": float(d_loss.detach()),
                "gp": float(gp.detach()),
                "total": float(total.detach()),
                "wall_time": time.perf_counter() - start,
            }
            log.append(record)
            if callback is not None:
                callback(record)
        if done:
            break
        last_good = _snapshot(gen, disc, opt_g, opt_d, epoch + 1, step, config)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, last_good)

    final = _snapshot(gen, disc, opt_g, opt_d, last_good.epoch if done else config.epochs, step, config)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, final)
    if log_path is not None:
        log.write(log_path)
    return final, log
