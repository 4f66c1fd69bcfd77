"""Adversarial SR training, PSNR-oriented pre-training, and checkpoints.

Every iteration does one discriminator pass then one generator pass: the
active discriminators (image + gradient-map critics for spsr-g, the
structure-feature critic for spsr-p/j) step on their relativistic losses
with the generator outputs detached, then the generator steps on the full
weighted objective, whose adversarial terms recompute the logits with
gradients flowing back to the generator only. The structure extractor is
loaded once and stays frozen; its parameters never enter an optimizer.

Learning rates follow a piecewise-constant schedule, halving at each
milestone for both sides. All randomness in the loop flows through one
seeded Generator, whose state rides along in checkpoints, so a run of n
steps and a run of k steps + save/load + n-k steps produce bit-identical
parameters in single-worker mode.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import torch

from .blocks import seeded_rng
from .checkpointing import load_checkpoint, pack_models, save_checkpoint, unpack_models
from .critics import Discriminator, PerceptualExtractor, discriminate
from .data_pipeline import sample_patch_batch
from .errors import CheckpointError, ConfigError, DivergenceError
from .generator import Generator
from .gradient_ops import extract_gradient_map
from .losses import (LossModels, LossWeights, VARIANTS, pixel_l1,
                     ragan_d_loss, standard_d_loss, total_generator_loss)
from .nse import NSE, NSEConfig, extract_structure_features

__all__ = [
    "TrainConfig", "TrainSession", "lr_at", "pretrain_psnr", "train_spsr",
    "load_frozen_nse", "save_checkpoint", "load_checkpoint",
]

logger = logging.getLogger("spsr.train")

DEFAULT_MILESTONES = (50000, 100000, 200000, 300000)


@dataclass
class TrainConfig:
    variant: str = "spsr-g"
    total_iters: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    lr_milestones: Sequence[int] = DEFAULT_MILESTONES
    lr_decay_factor: float = 0.5
    relativistic: bool = True
    init_from: Optional[str] = None
    nse_checkpoint: Optional[str] = None
    seed: int = 0
    checkpoint_every: int = 0  # 0: only the final checkpoint
    log_every: int = 1

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.total_iters < 1:
            raise ConfigError("total_iters must be positive")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be positive")
        milestones = list(self.lr_milestones)
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ConfigError(f"lr_milestones must increase strictly: {milestones}")
        if self.variant in ("spsr-p", "spsr-j") and not self.nse_checkpoint:
            raise ConfigError(f"variant {self.variant} requires nse_checkpoint")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError("lr_decay_factor must be in (0, 1]")


def lr_at(base: float, iteration: int, milestones: Sequence[int] = DEFAULT_MILESTONES,
          factor: float = 0.5) -> float:
    """Piecewise-constant rate: multiplied by ``factor`` at each milestone."""
    return base * factor ** sum(1 for m in milestones if iteration >= m)


def load_frozen_nse(path: str) -> NSE:
    """Rebuild the structure extractor from a checkpoint and freeze it.

    The architecture comes from the checkpoint's config echo (falling back
    to the stock layout), so extractor and weights always agree.
    """
    state = load_checkpoint(path)
    echo = state.get("config", {}).get("nse", {})
    config = NSEConfig(**echo) if echo else NSEConfig()
    nse = NSE(config)
    unpack_models(state["tensors"], {"nse": nse})
    for p in nse.parameters():
        p.requires_grad_(False)
    nse.eval()
    return nse


def _check_finite(scalars: dict, iteration: int) -> None:
    for name, value in scalars.items():
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss term {name} at iteration {iteration}")


class TrainSession:
    """Owns all model/optimizer/rng state for one training run."""

    def __init__(self, *, config: TrainConfig, weights: LossWeights,
                 generator: Generator, perceptual: PerceptualExtractor,
                 dataset: Sequence, disc_image: Discriminator | None = None,
                 disc_gm: Discriminator | None = None,
                 disc_sf: Discriminator | None = None, nse: NSE | None = None,
                 batch_size: int = 15, lr_patch: int = 32, scale: int = 4,
                 augment: bool = True):
        config.validate()
        weights.validate()
        self.config = config
        self.weights = weights
        self.generator = generator
        self.dataset = dataset
        self.batch_size = batch_size
        self.lr_patch = lr_patch
        self.scale = scale
        self.augment = augment
        self.iteration = 0

        if config.variant == "spsr-g":
            if disc_image is None or disc_gm is None:
                raise ConfigError("spsr-g needs disc_image and disc_gm")
            self.discriminators = {"disc_image": disc_image, "disc_gm": disc_gm}
        else:
            if disc_sf is None:
                raise ConfigError(f"{config.variant} needs disc_sf")
            if nse is None:
                raise ConfigError(f"{config.variant} needs a structure extractor")
            self.discriminators = {"disc_sf": disc_sf}
        self.nse = nse
        if nse is not None:
            for p in nse.parameters():
                p.requires_grad_(False)
        self.models = LossModels(perceptual=perceptual, disc_image=disc_image,
                                 disc_gm=disc_gm, disc_sf=disc_sf, nse=nse)

        adam = dict(betas=(config.beta1, config.beta2), eps=config.adam_eps)
        self.optim_g = torch.optim.Adam(generator.parameters(), lr=config.lr_g, **adam)
        self.optim_d = {name: torch.optim.Adam(d.parameters(), lr=config.lr_d, **adam)
                        for name, d in self.discriminators.items()}
        self.sampler = seeded_rng(config.seed)
        if config.init_from:
            state = load_checkpoint(config.init_from)
            unpack_models(state["tensors"], {"generator": generator})

    def _apply_lr(self) -> float:
        ms, fac = self.config.lr_milestones, self.config.lr_decay_factor
        lr_g = lr_at(self.config.lr_g, self.iteration, ms, fac)
        for group in self.optim_g.param_groups:
            group["lr"] = lr_g
        lr_d = lr_at(self.config.lr_d, self.iteration, ms, fac)
        for optim in self.optim_d.values():
            for group in optim.param_groups:
                group["lr"] = lr_d
        return lr_g

    def _critic_inputs(self, name: str, sr_detached: torch.Tensor, hr: torch.Tensor):
        if name == "disc_image":
            return hr, sr_detached
        if name == "disc_gm":
            return extract_gradient_map(hr), extract_gradient_map(sr_detached)
        return (extract_structure_features(self.nse, hr),
                extract_structure_features(self.nse, sr_detached))

    def step(self) -> dict:
        """One training iteration; returns the scalar log record."""
        self.iteration += 1
        lr_now = self._apply_lr()
        batch = sample_patch_batch(self.dataset, self.batch_size, self.lr_patch,
                                   rng=self.sampler, scale=self.scale,
                                   augment=self.augment)
        outputs = self.generator(batch.lr)
        scalars = {}

        sr_detached = outputs.sr_image.detach()
        d_loss_fn = ragan_d_loss if self.config.relativistic else standard_d_loss
        for name, disc in self.discriminators.items():
            real_in, fake_in = self._critic_inputs(name, sr_detached, batch.hr)
            d_loss = d_loss_fn(discriminate(disc, real_in), discriminate(disc, fake_in))
            self.optim_d[name].zero_grad()
            d_loss.backward()
            self.optim_d[name].step()
            scalars[f"d_{name.removeprefix('disc_')}"] = float(d_loss.detach())

        total, terms = total_generator_loss(self.config.variant, outputs, batch.hr,
                                            self.weights, self.models,
                                            self.config.relativistic)
        self.optim_g.zero_grad()
        total.backward()
        self.optim_g.step()
        scalars.update({name: float(value.detach()) for name, value in terms.items()})
        _check_finite(scalars, self.iteration)
        scalars["lr"] = lr_now
        return scalars

    def config_echo(self) -> dict:
        echo = asdict(self.config)
        echo["lr_milestones"] = list(self.config.lr_milestones)
        return {"train": echo, "losses": asdict(self.weights)}

    def checkpoint_state(self) -> dict:
        models = {"generator": self.generator, **self.discriminators}
        if self.nse is not None:
            models["nse"] = self.nse
        return {
            "iteration": self.iteration,
            "tensors": pack_models(models),
            "optim": {"generator": self.optim_g.state_dict(),
                      **{name: opt.state_dict() for name, opt in self.optim_d.items()}},
            "rng": {"sampler": self.sampler.get_state()},
            "config": self.config_echo(),
        }

    def load_state(self, state: dict) -> None:
        """Resume from a checkpoint produced by checkpoint_state()."""
        models = {"generator": self.generator, **self.discriminators}
        unpack_models(state["tensors"], models)
        for name in models:
            if name not in state["optim"]:
                raise CheckpointError(f"checkpoint lacks optimizer state for {name}")
        self.optim_g.load_state_dict(state["optim"]["generator"])
        for name, optim in self.optim_d.items():
            optim.load_state_dict(state["optim"][name])
        self.sampler.set_state(state["rng"]["sampler"])
        self.iteration = state["iteration"]


def format_log_line(iteration: int, scalars: dict) -> str:
    lr_value = scalars.get("lr")
    parts = [f"iter={iteration}"]
    parts += [f"loss/{name}={value:.6g}" for name, value in scalars.items() if name != "lr"]
    if lr_value is not None:
        parts.append(f"lr={lr_value:.6g}")
    return " ".join(parts)


def train_spsr(session: TrainSession,
               log_fn: Optional[Callable[[str], None]] = None) -> Iterator[dict]:
    """Run to total_iters, yielding checkpoint states on schedule.

    A state is yielded every config.checkpoint_every iterations (when set)
    and always at the end; consume the stream to drive the run.
    """
    cfg = session.config
    log_fn = log_fn or logger.info
    while session.iteration < cfg.total_iters:
        scalars = session.step()
        if cfg.log_every and session.iteration % cfg.log_every == 0:
            log_fn(format_log_line(session.iteration, scalars))
        at_end = session.iteration >= cfg.total_iters
        if at_end or (cfg.checkpoint_every
                      and session.iteration % cfg.checkpoint_every == 0):
            yield session.checkpoint_state()


def pretrain_psnr(generator: Generator, dataset: Sequence, config: TrainConfig,
                  *, batch_size: int = 15, lr_patch: int = 32, scale: int = 4,
                  augment: bool = True,
                  log_fn: Optional[Callable[[str], None]] = None) -> dict:
    """Train the generator on pixel_l1 alone; returns the final checkpoint
    state, suitable as init_from for adversarial training."""
    config.validate()
    log_fn = log_fn or logger.info
    optim = torch.optim.Adam(generator.parameters(), lr=config.lr_g,
                             betas=(config.beta1, config.beta2), eps=config.adam_eps)
    sampler = seeded_rng(config.seed)
    history = []
    for iteration in range(1, config.total_iters + 1):
        lr_now = lr_at(config.lr_g, iteration, config.lr_milestones,
                       config.lr_decay_factor)
        for group in optim.param_groups:
            group["lr"] = lr_now
        batch = sample_patch_batch(dataset, batch_size, lr_patch, rng=sampler,
                                   scale=scale, augment=augment)
        loss = pixel_l1(generator(batch.lr).sr_image, batch.hr)
        optim.zero_grad()
        loss.backward()
        optim.step()
        value = float(loss.detach())
        _check_finite({"pix_i": value}, iteration)
        history.append(value)
        if config.log_every and iteration % config.log_every == 0:
            log_fn(format_log_line(iteration, {"pix_i": value, "lr": lr_now}))
    echo = asdict(config)
    echo["lr_milestones"] = list(config.lr_milestones)
    return {
        "iteration": config.total_iters,
        "tensors": pack_models({"generator": generator}),
        "optim": {"generator": optim.state_dict()},
        "rng": {"sampler": sampler.get_state()},
        "config": {"train": echo},
        "loss_history": history,
    }
