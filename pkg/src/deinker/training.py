"""Adversarial training loop.

The generators are updated with an adaptive-moment optimizer and the
discriminator with plain SGD at a lower rate: the discriminator otherwise
overpowers the generators and starves them of gradient. Batching is
unpaired: each pool is shuffled per epoch and drawn without replacement,
the smaller pool cycling. In serial deterministic mode every source of
randomness lives in one serializable RNG, so a resumed run continues
bit-for-bit where the checkpoint left off.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .core import RngStream
from .errors import CheckpointError, ConfigError, DataError, TrainingAborted
from .model import (
    ModelBundle,
    ModelConfig,
    adversarial_losses,
    config_from_dict,
    config_to_dict,
    cycle_loss,
    load_bundle,
    save_bundle,
    to_unit_range,
)

OPTIMIZER_KINDS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    """Schedule and optimizer split. Defaults follow the training recipe:
    150 epochs, batch 64, Adam 2e-4 for generators, SGD 1e-4 for the
    discriminator, no learning-rate decay."""

    epochs: int = 150
    batch_size: int = 64
    gen_optimizer: str = "adam"
    gen_lr: float = 2e-4
    disc_optimizer: str = "sgd"
    disc_lr: float = 1e-4
    augment_flips: bool = True
    seed: int = 0
    checkpoint_every: int = 10
    max_steps: int | None = None
    deterministic: bool = True
    # Optional history buffer for discriminator updates (extension, off by
    # default): > 0 keeps that many past fakes and mixes them in 50/50.
    fake_buffer_size: int = 0

    def __post_init__(self):
        if self.gen_lr <= 0 or self.disc_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.fake_buffer_size < 0:
            raise ConfigError("fake_buffer_size must be >= 0")
        if self.gen_optimizer not in OPTIMIZER_KINDS or self.disc_optimizer not in OPTIMIZER_KINDS:
            raise ConfigError(f"optimizer kinds must be one of {OPTIMIZER_KINDS}")


@dataclass
class LossRow:
    step: int
    loss_d: float
    loss_g_adv: float
    loss_cyc: float

    def as_tuple(self):
        return (self.step, self.loss_d, self.loss_g_adv, self.loss_cyc)


@dataclass
class TrainResult:
    bundle: ModelBundle
    log: list[LossRow]
    checkpoints: list[Path] = field(default_factory=list)


def _make_optimizer(kind: str, params, lr: float) -> torch.optim.Optimizer:
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr, betas=(0.5, 0.999))
    return torch.optim.SGD(params, lr=lr)


def _as_pool(patches) -> np.ndarray:
    arr = np.asarray(patches)
    if arr.ndim != 4 or arr.shape[-1] != 3 or arr.dtype != np.uint8:
        raise DataError(f"patch pool must be uint8 NxHxWx3, got {arr.shape} {arr.dtype}")
    if len(arr) == 0:
        raise DataError("patch pool is empty")
    return arr


class _PoolSampler:
    """Without-replacement batch index source that reshuffles when drained."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.queue: list[int] = []

    def draw(self, count: int) -> np.ndarray:
        out: list[int] = []
        while len(out) < count:
            if not self.queue:
                self.queue = list(self.rng.permutation(self.size))
            take = min(count - len(out), len(self.queue))
            out.extend(self.queue[:take])
            self.queue = self.queue[take:]
        return np.asarray(out)

    def state(self) -> list[int]:
        return list(self.queue)

    def restore(self, queue: list[int]) -> None:
        self.queue = [int(i) for i in queue]


def _flip_batch(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = batch.copy()
    hflip = rng.random(len(batch)) < 0.5
    vflip = rng.random(len(batch)) < 0.5
    for i in range(len(batch)):
        if hflip[i]:
            out[i] = out[i][:, ::-1]
        if vflip[i]:
            out[i] = out[i][::-1, :]
    return out


class _FakeBuffer:
    """History pool of past generator outputs for discriminator updates."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.pool: list[torch.Tensor] = []

    def mix(self, fakes: torch.Tensor) -> torch.Tensor:
        if self.capacity == 0:
            return fakes
        out = []
        for i in range(fakes.shape[0]):
            fake = fakes[i : i + 1]
            if len(self.pool) < self.capacity:
                self.pool.append(fake.clone())
                out.append(fake)
            elif self.rng.random() < 0.5:
                slot = int(self.rng.integers(0, len(self.pool)))
                out.append(self.pool[slot])
                self.pool[slot] = fake.clone()
            else:
                out.append(fake)
        return torch.cat(out, dim=0)

    def state(self) -> list:
        return [t.numpy() for t in self.pool]

    def restore(self, tensors: list) -> None:
        self.pool = [torch.from_numpy(np.asarray(t)) for t in tensors]


class Trainer:
    """Owns the bundle, the two optimizers, and the sampling RNG."""

    def __init__(
        self,
        marker: np.ndarray,
        clean: np.ndarray,
        model_config: ModelConfig,
        train_config: TrainConfig,
        bundle: ModelBundle | None = None,
    ):
        self.marker = _as_pool(marker)
        self.clean = _as_pool(clean)
        self.model_config = model_config
        self.config = train_config
        if train_config.deterministic:
            torch.set_num_threads(1)
        self.bundle = bundle or ModelBundle.create(model_config, seed=train_config.seed)
        gen_params = list(self.bundle.g_remove.parameters()) + list(self.bundle.g_add.parameters())
        disc_params = list(self.bundle.d_clean.parameters())
        if self.bundle.d_marker is not None:
            disc_params += list(self.bundle.d_marker.parameters())
        self.opt_gen = _make_optimizer(train_config.gen_optimizer, gen_params, train_config.gen_lr)
        self.opt_disc = _make_optimizer(train_config.disc_optimizer, disc_params, train_config.disc_lr)
        self._gen_param_ids = {id(p) for p in gen_params}
        self._disc_param_ids = {id(p) for p in disc_params}
        self.rng = RngStream(seed=train_config.seed, stream_id=1).generator()
        self.marker_sampler = _PoolSampler(len(self.marker), self.rng)
        self.clean_sampler = _PoolSampler(len(self.clean), self.rng)
        self.fake_buffer = _FakeBuffer(train_config.fake_buffer_size, self.rng)
        self.step = 0

    # -- schedule ----------------------------------------------------------- #
    def steps_per_epoch(self) -> int:
        return math.ceil(max(len(self.marker), len(self.clean)) / self.config.batch_size)

    def total_steps(self) -> int:
        total = self.config.epochs * self.steps_per_epoch()
        if self.config.max_steps is not None:
            total = min(total, self.config.max_steps)
        return total

    def optimizer_param_ids(self) -> tuple[set, set]:
        """Parameter identity sets per optimizer; must be disjoint."""
        gen_ids = {id(p) for group in self.opt_gen.param_groups for p in group["params"]}
        disc_ids = {id(p) for group in self.opt_disc.param_groups for p in group["params"]}
        return gen_ids, disc_ids

    # -- single step -------------------------------------------------------- #
    def _next_batches(self) -> tuple[torch.Tensor, torch.Tensor]:
        bm = self.marker[self.marker_sampler.draw(self.config.batch_size)]
        bc = self.clean[self.clean_sampler.draw(self.config.batch_size)]
        if self.config.augment_flips:
            bm = _flip_batch(bm, self.rng)
            bc = _flip_batch(bc, self.rng)
        return to_unit_range(bm), to_unit_range(bc)

    def train_step(self) -> LossRow:
        b = self.bundle
        xm, xc = self._next_batches()

        fake_clean = b.g_remove(xm)
        rec_marker = b.g_add(fake_clean)
        loss_g_adv = ((b.d_clean(fake_clean) - 1.0) ** 2).mean()
        loss_cyc = cycle_loss(xm, rec_marker, b.config.lambda_cyc)
        loss_gen = loss_g_adv + loss_cyc

        fake_marker = None
        if b.d_marker is not None:
            fake_marker = b.g_add(xc)
            rec_clean = b.g_remove(fake_marker)
            loss_g_adv2 = ((b.d_marker(fake_marker) - 1.0) ** 2).mean()
            loss_cyc2 = cycle_loss(xc, rec_clean, b.config.lambda_cyc)
            loss_gen = loss_gen + loss_g_adv2 + loss_cyc2
            loss_g_adv = loss_g_adv + loss_g_adv2
            loss_cyc = loss_cyc + loss_cyc2

        self.opt_gen.zero_grad()
        loss_gen.backward()
        self.opt_gen.step()

        d_fake_batch = self.fake_buffer.mix(fake_clean.detach())
        loss_d, _ = adversarial_losses(b.d_clean(xc), b.d_clean(d_fake_batch))
        if b.d_marker is not None and fake_marker is not None:
            loss_d2, _ = adversarial_losses(b.d_marker(xm), b.d_marker(fake_marker.detach()))
            loss_d = loss_d + loss_d2
        self.opt_disc.zero_grad()
        loss_d.backward()
        self.opt_disc.step()

        self.step += 1
        row = LossRow(
            self.step,
            float(loss_d.detach()),
            float(loss_g_adv.detach()),
            float(loss_cyc.detach()),
        )
        if not all(math.isfinite(v) for v in (row.loss_d, row.loss_g_adv, row.loss_cyc)):
            raise TrainingAborted(f"non-finite loss at step {self.step}: {row}")
        return row

    # -- checkpointing ------------------------------------------------------ #
    def trainer_state(self) -> dict:
        return {
            "step": self.step,
            "train_config": _train_config_to_dict(self.config),
            "opt_gen": self.opt_gen.state_dict(),
            "opt_disc": self.opt_disc.state_dict(),
            "rng_state": self.rng.bit_generator.state,
            "marker_queue": self.marker_sampler.state(),
            "clean_queue": self.clean_sampler.state(),
            "fake_buffer": self.fake_buffer.state(),
        }

    def restore_trainer_state(self, state: dict) -> None:
        self.step = int(state["step"])
        self.opt_gen.load_state_dict(state["opt_gen"])
        self.opt_disc.load_state_dict(state["opt_disc"])
        self.rng.bit_generator.state = state["rng_state"]
        self.marker_sampler.restore(state["marker_queue"])
        self.clean_sampler.restore(state["clean_queue"])
        self.fake_buffer.restore(state.get("fake_buffer", []))

    def save(self, path: Path) -> None:
        save_bundle(self.bundle, path, extra=self.trainer_state())


def _train_config_to_dict(config: TrainConfig) -> dict:
    return {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "gen_optimizer": config.gen_optimizer,
        "gen_lr": config.gen_lr,
        "disc_optimizer": config.disc_optimizer,
        "disc_lr": config.disc_lr,
        "augment_flips": config.augment_flips,
        "seed": config.seed,
        "checkpoint_every": config.checkpoint_every,
        "max_steps": config.max_steps,
        "deterministic": config.deterministic,
        "fake_buffer_size": config.fake_buffer_size,
    }


def train_config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(
        epochs=int(d["epochs"]),
        batch_size=int(d["batch_size"]),
        gen_optimizer=d["gen_optimizer"],
        gen_lr=float(d["gen_lr"]),
        disc_optimizer=d["disc_optimizer"],
        disc_lr=float(d["disc_lr"]),
        augment_flips=bool(d["augment_flips"]),
        seed=int(d["seed"]),
        checkpoint_every=int(d["checkpoint_every"]),
        max_steps=d["max_steps"],
        deterministic=bool(d["deterministic"]),
        fake_buffer_size=int(d.get("fake_buffer_size", 0)),
    )


def _run(trainer: Trainer, out_dir: Path | None) -> TrainResult:
    log: list[LossRow] = []
    checkpoints: list[Path] = []
    steps_per_epoch = trainer.steps_per_epoch()
    total = trainer.total_steps()

    def checkpoint(name: str) -> None:
        if out_dir is None:
            return
        path = out_dir / name
        trainer.save(path)
        checkpoints.append(path)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    try:
        while trainer.step < total:
            row = trainer.train_step()
            log.append(row)
            epoch_end = trainer.step % steps_per_epoch == 0
            epoch = trainer.step // steps_per_epoch
            if epoch_end and epoch % trainer.config.checkpoint_every == 0:
                checkpoint(f"checkpoint_epoch{epoch:04d}.pt")
    except TrainingAborted:
        checkpoint("checkpoint_diagnostic.pt")
        if out_dir is not None:
            _write_loss_log(log, out_dir / "loss_log.csv")
        raise
    checkpoint("checkpoint_final.pt")
    if out_dir is not None:
        _write_loss_log(log, out_dir / "loss_log.csv")
    return TrainResult(bundle=trainer.bundle, log=log, checkpoints=checkpoints)


def _write_loss_log(log: list[LossRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_D", "loss_G_adv", "loss_cyc"])
        for row in log:
            writer.writerow([row.step, f"{row.loss_d:.8f}", f"{row.loss_g_adv:.8f}", f"{row.loss_cyc:.8f}"])


def train(
    marker,
    clean,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Train from scratch; returns the final bundle plus the loss log."""
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    trainer = Trainer(marker, clean, model_config, train_config)
    return _run(trainer, Path(out_dir) if out_dir is not None else None)


def resume(
    checkpoint_path: str | Path,
    marker,
    clean,
    out_dir: str | Path | None = None,
    model_config: ModelConfig | None = None,
    epochs: int | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Continue training from a checkpoint as if it had never stopped.

    When model_config is supplied it must agree with the checkpoint's
    architecture. epochs/max_steps extend the saved schedule; without them,
    resuming at or past the final step is a no-op returning the bundle.
    """
    bundle, trainer_state = load_bundle(checkpoint_path)
    if trainer_state is None:
        raise CheckpointError(f"checkpoint {checkpoint_path} carries no trainer state")
    if model_config is not None and config_to_dict(model_config) != config_to_dict(bundle.config):
        raise CheckpointError(
            f"architecture config mismatch: checkpoint {config_to_dict(bundle.config)} "
            f"vs requested {config_to_dict(model_config)}"
        )
    train_config = train_config_from_dict(trainer_state["train_config"])
    if epochs is not None:
        train_config = replace(train_config, epochs=epochs)
    if max_steps is not None:
        train_config = replace(train_config, max_steps=max_steps)
    trainer = Trainer(marker, clean, bundle.config, train_config, bundle=bundle)
    trainer.restore_trainer_state(trainer_state)
    if trainer.step >= trainer.total_steps():
        return TrainResult(bundle=trainer.bundle, log=[], checkpoints=[])
    return _run(trainer, Path(out_dir) if out_dir is not None else None)
