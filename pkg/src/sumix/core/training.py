"""
Training loop: momentum SGD with weight decay on a cosine schedule.

One step draws a batch, augments it, mixes it with a permutation of itself,
evaluates the SUMix loss, backpropagates and updates the encoder and the
uncertainty head together. All randomness is keyed by (seed, epoch, batch
index), so a run resumed from a checkpoint continues exactly as an
uninterrupted run would.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import torch
from torch.optim import Optimizer

from ..config.settings import TrainConfig, dump_config
from ..infrastructure.artifacts import MetricsWriter
from ..infrastructure.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..infrastructure.logging_config import get_logger
from ..infrastructure.paths import (
    LAST_CHECKPOINT_NAME, METRICS_FILE_NAME, epoch_checkpoint_name, get_checkpoint_directory,
)
from ..infrastructure.workers import prefetch
from .data import MIX_STREAM, batch_iterator, batches_per_epoch, stream
from .encoder import Encoder, backward, build_encoder, init_parameters
from .errors import DataError, NumericalAbortError
from .evaluation import median_last_k, top1
from .mixers import mix_batch
from .repository import DataSplits
from .sumix_loss import UncertaintyHead, sumix_loss

logger = get_logger(__name__)

INIT_STREAM = 20
HEAD_STREAM = 21
MEDIAN_WINDOW = 10


def sgd_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[Optional[torch.Tensor]],
    velocities: Sequence[Optional[torch.Tensor]],
    lr: float,
    momentum: float,
    weight_decay: float,
    step: int = -1,
) -> list[Optional[torch.Tensor]]:
    """
    One momentum-SGD update, in place.

        v <- momentum * v + grad + weight_decay * param
        param <- param - lr * v

    Parameters whose grad is None are left alone.

    Args:
        params: Parameters, updated in place.
        grads: Matching gradients.
        velocities: Matching momentum buffers (None means zero).
        lr: Learning rate.
        momentum: Momentum coefficient.
        weight_decay: L2 coefficient folded into the gradient.
        step: Step number reported on failure.

    Returns:
        The new velocities.

    Raises:
        NumericalAbortError: If any gradient is non-finite; nothing is updated then.
    """
    for index, grad in enumerate(grads):
        if grad is not None and not torch.isfinite(grad).all():
            raise NumericalAbortError(f"Non-finite gradient in parameter {index}", step=step)

    updated: list[Optional[torch.Tensor]] = []
    with torch.no_grad():
        for param, grad, velocity in zip(params, grads, velocities):
            if grad is None:
                updated.append(velocity)
                continue
            direction = grad + weight_decay * param if weight_decay else grad.clone()
            velocity = direction if velocity is None else momentum * velocity + direction
            param.sub_(lr * velocity)
            updated.append(velocity)
    return updated


class MomentumSGD(Optimizer):
    """torch Optimizer wrapper around sgd_step(); velocities live in self.state."""

    def __init__(self, params, lr: float = 0.1, momentum: float = 0.9, weight_decay: float = 1e-4):
        if lr <= 0.0:
            raise ValueError(f"Invalid learning rate: {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"Invalid momentum value: {momentum}")
        if weight_decay < 0.0:
            raise ValueError(f"Invalid weight_decay value: {weight_decay}")
        super().__init__(params, dict(lr=lr, momentum=momentum, weight_decay=weight_decay))
        self.steps_taken = 0

    def parameters(self) -> list[torch.Tensor]:
        return [p for group in self.param_groups for p in group["params"]]

    def set_lr(self, lr: float) -> None:
        for group in self.param_groups:
            group["lr"] = lr

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            params = group["params"]
            velocities = [self.state[p].get("velocity") for p in params]
            updated = sgd_step(
                params, [p.grad for p in params], velocities,
                group["lr"], group["momentum"], group["weight_decay"], step=self.steps_taken,
            )
            for p, v in zip(params, updated):
                if v is not None:
                    self.state[p]["velocity"] = v
        self.steps_taken += 1
        return loss

    def velocity_buffers(self) -> list[Optional[torch.Tensor]]:
        """Momentum buffers in parameter order."""
        return [self.state[p].get("velocity") for p in self.parameters()]

    def load_velocity_buffers(self, buffers: Sequence[Optional[torch.Tensor]]) -> None:
        params = self.parameters()
        if len(buffers) != len(params):
            raise DataError(f"Checkpoint holds {len(buffers)} momentum buffers, optimizer has {len(params)}")
        for p, v in zip(params, buffers):
            if v is not None:
                self.state[p]["velocity"] = v.to(p).clone()


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """0.5 * base_lr * (1 + cos(pi * step / total_steps)), single decay without restarts."""
    if total_steps <= 0:
        return base_lr
    step = min(max(step, 0), total_steps)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


def configure_determinism(seed: int, deterministic: bool) -> None:
    """Seed torch's global generator and, in deterministic mode, run single-threaded."""
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)


@dataclass
class TrainResult:
    """Outcome of a training run."""

    model: Encoder
    head: UncertaintyHead
    history: list[dict] = field(default_factory=list)
    """One record per evaluation: epoch, step, top1, median_last_10."""

    steps: int = 0
    train_top1: float = math.nan
    """Accuracy on the (unaugmented) training split after the last step."""

    checkpoint: Optional[Path] = None
    """Last checkpoint written, if any."""


class Trainer:
    """
    Owns the model, the head, the optimizer and the training state of one run.

    Example:
        trainer = Trainer(config, splits, run_dir=run_dir)
        result = trainer.run()
    """

    def __init__(
        self,
        config: TrainConfig,
        splits: DataSplits,
        run_dir: Optional[Path] = None,
        progress_callback: Optional[Callable[[int, int, str], None]] = None,
    ):
        """
        Build the model and optimizer, optionally restoring a checkpoint.

        Args:
            config: Run configuration.
            splits: Training and held-out data.
            run_dir: Directory receiving metrics and checkpoints; nothing is written when None.
            progress_callback: Optional callback(current_step, total_steps, message).
        """
        self.config = config
        self.splits = splits
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.progress_callback = progress_callback

        configure_determinism(config.seed, config.deterministic)
        train = splits.train
        encoder_config = config.encoder_config(train.num_classes, train.image_shape)
        self.model = build_encoder(encoder_config, stream(config.seed, INIT_STREAM))
        self.head = UncertaintyHead(config.feature_dim, config.head_dim)
        init_parameters(self.head, torch.Generator().manual_seed(int(stream(config.seed, HEAD_STREAM).integers(0, 2**62))))
        self.optimizer = MomentumSGD(
            list(self.model.parameters()) + list(self.head.parameters()),
            lr=config.base_lr, momentum=config.momentum, weight_decay=config.weight_decay,
        )
        self.mix_config = config.mix_config()
        self.batches_per_epoch = batches_per_epoch(len(train), config.batch_size)
        self.total_steps = config.epochs * self.batches_per_epoch
        self.step = 0
        self.history: list[dict] = []
        self.last_checkpoint: Optional[Path] = None

        if config.resume_from is not None:
            self.restore(load_checkpoint(config.resume_from))

    def restore(self, checkpoint: Checkpoint) -> None:
        """Load parameters, momentum buffers, step counter and evaluation history."""
        self.model.load_state_dict(checkpoint.model_state)
        self.head.load_state_dict(checkpoint.head_state)
        self.optimizer.load_velocity_buffers(checkpoint.velocity)
        self.optimizer.steps_taken = checkpoint.step
        self.step = checkpoint.step
        self.history = list(checkpoint.history)
        logger.info(f"Resuming at step {self.step} (epoch {self.step // self.batches_per_epoch})")

    def checkpoint(self) -> Checkpoint:
        """Snapshot of the current training state."""
        return Checkpoint(
            model_state=self.model.state_dict(),
            head_state=self.head.state_dict(),
            velocity=self.optimizer.velocity_buffers(),
            mean=self.splits.train.mean,
            std=self.splits.train.std,
            epoch=self.step // self.batches_per_epoch,
            step=self.step,
            seed=self.config.seed,
            config_text=dump_config(self.config),
            history=self.history,
        )

    def _checkpoint_targets(self, epoch: Optional[int]) -> list[Path]:
        targets = []
        if self.run_dir is not None:
            directory = get_checkpoint_directory(self.run_dir)
            if epoch is not None:
                targets.append(directory / epoch_checkpoint_name(epoch))
            targets.append(directory / LAST_CHECKPOINT_NAME)
        if self.config.checkpoint_path is not None:
            targets.append(Path(self.config.checkpoint_path))
        return targets

    def save(self, epoch: Optional[int] = None) -> Optional[Path]:
        """Write the current state to every configured checkpoint location."""
        snapshot = self.checkpoint()
        for target in self._checkpoint_targets(epoch):
            self.last_checkpoint = save_checkpoint(target, snapshot)
        return self.last_checkpoint

    def _buffers(self) -> dict[str, torch.Tensor]:
        """Copies of the model buffers (BatchNorm running statistics and counters)."""
        return {name: buffer.detach().clone() for name, buffer in self.model.named_buffers()}

    def _abort(self, message: str, buffers: dict[str, torch.Tensor]) -> None:
        # parameters still hold the state before the failing step; the forward
        # pass already moved the running statistics, so put them back
        with torch.no_grad():
            for name, buffer in self.model.named_buffers():
                buffer.copy_(buffers[name])
        saved = self.save()
        logger.error(f"{message} at step {self.step}; last good state: {saved}")
        raise NumericalAbortError(message, step=self.step, checkpoint=saved)

    def evaluate(self, epoch: int) -> dict:
        """Held-out top-1 accuracy, recorded in the history."""
        accuracy = top1(self.model, self.splits.test) if len(self.splits.test) else math.nan
        accuracies = [r["top1"] for r in self.history] + [accuracy]
        record = {
            "epoch": epoch,
            "step": self.step,
            "top1": accuracy,
            f"median_last_{MEDIAN_WINDOW}": median_last_k(accuracies, MEDIAN_WINDOW),
        }
        self.history.append(record)
        logger.info(f"Epoch {epoch}: held-out top1 {accuracy:.4f}")
        return record

    def _batches(self, epoch: int, start_batch: int) -> Iterable:
        batches = batch_iterator(
            self.splits.train, self.config.batch_size, self.config.seed, epoch=epoch,
            augment=self.config.augment, start_batch=start_batch,
        )
        return prefetch(batches, self.config.prefetch)

    def train_step(self, batch, epoch: int, batch_index: int):
        """One optimizer step on a batch; returns (LossReport, learning rate)."""
        lr = cosine_lr(self.step, self.total_steps, self.config.base_lr)
        self.optimizer.set_lr(lr)
        self.model.train()
        self.head.train()

        buffers = self._buffers()
        mix = mix_batch(batch.images, self.mix_config, stream(self.config.seed, epoch, batch_index, MIX_STREAM))
        report = sumix_loss(self.model, self.head, mix, batch.images, batch.labels,
                            self.config.zeta, self.config.loss_mode)
        if not report.is_finite():
            self._abort("Non-finite loss", buffers)

        backward(self.model, report.total, extra=[self.head])
        try:
            self.optimizer.step()
        except NumericalAbortError as e:
            self._abort(str(e), buffers)
        return report, lr

    def run(self) -> TrainResult:
        """
        Train until config.epochs are complete.

        Returns:
            TrainResult with the trained model and head.

        Raises:
            NumericalAbortError: On a non-finite loss or gradient, after saving the last good state.
        """
        config = self.config
        metrics = None
        if self.run_dir is not None:
            metrics = MetricsWriter(self.run_dir / METRICS_FILE_NAME, append=self.step > 0)
        logger.info(
            f"Training {config.arch.value} with {config.method.value}/{config.loss_mode.value} "
            f"for {config.epochs} epochs ({self.total_steps} steps)"
        )
        try:
            while self.step < self.total_steps:
                epoch, start_batch = divmod(self.step, self.batches_per_epoch)
                for batch_index, batch in enumerate(self._batches(epoch, start_batch), start=start_batch):
                    report, lr = self.train_step(batch, epoch, batch_index)
                    record = report.to_record(step=self.step, epoch=epoch, lr=lr)
                    logger.debug(f"step {self.step}: total {record['total']:.5f} term1 {record['term1']:.5f}")
                    if metrics is not None:
                        metrics.write("step", record)
                    self.step += 1
                    if self.progress_callback:
                        self.progress_callback(self.step, self.total_steps, f"epoch {epoch + 1}/{config.epochs}")

                completed = epoch + 1
                if completed % config.eval_interval == 0 or completed == config.epochs:
                    record = self.evaluate(completed)
                    if metrics is not None:
                        metrics.write("eval", record)
                    self.save(completed)
        finally:
            if metrics is not None:
                metrics.close()

        train_accuracy = top1(self.model, self.splits.train)
        logger.info(f"Training finished after {self.step} steps; training top1 {train_accuracy:.4f}")
        return TrainResult(
            model=self.model, head=self.head, history=self.history, steps=self.step,
            train_top1=train_accuracy, checkpoint=self.last_checkpoint,
        )


def train(
    config: TrainConfig,
    splits: DataSplits,
    run_dir: Optional[Path] = None,
    progress_callback: Optional[Callable[[int, int, str], None]] = None,
) -> TrainResult:
    """Build a Trainer and run it to completion."""
    return Trainer(config, splits, run_dir=run_dir, progress_callback=progress_callback).run()


def restore_model(checkpoint: Checkpoint, config: TrainConfig, num_classes: int,
                  input_shape: tuple[int, int, int]) -> tuple[Encoder, UncertaintyHead]:
    """Rebuild encoder and head from a checkpoint, in evaluation mode."""
    model = Encoder(config.encoder_config(num_classes, input_shape))
    model.load_state_dict(checkpoint.model_state)
    head = UncertaintyHead(config.feature_dim, config.head_dim)
    head.load_state_dict(checkpoint.head_state)
    return model.eval(), head.eval()
