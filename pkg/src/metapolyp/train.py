"""Adam optimization, cosine annealing, and the epoch training loop.

Determinism contract: (seed, data, config) fixes the whole trajectory
bit-exactly. All per-epoch randomness (shuffle order, per-sample
augmentation streams, CutMix donors) derives statelessly from
(seed, epoch, position), so resuming from a checkpoint at an epoch
boundary reproduces the uninterrupted run.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import checkpoint as ckpt
from .augment import AugmentConfig, AugmentPipeline
from .data import Sample
from .errors import CheckpointError, ConfigError, DimensionError, NumericalError
from .metrics import binarize, evaluate, jaccard_loss
from .model import MetaPolyp, config_from_arrays, config_to_arrays, load_params
from .rng import Rng
from .tensor import Tape, Tensor, backward, mul

_SHUFFLE_KEY = 101
_AUGMENT_KEY = 202


@dataclass(frozen=True)
class ScheduleSpec:
    """Half-cosine decay from lr_max to lr_min over total_steps."""

    lr_max: float = 1e-4
    lr_min: float = 0.0
    total_steps: int = 1


def cosine_lr(t: int, spec: ScheduleSpec) -> float:
    """lr(t) = lr_min + (lr_max - lr_min) (1 + cos(pi t / T)) / 2, clamped past T."""
    if t < 0:
        raise ConfigError(f"schedule step {t} is negative")
    if t >= spec.total_steps:
        return spec.lr_min
    return spec.lr_min + 0.5 * (spec.lr_max - spec.lr_min) * (
        1.0 + math.cos(math.pi * t / spec.total_steps))


class Adam:
    """Adam with bias correction; gradients are zeroed after each step."""

    def __init__(self, params: Sequence, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        bc1 = np.float32(1.0 - self.beta1 ** self.t)
        bc2 = np.float32(1.0 - self.beta2 ** self.t)
        lr32 = np.float32(lr)
        eps32 = np.float32(self.eps)
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for parameter {p.name!r}")
            m = self.m[p.name] = b1 * self.m[p.name] + (np.float32(1.0) - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (np.float32(1.0) - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data = p.data - lr32 * mhat / (np.sqrt(vhat) + eps32)
            p.zero_grad()


@dataclass(frozen=True)
class TrainConfig:
    """The training recipe: loss smoothing 0.7, Adam at 1e-4 with cosine decay."""

    epochs: int = 300
    batch_size: int = 4
    alpha: float = 0.7
    lr_max: float = 1e-4
    lr_min: float = 0.0
    seed: int = 0
    threshold: float = 0.5
    validate_every: int = 1
    checkpoint_every: int = 1
    augment: Optional[AugmentConfig] = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"epochs and batch_size must be >= 1, got "
                              f"{self.epochs}/{self.batch_size}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.validate_every < 1 or self.checkpoint_every < 0:
            raise ConfigError("validate_every must be >= 1 and checkpoint_every >= 0")


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    train_loss: float
    val_miou: Optional[float]
    val_mdice: Optional[float]
    val_mae: Optional[float]

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None else f"{v:.8g}"
        return (f"{self.epoch},{self.lr:.8g},{self.train_loss:.8g},"
                f"{fmt(self.val_miou)},{fmt(self.val_mdice)},{fmt(self.val_mae)}")


HISTORY_HEADER = "epoch,lr,train_loss,val_miou,val_mdice,val_mae"


def history_to_csv(rows: Sequence[HistoryRow]) -> str:
    return "\n".join([HISTORY_HEADER] + [r.to_csv() for r in rows]) + "\n"


@dataclass
class TrainState:
    """Everything needed to continue training bit-exactly."""

    model: MetaPolyp
    adam: Adam
    schedule: ScheduleSpec
    epochs_done: int
    seed: int
    best_dice: float = -1.0


def save_train_state(state: TrainState, path: str) -> None:
    arrays = config_to_arrays(state.model.config)
    for name, p in state.model.named_parameters():
        arrays[f"param/{name}"] = p.data
    for name in state.adam.m:
        arrays[f"optim/m/{name}"] = state.adam.m[name]
        arrays[f"optim/v/{name}"] = state.adam.v[name]
    arrays["optim/t"] = ckpt.u64_to_f32pair(state.adam.t)
    arrays["schedule/lr_max"] = ckpt.f64_to_f32pair(state.schedule.lr_max)
    arrays["schedule/lr_min"] = ckpt.f64_to_f32pair(state.schedule.lr_min)
    arrays["schedule/total_steps"] = ckpt.u64_to_f32pair(state.schedule.total_steps)
    arrays["train/epochs_done"] = ckpt.u64_to_f32pair(state.epochs_done)
    arrays["train/seed"] = ckpt.u64_to_f32pair(state.seed)
    arrays["train/best_dice"] = ckpt.f64_to_f32pair(state.best_dice)
    ckpt.save_arrays(path, arrays)


def load_train_state(path: str, model: Optional[MetaPolyp] = None) -> TrainState:
    """Restore a full training state; builds the model from the stored
    config unless one is supplied."""
    arrays = ckpt.load_arrays(path)
    if model is None:
        model = MetaPolyp(config_from_arrays(arrays))
    load_params(model, arrays)
    adam = Adam(model.parameters())
    for name in adam.m:
        mk, vk = f"optim/m/{name}", f"optim/v/{name}"
        if mk not in arrays or vk not in arrays:
            raise CheckpointError(f"checkpoint has no optimizer state for {name!r}")
        adam.m[name] = arrays[mk].astype(np.float32)
        adam.v[name] = arrays[vk].astype(np.float32)
    adam.t = ckpt.f32pair_to_u64(arrays["optim/t"])
    schedule = ScheduleSpec(
        lr_max=ckpt.f32pair_to_f64(arrays["schedule/lr_max"]),
        lr_min=ckpt.f32pair_to_f64(arrays["schedule/lr_min"]),
        total_steps=ckpt.f32pair_to_u64(arrays["schedule/total_steps"]))
    return TrainState(
        model=model,
        adam=adam,
        schedule=schedule,
        epochs_done=ckpt.f32pair_to_u64(arrays["train/epochs_done"]),
        seed=ckpt.f32pair_to_u64(arrays["train/seed"]),
        best_dice=ckpt.f32pair_to_f64(arrays["train/best_dice"]))


def _epoch_samples(train_set: Sequence[Sample], epoch: int, cfg: TrainConfig,
                   pipeline: Optional[AugmentPipeline]) -> list[Sample]:
    base = Rng(cfg.seed)
    order = base.child(_SHUFFLE_KEY, epoch).permutation(len(train_set))
    out = []
    for pos, idx in enumerate(order):
        sample = train_set[int(idx)]
        if pipeline is not None:
            rng = base.child(_AUGMENT_KEY, epoch, pos)
            donor = train_set[rng.randint(0, len(train_set))]
            sample = pipeline.apply(sample, rng, donor=donor)
        out.append(sample)
    return out


def train(model: MetaPolyp, datasets, cfg: TrainConfig,
          out_dir: Optional[str] = None,
          resume_from: Optional[str] = None,
          stop_after: Optional[int] = None):
    """Run the full recipe; returns (TrainState, list[HistoryRow]).

    ``datasets`` is (train_samples, val_samples); val may be empty to skip
    validation. With ``out_dir`` set, writes history.csv, checkpoint.mply
    (cadence + final) and best.mply (best validation mDice).
    ``stop_after`` interrupts after that epoch (the schedule still spans
    cfg.epochs), modelling a run that a later resume continues bit-exactly.
    """
    cfg.validate()
    train_set, val_set = datasets
    if len(train_set) == 0:
        raise ConfigError("training set is empty")
    steps_per_epoch = -(-len(train_set) // cfg.batch_size)
    schedule = ScheduleSpec(cfg.lr_max, cfg.lr_min, cfg.epochs * steps_per_epoch)
    pipeline = AugmentPipeline(cfg.augment) if cfg.augment is not None else None

    if resume_from is not None:
        state = load_train_state(resume_from, model)
        if state.seed != cfg.seed:
            raise ConfigError(f"resume seed {state.seed} != configured {cfg.seed}")
        if state.schedule != schedule:
            raise ConfigError(f"resume schedule {state.schedule} != configured {schedule}")
    else:
        state = TrainState(model, Adam(model.parameters()), schedule, 0, cfg.seed)

    history: list[HistoryRow] = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    last_epoch_this_run = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(state.epochs_done + 1, last_epoch_this_run + 1):
        samples = _epoch_samples(train_set, epoch, cfg, pipeline)
        epoch_lr = cosine_lr(state.adam.t, schedule)
        loss_total = 0.0
        for start in range(0, len(samples), cfg.batch_size):
            batch = samples[start:start + cfg.batch_size]
            lr = cosine_lr(state.adam.t, schedule)
            with Tape():
                total = None
                for s in batch:
                    loss = jaccard_loss(model.forward(Tensor(s.image)).prob,
                                        s.mask, cfg.alpha)
                    total = loss if total is None else total + loss
                mean_loss = mul(total, 1.0 / len(batch))
            value = mean_loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, "
                                     f"step {state.adam.t}")
            backward(mean_loss)
            state.adam.step(lr)
            loss_total += value * len(batch)
        train_loss = loss_total / len(samples)

        val_miou = val_mdice = val_mae = None
        if len(val_set) and epoch % cfg.validate_every == 0:
            report = evaluate(val_set, model, cfg.threshold)
            val_miou, val_mdice, val_mae = (report.mean_iou, report.mean_dice,
                                            report.mean_mae)
        history.append(HistoryRow(epoch, epoch_lr, train_loss,
                                  val_miou, val_mdice, val_mae))
        state.epochs_done = epoch

        if out_dir is not None:
            if val_mdice is not None and val_mdice > state.best_dice:
                state.best_dice = val_mdice
                save_train_state(state, os.path.join(out_dir, "best.mply"))
            if epoch == last_epoch_this_run or (cfg.checkpoint_every and
                                                epoch % cfg.checkpoint_every == 0):
                save_train_state(state, os.path.join(out_dir, "checkpoint.mply"))

    if out_dir is not None:
        with open(os.path.join(out_dir, "history.csv"), "w") as fh:
            fh.write(history_to_csv(history))
    return state, history


def predict(model: MetaPolyp, image: np.ndarray, threshold: float = 0.5):
    """Deterministic inference: (binary mask, probability map), both (H, W, 1)."""
    h, w = model.config.input_hw
    img = np.asarray(image, dtype=np.float32)
    if img.shape != (h, w, 3):
        raise DimensionError(f"predict: image shape {img.shape} does not match "
                             f"model input {(h, w, 3)}")
    prob = model.forward(Tensor(img)).prob.data
    return binarize(prob, threshold), prob
