"""Training loop: augmentation, per-epoch shuffling, Adam with a warped log-linear schedule."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .edges import CannyParams, canny
from .exceptions import ConfigurationError, DataError, ParameterError, TrainingDivergedError
from .losses import LossWeights, loss_terms
from .model import ModelConfig, Network
from .tensor import Adam, Tensor, backward


SCHEDULES = ("warped_log", "polynomial")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 1500
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    decay_power: float = 0.3
    schedule: str = "warped_log"
    crop_h: int = 64
    crop_w: int = 64
    flip_prob: float = 0.5
    rotate_prob: float = 0.5
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    max_steps: int | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 < self.lr_end < self.lr_start:
            raise ConfigurationError(f"need 0 < lr_end < lr_start, got {self.lr_end}, {self.lr_start}")
        if self.decay_power <= 0:
            raise ConfigurationError(f"decay_power must be > 0, got {self.decay_power}")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.crop_h < 1 or self.crop_w < 1:
            raise ConfigurationError(f"crop size must be positive, got {self.crop_h}x{self.crop_w}")
        for name in ("flip_prob", "rotate_prob"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigurationError(f"max_steps must be >= 0, got {self.max_steps}")

    def check_model(self, model: ModelConfig) -> None:
        d = model.spatial_divisor
        if self.crop_h % d or self.crop_w % d:
            raise ConfigurationError(
                f"crop {self.crop_h}x{self.crop_w} must be divisible by {d} for levels={model.levels}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def lr_at(epoch: float, config: TrainConfig) -> float:
    """Learning rate for ``epoch``; equals lr_start at 0 and lr_end at ``epochs``.

    ``warped_log``: lr_start * (lr_end / lr_start) ** ((epoch / epochs) ** decay_power)
    ``polynomial``: lr_end + (lr_start - lr_end) * (1 - epoch / epochs) ** decay_power
    """
    if not 0 <= epoch <= config.epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {config.epochs}]")
    if config.epochs == 0:
        return config.lr_start
    t = epoch / config.epochs
    if config.schedule == "polynomial":
        return config.lr_end + (config.lr_start - config.lr_end) * (1.0 - t) ** config.decay_power
    frac = t ** config.decay_power
    if frac == 1.0:
        return config.lr_end
    return config.lr_start * (config.lr_end / config.lr_start) ** frac


# ---------------------------------------------------------------------------
# samples and augmentation
# ---------------------------------------------------------------------------


@dataclass
class TrainSample:
    blurry: np.ndarray        # (C, H, W)
    sharp: np.ndarray         # (C, H, W)
    blurry_edges: np.ndarray  # (1, H, W)
    sharp_edges: np.ndarray   # (1, H, W)

    def __post_init__(self):
        hw = self.blurry.shape[1:]
        for name in ("sharp", "blurry_edges", "sharp_edges"):
            if getattr(self, name).shape[1:] != hw:
                raise DataError(f"{name} extents {getattr(self, name).shape[1:]} differ from blurry {hw}")
        if self.sharp.shape != self.blurry.shape:
            raise DataError(f"sharp {self.sharp.shape} and blurry {self.blurry.shape} differ")

    @property
    def planes(self) -> tuple[np.ndarray, ...]:
        return self.blurry, self.sharp, self.blurry_edges, self.sharp_edges


def make_sample(blurry: np.ndarray, sharp: np.ndarray, canny_params: CannyParams | None = None) -> TrainSample:
    """Pair images with their edge maps, computed once on the full frames."""
    return TrainSample(np.asarray(blurry, dtype=np.float64), np.asarray(sharp, dtype=np.float64),
                       canny(blurry, canny_params)[None], canny(sharp, canny_params)[None])


@dataclass(frozen=True)
class Transform:
    top: int
    left: int
    height: int
    width: int
    flip: bool
    rot90: int

    def apply(self, plane: np.ndarray) -> np.ndarray:
        out = plane[:, self.top:self.top + self.height, self.left:self.left + self.width]
        if self.flip:
            out = out[:, :, ::-1]
        if self.rot90:
            out = np.rot90(out, self.rot90, axes=(1, 2))
        return np.ascontiguousarray(out)


def draw_transform(rng: np.random.Generator, height: int, width: int, crop_h: int, crop_w: int,
                   flip_prob: float, rotate_prob: float) -> Transform:
    if height < crop_h or width < crop_w:
        raise DataError(f"source {height}x{width} is smaller than crop {crop_h}x{crop_w}")
    top = int(rng.integers(0, height - crop_h + 1))
    left = int(rng.integers(0, width - crop_w + 1))
    flip = bool(rng.random() < flip_prob)
    rot = 0
    if rng.random() < rotate_prob:
        # quarter turns would change the crop shape of non-square patches
        rot = int(rng.integers(1, 4)) if crop_h == crop_w else 2
    return Transform(top, left, crop_h, crop_w, flip, rot)


def augment(sample: TrainSample, rng: np.random.Generator, crop_h: int, crop_w: int,
            flip_prob: float = 0.5, rotate_prob: float = 0.5) -> TrainSample:
    """One random crop/flip/rotation, applied identically to all four planes."""
    h, w = sample.blurry.shape[1:]
    t = draw_transform(rng, h, w, crop_h, crop_w, flip_prob, rotate_prob)
    return TrainSample(*(t.apply(p) for p in sample.planes))


def stack_batch(samples: Sequence[TrainSample], dtype) -> tuple[np.ndarray, ...]:
    return tuple(np.stack([s.planes[i] for s in samples]).astype(dtype) for i in range(4))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    content_loss: float
    edge_loss: float
    steps: int
    batch_losses: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def train_step(network: Network, optimizer: Adam, batch: tuple[np.ndarray, ...], weights: LossWeights,
               lr: float) -> dict[str, float]:
    blurry, sharp, blurry_edges, sharp_edges = (Tensor(a) for a in batch)
    deblurred, enhanced = network.forward(blurry, blurry_edges if network.config.has_een else None)
    terms = loss_terms(deblurred, sharp, enhanced, sharp_edges, weights, network.config.variant)
    values = {k: v.item() for k, v in terms.items()}
    if not all(math.isfinite(v) for v in values.values()):
        return values
    backward(terms["total"])
    optimizer.step(lr)
    optimizer.zero_grad()
    return values


def train_epoch(network: Network, optimizer: Adam, dataset: Sequence[TrainSample], config: TrainConfig,
                epoch: int, rng: np.random.Generator, max_steps: int | None = None) -> EpochStats:
    """Shuffle, then one Adam step per batch at the epoch's learning rate."""
    if len(dataset) == 0:
        raise DataError("training set is empty")
    lr = lr_at(epoch, config)
    order = rng.permutation(len(dataset))
    totals = {"total": 0.0, "content": 0.0, "edge": 0.0}
    losses = []
    for b, start in enumerate(range(0, len(order), config.batch_size)):
        if max_steps is not None and b >= max_steps:
            break
        picked = [dataset[i] for i in order[start:start + config.batch_size]]
        crops = [augment(s, rng, config.crop_h, config.crop_w, config.flip_prob, config.rotate_prob)
                 for s in picked]
        values = train_step(network, optimizer, stack_batch(crops, network.dtype), config.weights, lr)
        if not math.isfinite(values["total"]):
            raise TrainingDivergedError(f"non-finite loss {values['total']} at epoch {epoch}, batch {b}")
        losses.append(values["total"])
        for k in totals:
            totals[k] += values.get(k, 0.0)
    n = max(len(losses), 1)
    return EpochStats(epoch, lr, totals["total"] / n, totals["content"] / n, totals["edge"] / n,
                      len(losses), losses)


class Trainer:
    """Owns the network, optimiser and random stream for one training run."""

    def __init__(self, network: Network, config: TrainConfig, rng: np.random.Generator | None = None):
        config.check_model(network.config)
        self.network = network
        self.config = config
        self.optimizer = Adam(network.parameters(), config.beta1, config.beta2, config.eps)
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.epoch = 0
        self.steps = 0

    def run(self, dataset: Sequence[TrainSample],
            on_epoch: Callable[[EpochStats], None] | None = None) -> list[EpochStats]:
        history = []
        for stats in self.iter_epochs(dataset):
            history.append(stats)
            if on_epoch is not None:
                on_epoch(stats)
        return history

    def iter_epochs(self, dataset: Sequence[TrainSample]) -> Iterator[EpochStats]:
        cfg = self.config
        while self.epoch < cfg.epochs:
            budget = None if cfg.max_steps is None else cfg.max_steps - self.steps
            if budget is not None and budget <= 0:
                return
            stats = train_epoch(self.network, self.optimizer, dataset, cfg, self.epoch, self.rng, budget)
            self.epoch += 1
            self.steps += stats.steps
            yield stats

    # -- persistence -------------------------------------------------------
    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        from .checkpoint import save_checkpoint

        meta = {"train_config": self.config.to_dict(), "rng_state": self.rng.bit_generator.state,
                "steps": self.steps}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.network, self.epoch, meta=meta, optimizer_states=self.optimizer.states)

    @classmethod
    def resume(cls, path: str | Path, config: TrainConfig | None = None) -> Trainer:
        from .checkpoint import load_checkpoint

        ck = load_checkpoint(path)
        cfg = config or TrainConfig.from_dict(ck.meta["train_config"])
        rng = np.random.default_rng()
        if "rng_state" in ck.meta:
            rng.bit_generator.state = ck.meta["rng_state"]
        trainer = cls(ck.network, cfg, rng)
        if ck.optimizer_states is not None:
            trainer.optimizer.states = [ck.optimizer_states[n] for n, _ in ck.network.named_parameters()]
        trainer.epoch = ck.epoch
        trainer.steps = int(ck.meta.get("steps", 0))
        return trainer


__all__ = [
    "EpochStats", "TrainConfig", "TrainSample", "Trainer", "Transform", "augment", "draw_transform",
    "lr_at", "make_sample", "stack_batch", "train_epoch", "train_step",
]
