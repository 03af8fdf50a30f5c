"""Supervised training: Adam, cyclic learning rate, augmentation, checkpoints, fine-tuning."""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.ndimage import rotate

from . import io
from .autodiff import Tensor
from .loss import LossBalancer, composite_loss, update_alpha
from .network import Model, NetworkConfig, build_network, forward
from .volume import IncompatibleGridError, Volume

log = logging.getLogger(__name__)


class TrainingDiverged(ArithmeticError):
    def __init__(self, step: int, what: str = "gradient", checkpoint: Optional[str] = None):
        msg = f"non-finite {what} at step {step}"
        if checkpoint:
            msg += f"; last good checkpoint: {checkpoint}"
        super().__init__(msg)
        self.step = step
        self.checkpoint = checkpoint


class IncompatibleCheckpointError(ValueError):
    pass


class TrainConfigError(ValueError):
    pass


# --- optimizer -------------------------------------------------------------------

@dataclass
class OptimizerState:
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence, state: OptimizerState, lr: float):
    """One bias-corrected Adam update in place.  ``None`` grads count as zero."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    step = state.step + 1
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingDiverged(step)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = 0.0
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    state.step = step


# --- learning rate -----------------------------------------------------------------

@dataclass(frozen=True)
class LrSchedule:
    lower: float = 5e-6
    upper: float = 4.5e-5
    cycle: int = 256  # steps per full triangle
    gamma: float = 0.99  # amplitude factor per cycle

    def __post_init__(self):
        if not 0 < self.lower <= self.upper:
            raise TrainConfigError("need 0 < lower <= upper")
        if self.cycle < 1:
            raise TrainConfigError("cycle must be >= 1 step")
        if not 0 < self.gamma <= 1:
            raise TrainConfigError("gamma must lie in (0, 1]")


def cyclic_lr(step: int, schedule: LrSchedule = LrSchedule()) -> float:
    """Triangular wave starting at the lower bound; the peak of cycle k is lower + (upper - lower) gamma^k."""
    if step < 0:
        raise ValueError("step must be >= 0")
    k, pos = divmod(step, schedule.cycle)
    frac = pos / schedule.cycle
    tri = 1.0 - abs(2.0 * frac - 1.0)
    return schedule.lower + (schedule.upper - schedule.lower) * schedule.gamma ** k * tri


# --- samples and augmentation ---------------------------------------------------------

class TrainingSample(NamedTuple):
    histo: np.ndarray
    mu: np.ndarray
    target: np.ndarray

    @classmethod
    def from_volumes(cls, histo: Volume, mu: Volume, target: Volume) -> "TrainingSample":
        if not (histo.grid == mu.grid == target.grid):
            raise IncompatibleGridError("histo, mu and target must share one grid")
        return cls(np.asarray(histo.data), np.asarray(mu.data), np.asarray(target.data))

    def check(self):
        if not (self.histo.shape == self.mu.shape == self.target.shape) or self.histo.ndim != 3:
            raise IncompatibleGridError("histo, mu and target must be (d, h, w) of one shape")
        return self


class AugmentParams(NamedTuple):
    angle: float = 0.0  # degrees, rotation in the transaxial plane
    flip_h: bool = False  # mirror width
    flip_v: bool = False  # mirror height
    scale: float = 1.0  # applied to histo and target only
    crop: Optional[tuple] = None  # (z0, y0, x0) corner; None = centered


@dataclass(frozen=True)
class AugmentConfig:
    max_angle: float = 40.0
    flip_prob: float = 0.5
    scale_range: tuple = (0.5, 1.5)
    enabled: bool = True


def draw_augment(rng: np.random.Generator, shape, crop_shape, cfg: AugmentConfig = AugmentConfig()) -> AugmentParams:
    d, h, w = shape
    cd, ch, cw = crop_shape
    corner = (int(rng.integers(0, d - cd + 1)), int(rng.integers(0, h - ch + 1)),
              int(rng.integers(0, w - cw + 1)))
    if not cfg.enabled:
        return AugmentParams(crop=corner)
    return AugmentParams(
        angle=float(rng.uniform(-cfg.max_angle, cfg.max_angle)),
        flip_h=bool(rng.random() < cfg.flip_prob),
        flip_v=bool(rng.random() < cfg.flip_prob),
        scale=float(rng.uniform(*cfg.scale_range)),
        crop=corner,
    )


def augment(sample: TrainingSample, crop_shape=None, params: Optional[AugmentParams] = None,
            rng=None, cfg: AugmentConfig = AugmentConfig()) -> TrainingSample:
    """Rotate, flip, scale and crop one triple with shared geometric parameters.

    Pass ``params`` to force the transform, otherwise it is drawn from ``rng``.
    """
    sample = TrainingSample(*sample).check()
    shape = sample.histo.shape
    crop_shape = tuple(shape if crop_shape is None else crop_shape)
    if len(crop_shape) == 2:
        crop_shape = (shape[0],) + crop_shape
    if any(c > s for c, s in zip(crop_shape, shape)):
        raise TrainConfigError(f"crop {crop_shape} larger than volume {shape}")
    if params is None:
        params = draw_augment(np.random.default_rng(rng), shape, crop_shape, cfg)
    corner = params.crop
    if corner is None:
        corner = tuple((s - c) // 2 for s, c in zip(shape, crop_shape))
    sl = tuple(slice(o, o + c) for o, c in zip(corner, crop_shape))

    def geo(vol):
        v = vol
        if params.angle:
            v = rotate(v, params.angle, axes=(1, 2), reshape=False, order=1, mode="constant", cval=0.0)
        if params.flip_h:
            v = v[:, :, ::-1]
        if params.flip_v:
            v = v[:, ::-1, :]
        return np.ascontiguousarray(v[sl])

    histo = geo(sample.histo)
    target = geo(sample.target)
    mu = geo(sample.mu)
    if params.scale != 1.0:
        histo = histo * params.scale
        target = target * params.scale
    return TrainingSample(histo, mu, target)


# --- training loop ----------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    samples_per_epoch: int = 2048
    batch_size: int = 1
    iterations: Optional[int] = None  # overrides epochs * samples_per_epoch / batch_size
    crop: tuple = (96, 96)
    crop_depth: Optional[int] = 96  # None keeps the full depth
    seed: int = 0
    lr_lower: float = 5e-6
    lr_upper: float = 4.5e-5
    lr_cycle_epochs: float = 2.0
    lr_gamma: float = 0.99
    alpha_window: int = 50
    augment: bool = True
    sampling: str = "random"  # "random": with replacement; "cycle": dataset order, wrapping
    normalize: str = "none"  # "none" or "global"
    dtype: str = "float32"
    checkpoint_every: int = 0  # iterations; 0 disables periodic checkpoints
    checkpoint_dir: Optional[str] = None
    prefetch: int = 2

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainConfigError("batch_size must be >= 1")
        if self.samples_per_epoch < 1 or self.epochs < 0:
            raise TrainConfigError("epochs must be >= 0 and samples_per_epoch >= 1")
        if self.sampling not in ("random", "cycle"):
            raise TrainConfigError("sampling must be 'random' or 'cycle'")
        if self.normalize not in ("none", "global"):
            raise TrainConfigError("normalize must be 'none' or 'global'")
        if self.iterations is not None and self.iterations < 0:
            raise TrainConfigError("iterations must be >= 0")

    @property
    def iterations_per_epoch(self) -> int:
        return max(1, self.samples_per_epoch // self.batch_size)

    @property
    def total_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return self.epochs * self.iterations_per_epoch

    def schedule(self) -> LrSchedule:
        cycle = max(1, int(round(self.lr_cycle_epochs * self.iterations_per_epoch)))
        return LrSchedule(self.lr_lower, self.lr_upper, cycle, self.lr_gamma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crop"] = list(self.crop)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise TrainConfigError(f"unknown training keys: {sorted(unknown)}")
        d = dict(d)
        if "crop" in d:
            c = d["crop"]
            d["crop"] = tuple(int(v) for v in (c if isinstance(c, (list, tuple)) else (c, c)))
        return cls(**d)


@dataclass
class TrainResult:
    model: Model
    history: list
    optimizer: OptimizerState
    balancer: LossBalancer
    step: int
    last_checkpoint: Optional[str] = None


def global_scales(dataset: Sequence[TrainingSample]) -> dict:
    """Dataset-wide scalars bringing histo, mu and target to roughly unit peak."""
    def peak(arrays):
        vals = [float(np.max(a)) for a in arrays]
        m = float(np.mean(vals))
        return m if m > 0 else 1.0
    return {"histo_scale": peak(s.histo for s in dataset),
            "mu_scale": peak(s.mu for s in dataset),
            "output_scale": peak(s.target for s in dataset)}


def make_batch(dataset: Sequence[TrainingSample], cfg: TrainConfig, step: int):
    """The (input, target) batch for ``step``; a pure function of (seed, step)."""
    rng = np.random.default_rng([cfg.seed, step])
    if cfg.sampling == "cycle":
        idx = (step * cfg.batch_size + np.arange(cfg.batch_size)) % len(dataset)
    else:
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
    shape = dataset[0].histo.shape
    crop = (shape[0] if cfg.crop_depth is None else min(cfg.crop_depth, shape[0]),) + \
        tuple(min(c, s) for c, s in zip(cfg.crop, shape[1:]))
    aug_cfg = AugmentConfig(enabled=cfg.augment)
    xs, ys = [], []
    for i in idx:
        s = augment(dataset[i], crop, rng=rng, cfg=aug_cfg)
        xs.append(np.stack([s.histo, s.mu]))
        ys.append(s.target[None])
    dtype = np.dtype(cfg.dtype)
    return np.stack(xs).astype(dtype), np.stack(ys).astype(dtype)


def _batches(dataset, cfg: TrainConfig, start: int, stop: int):
    """Yield batches in step order, optionally produced ahead by a helper thread."""
    if cfg.prefetch <= 0:
        for step in range(start, stop):
            yield make_batch(dataset, cfg, step)
        return
    q: queue.Queue = queue.Queue(maxsize=cfg.prefetch)
    stop_flag = threading.Event()

    def produce():
        try:
            for step in range(start, stop):
                item = make_batch(dataset, cfg, step)
                while not stop_flag.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop_flag.is_set():
                    return
        except BaseException as exc:  # surfaced in the consumer
            q.put(exc)

    t = threading.Thread(target=produce, daemon=True)
    t.start()
    try:
        for _ in range(start, stop):
            item = q.get()
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop_flag.set()
        t.join()


def save_checkpoint(path, model: Model, optimizer: Optional[OptimizerState] = None,
                    balancer: Optional[LossBalancer] = None, step: int = 0,
                    train_config: Optional[TrainConfig] = None) -> None:
    extra = {"step": step}
    if balancer is not None:
        extra["balancer"] = balancer.state()
    if train_config is not None:
        extra["train_config"] = train_config.to_dict()
    opt = None
    if optimizer is not None and optimizer.m:
        opt = (optimizer.step, optimizer.m, optimizer.v)
        extra["adam"] = {"beta1": optimizer.beta1, "beta2": optimizer.beta2, "eps": optimizer.eps}
    io.write_checkpoint(path, model.config.to_dict(), model.state(), opt, extra)


def load_checkpoint(path):
    """Return ``(model, optimizer_state_or_None, extra)``."""
    ck = io.read_checkpoint(path)
    config = NetworkConfig.from_dict(ck["network"])
    model = build_network(config, rng=0)
    try:
        model.load_state(ck["params"])
    except ValueError as exc:
        raise IncompatibleCheckpointError(str(exc)) from exc
    opt = None
    if ck["optimizer"] is not None:
        step, m, v = ck["optimizer"]
        hyper = ck["extra"].get("adam", {})
        opt = OptimizerState(step=step, m=m, v=v, **hyper)
    return model, opt, ck["extra"]


def train(dataset: Sequence[TrainingSample], net_config: Optional[NetworkConfig] = None,
          train_config: TrainConfig = TrainConfig(), model: Optional[Model] = None,
          optimizer: Optional[OptimizerState] = None, balancer: Optional[LossBalancer] = None,
          start_step: int = 0, on_step: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Minimize the composite loss over (optionally augmented) batches.

    Pass ``model``/``optimizer``/``balancer``/``start_step`` to resume.  With
    ``normalize="global"`` a fresh model gets dataset-derived input and output
    scales.  Each iteration's batch depends only on ``(seed, step)``.
    """
    if not dataset:
        raise TrainConfigError("empty dataset")
    dataset = [TrainingSample(*s).check() for s in dataset]
    cfg = train_config
    if model is None:
        net_config = net_config or NetworkConfig()
        if cfg.normalize == "global":
            net_config = replace(net_config, **global_scales(dataset))
        model = build_network(net_config, rng=cfg.seed)
    d, h, w = dataset[0].histo.shape
    ch, cw = (min(c, s) for c, s in zip(cfg.crop, (h, w)))
    div = model.config.divisor
    if ch % div or cw % div:
        raise TrainConfigError(f"crop {ch}x{cw} not divisible by {div}")
    optimizer = optimizer or OptimizerState()
    balancer = balancer or LossBalancer(cfg.alpha_window)
    schedule = cfg.schedule()
    params = model.parameters()
    dtype = np.dtype(cfg.dtype)
    history = []
    last_ck = None
    stop = cfg.total_iterations
    ckdir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckdir:
        ckdir.mkdir(parents=True, exist_ok=True)

    step = start_step
    for x, y in _batches(dataset, cfg, start_step, stop):
        lr = cyclic_lr(step, schedule)
        model.zero_grad()
        pred = forward(model, Tensor(x), dtype)
        terms = composite_loss(pred, Tensor(y), balancer)
        total = terms.total.item()
        if not np.isfinite(total):
            raise TrainingDiverged(step, "loss", last_ck)
        terms.total.backward()
        try:
            adam_step(params, [p.grad for p in params], optimizer, lr)
        except TrainingDiverged as exc:
            raise TrainingDiverged(step, "gradient", last_ck) from exc
        record = {"step": step, "lr": lr, "alpha": terms.alpha, "mae": terms.mae,
                  "ssim_loss": terms.ssim_loss, "total": total}
        update_alpha(balancer)
        history.append(record)
        if on_step:
            on_step(record)
        step += 1
        if ckdir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            last_ck = str(ckdir / f"step{step:07d}.hnet")
            save_checkpoint(last_ck, model, optimizer, balancer, step, cfg)
    if ckdir:
        last_ck = str(ckdir / "final.hnet")
        save_checkpoint(last_ck, model, optimizer, balancer, step, cfg)
    return TrainResult(model, history, optimizer, balancer, step, last_ck)


def fine_tune(base, dataset: Sequence[TrainingSample], train_config: TrainConfig,
              net_config: Optional[NetworkConfig] = None, on_step=None) -> TrainResult:
    """Continue training from ``base`` (a Model or checkpoint path) with fresh optimizer state."""
    if isinstance(base, (str, Path)):
        base, _, _ = load_checkpoint(base)
    if net_config is not None and net_config.architecture() != base.config.architecture():
        raise IncompatibleCheckpointError(
            f"checkpoint architecture {base.config.architecture()} != {net_config.architecture()}")
    model = build_network(base.config, rng=0)
    model.load_state(base.state())
    return train(dataset, train_config=train_config, model=model, optimizer=OptimizerState(),
                 balancer=LossBalancer(train_config.alpha_window), on_step=on_step)


def moving_average(values, width: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < width:
        return np.empty(0)
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[width:] - c[:-width]) / width
