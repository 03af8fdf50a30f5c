"""3-D U-Net for histo-image reconstruction.

Layout (C_k = base_channels * 2**k, k = 0 .. levels-1):

    entry      conv 2 -> C_0, then ``entry_residual`` residual blocks
    contract   per level k >= 1: stride-(1,2,2) conv C_{k-1} -> C_k, then
               ``convs_per_level`` convs
    bottleneck ``bottleneck_convs`` convs at C_{levels-1}
    expand     per level k, from deep to shallow: transposed conv
               C_{k+1} -> C_k (3x4x4, doubles h and w), concatenation with the
               contracting output at level k, conv 2 C_k -> C_k, then
               ``convs_per_level - 1`` convs
    exit       ``exit_residual`` residual blocks, then a 1-channel 3x3x3
               projection with no activation

Every conv except the projection is followed by a PReLU.  A residual block is
conv, PReLU, conv, add input, PReLU.  ``layer_count`` counts conv and
transposed-conv layers; activations, additions and concatenations are not
layers.  Depth is never resampled.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import (ShapeError, Tensor, add, concat_channels, conv3d, conv3d_transpose,
                       no_grad, prelu)

INPUT_CHANNELS = 2
OUTPUT_CHANNELS = 1
DOWN_STRIDE = (1, 2, 2)
UP_KERNEL = (3, 4, 4)
PRELU_INIT = 0.25


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 8
    resolution_levels: int = 2
    entry_residual: int = 1
    exit_residual: int = 1
    convs_per_level: int = 1
    bottleneck_convs: int = 1
    # global input/output scaling; 1.0 means raw units in and out
    histo_scale: float = 1.0
    mu_scale: float = 1.0
    output_scale: float = 1.0

    def __post_init__(self):
        for name in ("base_channels", "resolution_levels", "convs_per_level"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("entry_residual", "exit_residual", "bottleneck_convs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("histo_scale", "mu_scale", "output_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")

    @property
    def divisor(self) -> int:
        return 2 ** (self.resolution_levels - 1)

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def architecture(self) -> dict:
        """Fields that determine parameter shapes."""
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.endswith("_scale")}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**{k: (float(v) if k.endswith("_scale") else int(v)) for k, v in d.items()})


REFERENCE_CONFIG = NetworkConfig(base_channels=21, resolution_levels=5, entry_residual=1,
                                 exit_residual=1, convs_per_level=2, bottleneck_convs=1)
DESK_CONFIG = NetworkConfig()


class Model:
    """Parameters plus the ordered layer plan that ``forward`` walks."""

    def __init__(self, config: NetworkConfig, params: dict, plan: list):
        self.config = config
        self.params = params  # name -> float64 Tensor, insertion ordered
        self.plan = plan

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict):
        if list(state) != list(self.params):
            raise ShapeError("parameter names differ from the model layout")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ShapeError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def with_scales(self, **scales) -> "Model":
        cfg = NetworkConfig(**{**self.config.to_dict(), **scales})
        return Model(cfg, self.params, self.plan)

    def __call__(self, x, dtype=np.float64):
        return forward(self, x, dtype)


def _conv_param(rng, out_c, in_c, kernel, fan_in, gain):
    std = gain * np.sqrt(1.0 / fan_in)
    return rng.normal(0.0, std, size=(out_c, in_c) + tuple(kernel))


def build_network(config: NetworkConfig = DESK_CONFIG, rng=0) -> Model:
    """Build the U-Net with Kaiming fan-in initialization from seed ``rng``."""
    if not isinstance(config, NetworkConfig):
        raise ConfigError("config must be a NetworkConfig")
    rng = np.random.default_rng(rng)
    params: dict = {}
    plan: list = []
    relu_gain = np.sqrt(2.0 / (1.0 + PRELU_INIT ** 2))

    def conv(name, in_c, out_c, stride=(1, 1, 1), act=True):
        k = (3, 3, 3)
        params[name + ".w"] = Tensor(_conv_param(rng, out_c, in_c, k, in_c * 27, relu_gain if act else 1.0),
                                     requires_grad=True)
        params[name + ".b"] = Tensor(np.zeros(out_c), requires_grad=True)
        if act:
            params[name + ".a"] = Tensor(np.full(out_c, PRELU_INIT), requires_grad=True)
        return ("conv", name, stride, act)

    def up(name, in_c, out_c):
        # weight layout (in_c, out_c, k): adjoint of a strided conv out_c -> in_c
        fan_in = in_c * int(np.prod(UP_KERNEL)) / (DOWN_STRIDE[1] * DOWN_STRIDE[2])
        w = _conv_param(rng, in_c, out_c, UP_KERNEL, fan_in, relu_gain)
        params[name + ".w"] = Tensor(w, requires_grad=True)
        params[name + ".b"] = Tensor(np.zeros(out_c), requires_grad=True)
        params[name + ".a"] = Tensor(np.full(out_c, PRELU_INIT), requires_grad=True)
        return ("up", name)

    def residual(name, c):
        conv(name + ".c1", c, c)
        conv(name + ".c2", c, c, act=False)
        params[name + ".a"] = Tensor(np.full(c, PRELU_INIT), requires_grad=True)
        return ("res", name)

    L = config.resolution_levels
    C = [config.channels(k) for k in range(L)]
    plan.append(conv("entry", INPUT_CHANNELS, C[0]))
    for r in range(config.entry_residual):
        plan.append(residual(f"entry_res{r}", C[0]))
    for k in range(1, L):
        plan.append(("skip", k - 1))
        plan.append(conv(f"down{k}.0", C[k - 1], C[k], stride=DOWN_STRIDE))
        for j in range(config.convs_per_level):
            plan.append(conv(f"down{k}.{j + 1}", C[k], C[k]))
    for j in range(config.bottleneck_convs):
        plan.append(conv(f"bottleneck{j}", C[-1], C[-1]))
    for k in range(L - 2, -1, -1):
        plan.append(up(f"up{k}.t", C[k + 1], C[k]))
        plan.append(("concat", k))
        plan.append(conv(f"up{k}.0", 2 * C[k], C[k]))
        for j in range(config.convs_per_level - 1):
            plan.append(conv(f"up{k}.{j + 1}", C[k], C[k]))
    for r in range(config.exit_residual):
        plan.append(residual(f"exit_res{r}", C[0]))
    plan.append(conv("project", C[0], OUTPUT_CHANNELS, act=False))
    return Model(config, params, plan)


def param_count(model: Model) -> int:
    return int(sum(p.data.size for p in model.params.values()))


def layer_count(model: Model) -> int:
    n = 0
    for step in model.plan:
        if step[0] in ("conv", "up"):
            n += 1
        elif step[0] == "res":
            n += 2
    return n


def forward(model: Model, x, dtype=np.float64) -> Tensor:
    """Map a (b, 2, d, h, w) input to a (b, 1, d, h, w) activity estimate.

    Parameters are cast to ``dtype`` for the pass; gradients flow back to the
    float64 masters.
    """
    cfg = model.config
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    if x.ndim != 5 or x.shape[1] != INPUT_CHANNELS:
        raise ShapeError(f"input must be (b, {INPUT_CHANNELS}, d, h, w), got {x.shape}")
    b, _, d, h, w = x.shape
    if h % cfg.divisor or w % cfg.divisor:
        raise ShapeError(f"height and width must be divisible by {cfg.divisor} "
                         f"for {cfg.resolution_levels} resolution levels, got {h}x{w}")
    x = x.astype(dtype)
    if cfg.histo_scale != 1.0 or cfg.mu_scale != 1.0:
        scale = np.array([1.0 / cfg.histo_scale, 1.0 / cfg.mu_scale], dtype=dtype).reshape(1, 2, 1, 1, 1)
        x = x * scale

    cache: dict = {}

    def P(name):
        key = (name, dtype)
        if key not in cache:
            cache[key] = model.params[name].astype(dtype)
        return cache[key]

    def run_conv(t, name, stride, act):
        out = conv3d(t, P(name + ".w"), P(name + ".b"), stride=stride)
        return prelu(out, P(name + ".a")) if act else out

    skips = {}
    for step in model.plan:
        kind = step[0]
        if kind == "conv":
            x = run_conv(x, *step[1:])
        elif kind == "res":
            name = step[1]
            y = run_conv(x, name + ".c1", (1, 1, 1), True)
            y = run_conv(y, name + ".c2", (1, 1, 1), False)
            x = prelu(add(x, y), P(name + ".a"))
        elif kind == "skip":
            skips[step[1]] = x
        elif kind == "up":
            name = step[1]
            x = prelu(conv3d_transpose(x, P(name + ".w"), P(name + ".b"), stride=DOWN_STRIDE),
                      P(name + ".a"))
        elif kind == "concat":
            skip = skips.pop(step[1])
            if skip.shape[2:] != x.shape[2:]:
                raise ShapeError(f"skip {skip.shape} and upsampled {x.shape} differ")
            x = concat_channels(x, skip)
        if x.shape[2] != d:
            raise ShapeError("depth changed inside the network")
    if cfg.output_scale != 1.0:
        x = x * cfg.output_scale
    return x


def predict(model: Model, histo: np.ndarray, mu: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Inference on one (d, h, w) histo-image and μ-map pair; returns (d, h, w)."""
    if histo.shape != mu.shape:
        raise ShapeError(f"histo {histo.shape} and mu {mu.shape} differ")
    x = np.stack([histo, mu])[None].astype(dtype)
    with no_grad():
        out = forward(model, Tensor(x), dtype)
    return out.data[0, 0]
