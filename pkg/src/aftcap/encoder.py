"""CNN encoder that turns a log-mel spectrogram into audio features.

Four convolutional blocks (two 3x3 convs with batch norm + ReLU each, then
2x2 average pooling), global mean over the mel axis, and two linear layers
down to the feature dim.  Channel widths double block to block; desk-scale
defaults are a quarter of the full-size (64, 128, 256, 512) configuration so
training stays in CPU minutes.

The time axis is zero-padded up to a multiple of 16 before the blocks, so
the output length is always L = ceil(T / 16).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor, add, avgpool2d, batch_norm_nchw, conv2d, div, mul, relu, sqrt, sub, tmean, transpose,
)
from .layers import Linear, collect_parameters


@dataclass
class EncoderConfig:
    channels: tuple = (16, 32, 64, 128)  # full-size: (64, 128, 256, 512)
    out_dim: int = 128
    use_batchnorm: bool = True
    mel_bands: int = 64
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(self.channels) != 4 or any(b != 2 * a for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError(f"channels must be four values doubling each block, got {self.channels}")
        if self.out_dim <= 0:
            raise ValueError("out_dim must be positive")
        if self.mel_bands < 16:
            raise ValueError("mel_bands must be >= 16 to survive four 2x2 poolings")

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "out_dim": self.out_dim,
                "use_batchnorm": self.use_batchnorm, "mel_bands": self.mel_bands,
                "bn_momentum": self.bn_momentum, "bn_eps": self.bn_eps}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(channels=tuple(d["channels"]), out_dim=d["out_dim"],
                   use_batchnorm=d["use_batchnorm"], mel_bands=d["mel_bands"],
                   bn_momentum=d.get("bn_momentum", 0.9), bn_eps=d.get("bn_eps", 1e-5))


class BatchNorm:
    """Per-channel normalization over (batch, height, width).

    Train mode standardizes with batch statistics (differentiable through
    them) and folds those statistics into the running averages; eval mode
    uses the running averages as constants.  With ``affine_only`` it
    degrades to a plain learned scale and shift.
    """

    def __init__(self, channels: int, name: str, momentum: float = 0.9,
                 eps: float = 1e-5, affine_only: bool = False):
        shape = (1, channels, 1, 1)
        self.gamma = Tensor(np.ones(shape), requires_grad=True, name=f"{name}.g")
        self.beta = Tensor(np.zeros(shape), requires_grad=True, name=f"{name}.b")
        self.run_mu = np.zeros(shape)
        self.run_var = np.ones(shape)
        self.initialized = False
        self.momentum = momentum
        self.eps = eps
        self.affine_only = affine_only
        self.name = name

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if self.affine_only:
            return add(mul(x, self.gamma), self.beta)
        if train:
            mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
            var = x.data.var(axis=(0, 2, 3), keepdims=True)
            m = self.momentum
            self.run_mu = m * self.run_mu + (1 - m) * mu
            self.run_var = m * self.run_var + (1 - m) * var
            self.initialized = True
            return batch_norm_nchw(x, self.gamma, self.beta, self.eps)
        if not self.initialized:
            raise RuntimeError(f"{self.name}: uninitialized running stats (eval before any train step)")
        xhat = div(sub(x, Tensor(self.run_mu)), sqrt(Tensor(self.run_var + self.eps)))
        return add(mul(xhat, self.gamma), self.beta)

    def parameters(self):
        return [self.gamma, self.beta]

    def state(self) -> dict[str, np.ndarray]:
        if self.affine_only:
            return {}
        return {f"{self.name}.run_mu": self.run_mu,
                f"{self.name}.run_var": self.run_var,
                f"{self.name}.init": np.array([1.0 if self.initialized else 0.0])}

    def load_state(self, state: dict[str, np.ndarray]):
        if self.affine_only:
            return
        self.run_mu = np.array(state[f"{self.name}.run_mu"])
        self.run_var = np.array(state[f"{self.name}.run_var"])
        self.initialized = bool(state[f"{self.name}.init"][0])


class ConvBlock:
    def __init__(self, rng, c_in: int, c_out: int, cfg: EncoderConfig, name: str):
        def kaiming(ci):
            return rng.normal(0.0, np.sqrt(2.0 / (ci * 9)), size=(c_out, ci, 3, 3))

        self.w1 = Tensor(kaiming(c_in), requires_grad=True, name=f"{name}.c1.w")
        self.b1 = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.c1.b")
        self.w2 = Tensor(kaiming(c_out), requires_grad=True, name=f"{name}.c2.w")
        self.b2 = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.c2.b")
        affine = not cfg.use_batchnorm
        self.bn1 = BatchNorm(c_out, f"{name}.bn1", cfg.bn_momentum, cfg.bn_eps, affine_only=affine)
        self.bn2 = BatchNorm(c_out, f"{name}.bn2", cfg.bn_momentum, cfg.bn_eps, affine_only=affine)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        x = relu(self.bn1(conv2d(x, self.w1, self.b1, pad=1), train))
        x = relu(self.bn2(conv2d(x, self.w2, self.b2, pad=1), train))
        return avgpool2d(x, 2)

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2] + self.bn1.parameters() + self.bn2.parameters()

    def state(self):
        return {**self.bn1.state(), **self.bn2.state()}

    def load_state(self, state):
        self.bn1.load_state(state)
        self.bn2.load_state(state)


class CnnEncoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        chans = (1,) + cfg.channels
        self.blocks = [ConvBlock(rng, chans[i], chans[i + 1], cfg, f"enc.b{i}") for i in range(4)]
        top = cfg.channels[-1]
        self.fc1 = Linear(rng, top, top, "enc.fc1")
        self.fc2 = Linear(rng, top, cfg.out_dim, "enc.fc2")

    def encode(self, spec: np.ndarray, train: bool = False) -> Tensor:
        """Map (B, T, F) or (T, F) log-mel frames to (B, L, D) features."""
        spec = np.asarray(spec, dtype=np.float64)
        if spec.ndim == 2:
            spec = spec[None]
        b, t, f = spec.shape
        if t < 16:
            raise ValueError(f"need at least 16 time frames, got {t}")
        if f != self.cfg.mel_bands:
            raise ValueError(f"expected {self.cfg.mel_bands} mel bands, got {f}")
        if t % 16:
            spec = np.concatenate([spec, np.zeros((b, 16 - t % 16, f))], axis=1)
        x = Tensor(spec[:, None, :, :])  # (B, 1, T, F)
        for block in self.blocks:
            x = block(x, train)
        pooled = tmean(x, axis=3)               # mel-axis global pool -> (B, C, L)
        feats = transpose(pooled, (0, 2, 1))    # (B, L, C)
        return self.fc2(relu(self.fc1(feats)))

    def out_len(self, t: int) -> int:
        return -(-t // 16)  # ceil

    def parameters(self) -> dict[str, Tensor]:
        out = []
        for blk in self.blocks:
            out += blk.parameters()
        out += self.fc1.parameters() + self.fc2.parameters()
        return collect_parameters(out)

    def state(self) -> dict[str, np.ndarray]:
        merged = {}
        for blk in self.blocks:
            merged.update(blk.state())
        return merged

    def load_state(self, state: dict[str, np.ndarray]):
        for blk in self.blocks:
            blk.load_state(state)
