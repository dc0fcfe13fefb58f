"""Attention-free caption decoder.

Each block runs two mixing stages over float64 tensors:

* **token mixing** -- every output position n gates (sigmoid of a learned
  query map) an exponentially weighted average of value vectors over key
  positions i, with a learned pair-wise bias matrix whose entries above the
  diagonal are pinned to -inf so positions after n contribute exactly zero
  weight::

      y[n] = sigmoid(Q[n]) * sum_i exp(m[n,i]) * exp(K[i]) * V[i]
                             --------------------------------------
                             sum_i exp(m[n,i]) * exp(K[i])

* **frame mixing** -- the same weighted-average form across audio frames l,
  with a learned cross bias z[n, l] that only applies inside a local region
  window: positions with (l - n) >= s keep a neutral exp(0) = 1 weight, so
  the average stays global while the learnable part is local.  A window of
  None disables the rule entirely (the ablation baseline).

Both stages subtract the per-(position, channel) maximum exponent from
numerator and denominator before exponentiating; the ratio is invariant to
that shift, so the stabilization is exact and masked weights underflow to
an exact 0.0.  Residual add + layer norm follows each stage, plus an
optional position-wise feed-forward sublayer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor, add, crop2d, embed, layer_norm, log_softmax, mul, record_op, relu, _sigmoid,
)
from .layers import Linear, collect_parameters

MASK_BIAS = 1e30  # additive stand-in for -inf; exp(-1e30 - max) underflows to exact 0

PAD_ID = 0
SOS_ID = 1
EOS_ID = 2
UNK_ID = 3


def window_inside(n_rows: int, n_cols: int, window: int | None) -> np.ndarray:
    """Boolean (n_rows, n_cols) map of the local region: (col - row) < window.

    Row/column indices enter symmetrically at 0- or 1-base (the offset is a
    difference), and every column at or before the row is always inside.
    ``window=None`` marks everything inside (the no-window baseline).
    """
    if window is None:
        return np.ones((n_rows, n_cols), dtype=bool)
    if window < 1:
        raise ValueError(f"window size must be >= 1, got {window}")
    offs = np.arange(n_cols)[None, :] - np.arange(n_rows)[:, None]
    return offs < window


def _aft_core(bias_ni: np.ndarray, key_bias, k: np.ndarray, v: np.ndarray):
    # bias_ni: (N, I); key_bias: (B, 1, I, 1) additive or None; k, v: (B, I, D)
    a = bias_ni[None, :, :, None] + k[:, None, :, :]
    if key_bias is not None:
        a = a + key_bias
    amax = a.max(axis=2, keepdims=True)
    w = np.exp(a - amax)
    den = w.sum(axis=2)
    num = np.einsum("bnid,bid->bnd", w, v)
    return w, den, num


def _mask_to_bias(mask: np.ndarray | None) -> np.ndarray | None:
    # (B, I) bool, True = usable -> additive (B, 1, I, 1)
    if mask is None:
        return None
    return np.where(np.asarray(mask, dtype=bool), 0.0, -MASK_BIAS)[:, None, :, None]


def aft_mix_weights(bias_ni: np.ndarray, k: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Normalized mixing weights (B, N, I, D); each (b, n, :, d) sums to 1."""
    w, den, _ = _aft_core(bias_ni, _mask_to_bias(mask), k, np.zeros_like(k))
    return w / den[:, :, None, :]


def token_mix(q: Tensor, k: Tensor, v: Tensor, causal_bias: Tensor,
              key_mask: np.ndarray | None = None) -> Tensor:
    """Causal gated mixing over token positions.

    ``causal_bias`` is the learnable (N, N) matrix; entries above the
    diagonal are replaced by -MASK_BIAS here, so their exp-weights are an
    exact 0 and their gradients are exactly zero.  ``key_mask`` (B, N,
    True = real token) additionally removes padded key positions.
    """
    b, n, d = q.shape
    if causal_bias.shape != (n, n):
        raise ValueError(f"causal bias shape {causal_bias.shape} != ({n}, {n})")
    tril = np.tril(np.ones((n, n), dtype=bool))
    meff = np.where(tril, causal_bias.data, -MASK_BIAS)
    kb = _mask_to_bias(key_mask)
    w, den, num = _aft_core(meff, kb, k.data, v.data)
    ratio = num / den
    gate = _sigmoid(q.data)
    out = gate * ratio

    def backward(g):
        dq = g * ratio * gate * (1.0 - gate)
        dr = g * gate
        dnum = dr / den
        dden = -dr * ratio / den
        dw = dnum[:, :, None, :] * v.data[:, None, :, :] + dden[:, :, None, :]
        da = dw * w
        dv = np.einsum("bnid,bnd->bid", w, dnum)
        dk = da.sum(axis=1)
        dm = np.where(tril, da.sum(axis=(0, 3)), 0.0)
        return dq, dk, dv, dm

    return record_op(out, (q, k, v, causal_bias), backward)


def frame_mix(gate_in: Tensor, hk: Tensor, hv: Tensor, cross_bias: Tensor,
              window: int | None, frame_mask: np.ndarray | None = None) -> Tensor:
    """Gated mixing from token positions into audio frames.

    In-window entries of ``cross_bias`` (N, L) apply as learned exponents;
    out-of-window entries are the constant 0 (weight exp(0) = 1), so they
    receive no gradient.  ``frame_mask`` (B, L, True = real frame) removes
    padded frames entirely.
    """
    b, n, d = gate_in.shape
    l = hk.shape[1]
    if cross_bias.shape != (n, l):
        raise ValueError(f"cross bias shape {cross_bias.shape} != ({n}, {l})")
    inside = window_inside(n, l, window)
    zeff = np.where(inside, cross_bias.data, 0.0)
    kb = _mask_to_bias(frame_mask)
    w, den, num = _aft_core(zeff, kb, hk.data, hv.data)
    ratio = num / den
    gate = _sigmoid(gate_in.data)
    out = gate * ratio

    def backward(g):
        dgate = g * ratio * gate * (1.0 - gate)
        dr = g * gate
        dnum = dr / den
        dden = -dr * ratio / den
        dw = dnum[:, :, None, :] * hv.data[:, None, :, :] + dden[:, :, None, :]
        da = dw * w
        dhv = np.einsum("bnld,bnd->bld", w, dnum)
        dhk = da.sum(axis=1)
        dz = np.where(inside, da.sum(axis=(0, 3)), 0.0)
        return dgate, dhk, dhv, dz

    return record_op(out, (gate_in, hk, hv, cross_bias), backward)


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position table, (length, dim)."""
    pos = np.arange(length)[:, None]
    inv = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)[None, :]
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * inv)
    pe[:, 1::2] = np.cos(pos * inv[:, : dim // 2])
    return pe


@dataclass
class DecoderConfig:
    dim: int = 128
    vocab_size: int = 0  # set from the vocabulary before building
    n_blocks: int = 2
    n_max: int = 40       # longest caption (with specials) the bias matrices cover
    l_max: int = 192      # longest audio-feature sequence they cover
    window: int | None = 80  # local region size; None = global baseline
    ffn: bool = True
    ffn_hidden: int = 0   # 0 -> 4 * dim
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.ffn_hidden == 0:
            self.ffn_hidden = 4 * self.dim

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "dim", "vocab_size", "n_blocks", "n_max", "l_max", "window", "ffn", "ffn_hidden", "ln_eps")}

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        return cls(**d)


class DecoderBlock:
    """One mixing block: token mix, frame mix, optional feed-forward."""

    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator, index: int):
        self.cfg = cfg
        d = cfg.dim
        p = f"dec.b{index}"
        self.q_map = Linear(rng, d, d, f"{p}.q")
        self.k_map = Linear(rng, d, d, f"{p}.k")
        self.v_map = Linear(rng, d, d, f"{p}.v")
        self.gate_map = Linear(rng, d, d, f"{p}.gate")
        self.hk_map = Linear(rng, d, d, f"{p}.hk")
        self.hv_map = Linear(rng, d, d, f"{p}.hv")
        # Zero init: uniform averaging at the start, matching the closed-form
        # base cases (running mean / plain mean of values).
        self.causal_bias = Tensor(np.zeros((cfg.n_max, cfg.n_max)), requires_grad=True, name=f"{p}.causal_bias")
        self.cross_bias = Tensor(np.zeros((cfg.n_max, cfg.l_max)), requires_grad=True, name=f"{p}.cross_bias")
        self.ln1_g = Tensor(np.ones(d), requires_grad=True, name=f"{p}.ln1.g")
        self.ln1_b = Tensor(np.zeros(d), requires_grad=True, name=f"{p}.ln1.b")
        self.ln2_g = Tensor(np.ones(d), requires_grad=True, name=f"{p}.ln2.g")
        self.ln2_b = Tensor(np.zeros(d), requires_grad=True, name=f"{p}.ln2.b")
        if cfg.ffn:
            self.ff1 = Linear(rng, d, cfg.ffn_hidden, f"{p}.ff1")
            self.ff2 = Linear(rng, cfg.ffn_hidden, d, f"{p}.ff2")
            self.ln3_g = Tensor(np.ones(d), requires_grad=True, name=f"{p}.ln3.g")
            self.ln3_b = Tensor(np.zeros(d), requires_grad=True, name=f"{p}.ln3.b")

    def __call__(self, y: Tensor, feats: Tensor, frame_mask, key_mask) -> Tensor:
        cfg = self.cfg
        n, l = y.shape[1], feats.shape[1]
        mixed = token_mix(self.q_map(y), self.k_map(y), self.v_map(y),
                          crop2d(self.causal_bias, n, n), key_mask)
        a = layer_norm(add(mixed, y), self.ln1_g, self.ln1_b, cfg.ln_eps)
        crossed = frame_mix(self.gate_map(a), self.hk_map(feats), self.hv_map(feats),
                            crop2d(self.cross_bias, n, l), cfg.window, frame_mask)
        b = layer_norm(add(crossed, a), self.ln2_g, self.ln2_b, cfg.ln_eps)
        if cfg.ffn:
            b = layer_norm(add(self.ff2(relu(self.ff1(b))), b), self.ln3_g, self.ln3_b, cfg.ln_eps)
        return b

    def parameters(self):
        out = []
        for lin in (self.q_map, self.k_map, self.v_map, self.gate_map, self.hk_map, self.hv_map):
            out += lin.parameters()
        out += [self.causal_bias, self.cross_bias,
                self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b]
        if self.cfg.ffn:
            out += self.ff1.parameters() + self.ff2.parameters() + [self.ln3_g, self.ln3_b]
        return out


class Decoder:
    """Embedding + positions -> stacked mixing blocks -> vocab log-posterior."""

    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator,
                 embedding: np.ndarray | None = None):
        if cfg.vocab_size < 4:
            raise ValueError("vocab must cover the reserved special tokens")
        self.cfg = cfg
        d = cfg.dim
        if embedding is not None:
            if embedding.shape != (cfg.vocab_size, d):
                raise ValueError(f"embedding table shape {embedding.shape} != ({cfg.vocab_size}, {d})")
            table = np.array(embedding, dtype=np.float64)
        else:
            table = rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.vocab_size, d))
        table[PAD_ID] = 0.0
        self.embed_table = Tensor(table, requires_grad=True, name="dec.embed")
        self.pos = sinusoidal_encoding(cfg.n_max, d)
        self.blocks = [DecoderBlock(cfg, rng, i) for i in range(cfg.n_blocks)]
        self.out = Linear(rng, d, cfg.vocab_size, "dec.out")
        self.embed_scale = float(np.sqrt(d))

    def forward(self, tokens: np.ndarray, feats: Tensor,
                frame_mask: np.ndarray | None = None,
                key_mask: np.ndarray | None = None) -> Tensor:
        """Log-posterior rows: row n scores the next token after position n.

        ``tokens``: (B, N) int ids starting with the start-of-sequence id.
        ``feats``: (B, L, D) audio features.  Masks are True at real entries.
        """
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ValueError("tokens must be (batch, positions)")
        b, n = tokens.shape
        if n > self.cfg.n_max:
            raise ValueError(f"caption length {n} exceeds n_max {self.cfg.n_max}")
        if feats.shape[1] > self.cfg.l_max:
            raise ValueError(f"feature length {feats.shape[1]} exceeds l_max {self.cfg.l_max}")
        if tokens.max() >= self.cfg.vocab_size:
            raise ValueError("token id out of vocabulary range")
        y = embed(self.embed_table, tokens)
        y = add(mul(y, Tensor(self.embed_scale)), Tensor(self.pos[:n]))
        for block in self.blocks:
            y = block(y, feats, frame_mask, key_mask)
        return log_softmax(self.out(y))

    def parameters(self) -> dict[str, Tensor]:
        out = [self.embed_table] + self.out.parameters()
        for blk in self.blocks:
            out += blk.parameters()
        return collect_parameters(out)
