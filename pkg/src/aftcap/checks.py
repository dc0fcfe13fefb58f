"""Numerical gradient checking against central finite differences.

This is the independent oracle for every analytic gradient in the package:
it only ever calls the forward function, never the tape.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


def central_difference(f, tensors, h: float = 1e-5):
    """Numerical d f / d t for each tensor, by central differences.

    ``f()`` recomputes the scalar loss from the tensors' current data (it
    must close over them).  Entries are perturbed in place one at a time.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = float(f())
            flat[i] = keep - h
            fm = float(f())
            flat[i] = keep
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max over entries of |a - n| / max(1, |a|, |n|)."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(make_loss, params, h: float = 1e-5, tol: float = 1e-4):
    """Compare tape gradients of ``make_loss`` with central differences.

    ``make_loss(want_grad)`` recomputes the scalar loss from the params'
    current data; when ``want_grad`` it also runs backward, leaving ``.grad``
    populated.  Returns {param name: rel error} and raises AssertionError
    listing offenders beyond ``tol``.
    """
    for p in params:
        p.grad = None
    loss_value = make_loss(True)
    analytic = {p.name or f"param{i}": np.array(p.grad) for i, p in enumerate(params)}
    numeric = central_difference(lambda: make_loss(False), params, h=h)
    errors = {}
    for (name, a), n in zip(analytic.items(), numeric):
        errors[name] = relative_error(a, n)
    bad = {k: v for k, v in errors.items() if v > tol}
    if bad:
        raise AssertionError(f"gradient check failed (tol={tol}): {bad}; loss={loss_value}")
    return errors


def assert_tensor(t) -> Tensor:
    if not isinstance(t, Tensor):
        raise TypeError(f"expected Tensor, got {type(t)}")
    return t


def full_gradient_check(seed: int = 0, tol: float = 1e-4) -> dict[str, float]:
    """Finite-difference audit of every parameter class in the model.

    Runs the complete caption loss through a tiny decoder (pair-wise causal
    bias, cross bias, all mixing maps, norms, feed-forward, embedding,
    output head) and a tiny encoder (convs, batch norms, linears), checking
    every single parameter entry.  Returns {parameter name: max rel error};
    raises AssertionError on any failure beyond ``tol``.
    """
    from .autograd import Graph, Tensor as T, mul, tsum
    from .decoder import Decoder, DecoderConfig
    from .encoder import CnnEncoder, EncoderConfig
    from .training import smoothed_ce_loss

    rng = np.random.default_rng(seed)
    errors = {}

    cfg = DecoderConfig(dim=6, vocab_size=10, n_blocks=1, n_max=6, l_max=8, window=2, ffn=True)
    dec = Decoder(cfg, rng)
    for p in dec.parameters().values():
        p.data[:] = rng.uniform(-0.8, 0.8, size=p.data.shape)
    dec.embed_table.data[0] = 0.0
    tokens = np.array([[1, 4, 5, 6, 7], [1, 8, 9, 2, 0]])
    mask = tokens != 0
    targets = np.array([[4, 5, 6, 7, 2], [8, 9, 2, 0, 0]])
    tmask = targets != 0
    feats_data = rng.uniform(-1, 1, (2, 7, 6))
    frame_mask = np.ones((2, 7), dtype=bool)
    frame_mask[1, 5:] = False
    dec_params = list(dec.parameters().values())

    def dec_loss(want_grad):
        with Graph() as g:
            lp = dec.forward(tokens, T(feats_data), frame_mask=frame_mask, key_mask=mask)
            loss = smoothed_ce_loss(lp, targets, tmask, smoothing=0.1)
        if want_grad:
            g.backward(loss, params=dec_params)
        return loss.item()

    errors.update(check_gradients(dec_loss, dec_params, tol=tol))

    enc_cfg = EncoderConfig(channels=(1, 2, 4, 8), out_dim=6, mel_bands=16)
    enc = CnnEncoder(enc_cfg, rng)
    spec = rng.uniform(-1, 1, (2, 16, 16))
    coef = rng.standard_normal((2, 1, 6))
    enc_params = list(enc.parameters().values())

    def enc_loss(want_grad):
        with Graph() as g:
            loss = tsum(mul(enc.encode(spec, train=True), T(coef)))
        if want_grad:
            g.backward(loss, params=enc_params)
        return loss.item()

    errors.update(check_gradients(enc_loss, enc_params, tol=tol))
    return errors
