"""Finite-difference gradient checks shared by the unit and acceptance suites.

Each case builds random inputs and a function of Tensors (or, for layers, the
live parameter tensors and a forward closure). The check reduces the output to
a scalar with a fixed random projection and compares every input's analytic
gradient with central differences.
"""

from __future__ import annotations

import numpy as np

from bridgespot import autodiff as ad
from bridgespot.autodiff import Tensor
from bridgespot.bridge import BridgeConfig, BridgeState
from bridgespot.nn import Adapter, MultiHeadSelfAttention, ParameterStore, TransformerEncoderLayer

EPS = 1e-5
RTOL = 1e-4
ATOL = 1e-6


def away_from(x: np.ndarray, points=(0.0,), margin: float = 1e-2) -> np.ndarray:
    """Push entries out of a ``margin`` band around kinks."""
    for p in points:
        near = np.abs(x - p) < margin
        x = np.where(near, p + np.sign(x - p + 1e-12) * (margin + np.abs(x - p)), x)
    return x


def _leaves(build, rng):
    """Normalize a case to (live input tensors, zero-arg forward closure)."""
    out = build(rng)
    if isinstance(out, Probe):
        return out.tensors, out.forward
    arrays, fn = out
    ts = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    return ts, lambda: fn(*ts)


class Probe:
    """A case over tensors that already live inside a module (parameters)."""

    def __init__(self, tensors, forward):
        self.tensors, self.forward = tensors, forward


def numeric_grad(forward, t: Tensor, proj, eps=EPS):
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        with ad.no_grad():
            up = float((forward().data * proj).sum())
        flat[i] = old - eps
        with ad.no_grad():
            down = float((forward().data * proj).sum())
        flat[i] = old
        g.reshape(-1)[i] = (up - down) / (2 * eps)
    return g


def check_case(build, rng) -> float:
    """Run one instance; return the worst tolerance ratio (<= 1 means pass)."""
    ts, forward = _leaves(build, rng)
    for t in ts:
        t.requires_grad = True
        t.grad = None
    out = forward()
    proj = rng.normal(size=out.shape)
    ad.tsum(ad.mul(out, Tensor(proj))).backward()
    worst = 0.0
    for t in ts:
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        num = numeric_grad(forward, t, proj)
        ratio = np.abs(ana - num) / (ATOL + RTOL * np.abs(num))
        worst = max(worst, float(ratio.max(initial=0.0)))
    return worst


def _n(rng, *shape):
    return rng.normal(size=shape)


def _module(make, x_shape, extra=None):
    """Input plus every parameter of a freshly built module, all randomized."""
    def build(rng):
        store = ParameterStore()
        module = make(store, rng)
        for name in store.names():  # zero-initialized weights get a nonzero value
            store[name].data = rng.normal(scale=0.3, size=store[name].shape)
        x = Tensor(rng.normal(size=x_shape))
        args = [Tensor(rng.normal(size=extra))] if extra else []
        return Probe([x] + args + [store[n] for n in store.names()],
                     lambda: module(x, *args))
    return build


def _bridge(store, rng):
    b = BridgeState(BridgeConfig(det_channels=3, rec_dim=6, dim=4, heads=2, ffn_mult=2), rng)
    store.merge(b.store)
    return b


def _conv_case(stride, padding, k):
    def build(rng):
        return ([_n(rng, 2, 3, 7, 6), _n(rng, 4, 3, k, k), _n(rng, 4)],
                lambda x, w, b: ad.conv2d(x, w, b, stride=stride, padding=padding))
    return build


def _ce(rng):
    t = rng.integers(0, 5, 6)
    w = rng.uniform(0.5, 2.0, 6)
    return [_n(rng, 6, 5)], lambda z: ad.softmax_cross_entropy(z, t, w)


def _bce(rng):
    t = (rng.random((3, 4)) < 0.5).astype(float)
    w = rng.uniform(0, 1, (3, 4))
    return [_n(rng, 3, 4) * 3], lambda z: ad.bce_with_logits(z, t, w)


def _smooth(rng):
    t = _n(rng, 5, 3)
    beta = 1 / 9
    p = t + away_from(_n(rng, 5, 3) * 0.4, (-beta, beta), 2e-3)
    return [p], lambda x: ad.smooth_l1(x, t, beta)


def _bilinear(rng):
    ys = np.sort(rng.uniform(0, 5, 4))
    xs = np.sort(rng.uniform(0, 6, 7))
    return [_n(rng, 2, 6, 7)], lambda x: ad.bilinear_resample(x, ys, xs)


CASES = {
    "add_broadcast": lambda r: ([_n(r, 3, 4), _n(r, 4)], ad.add),
    "sub_broadcast": lambda r: ([_n(r, 2, 1, 3), _n(r, 4, 3)], ad.sub),
    "mul_broadcast": lambda r: ([_n(r, 3, 4), _n(r, 3, 1)], ad.mul),
    "div": lambda r: ([_n(r, 3, 4), r.uniform(0.5, 2, (3, 4)) * r.choice([-1, 1], (3, 4))],
                      ad.div),
    "scale": lambda r: ([_n(r, 5)], lambda x: ad.scale(x, -2.5)),
    "exp": lambda r: ([_n(r, 3, 3)], ad.exp),
    "log": lambda r: ([r.uniform(0.2, 3, (3, 3))], ad.log),
    "relu": lambda r: ([away_from(_n(r, 4, 4))], ad.relu),
    "sigmoid": lambda r: ([_n(r, 4, 4) * 3], ad.sigmoid),
    "gelu": lambda r: ([_n(r, 4, 4) * 2], ad.gelu),
    "reshape": lambda r: ([_n(r, 2, 6)], lambda x: ad.reshape(x, (3, 4))),
    "transpose": lambda r: ([_n(r, 2, 3, 4)], lambda x: ad.transpose(x, (2, 0, 1))),
    "swapaxes": lambda r: ([_n(r, 2, 3, 4)], lambda x: ad.swapaxes(x, 0, 2)),
    "getitem_basic": lambda r: ([_n(r, 4, 5)], lambda x: ad.getitem(x, (slice(1, 3), 2))),
    "getitem_fancy": lambda r: ([_n(r, 4, 5)],
                                lambda x: ad.getitem(x, (np.array([0, 2, 2]), np.array([1, 1, 4])))),
    "concat": lambda r: ([_n(r, 2, 3), _n(r, 2, 2)], lambda a, b: ad.concat([a, b], axis=1)),
    "stack": lambda r: ([_n(r, 2, 3), _n(r, 2, 3)], lambda a, b: ad.stack([a, b], axis=1)),
    "sum_axis": lambda r: ([_n(r, 3, 4, 2)], lambda x: ad.tsum(x, axis=1, keepdims=True)),
    "mean_axis": lambda r: ([_n(r, 3, 4)], lambda x: ad.mean(x, axis=0)),
    "matmul_batched": lambda r: ([_n(r, 2, 3, 4), _n(r, 4, 5)], ad.matmul),
    "linear": lambda r: ([_n(r, 2, 3, 4), _n(r, 5, 4), _n(r, 5)], ad.linear),
    "softmax": lambda r: ([_n(r, 3, 5)], lambda x: ad.softmax(x, axis=-1)),
    "layer_norm": lambda r: ([_n(r, 3, 6), _n(r, 6), _n(r, 6)], ad.layer_norm),
    "conv2d_s1_p1": _conv_case(1, 1, 3),
    "conv2d_s2_p1": _conv_case(2, 1, 3),
    "conv2d_pointwise": _conv_case(1, 0, 1),
    "bilinear_resample": _bilinear,
    "resample_sequence": lambda r: ([_n(r, 2, 9, 3)], lambda x: ad.resample_sequence(x, 4)),
    "softmax_cross_entropy": _ce,
    "bce_with_logits": _bce,
    "smooth_l1": _smooth,
    "attention": _module(lambda s, r: MultiHeadSelfAttention(s, "att", 8, 2, rng=r), (2, 5, 8)),
    "encoder_layer": _module(lambda s, r: TransformerEncoderLayer(s, "enc", 8, 2, 2, r), (6, 8)),
    "adapter": _module(lambda s, r: Adapter(s, "ad", 8, 2, rng=r), (4, 8)),
    "bridge": _module(_bridge, (2, 24, 6), extra=(2, 3, 2, 5)),
}
