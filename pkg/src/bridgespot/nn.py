"""Layers, a named parameter registry with freeze flags, and AdamW."""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

INIT_MODES = ("standard", "zero", "gaussian")
GAUSSIAN_STD = 0.02


@dataclass
class Entry:
    tensor: Tensor
    frozen: bool = False
    is_normalization: bool = False


class ParameterStore:
    """Hierarchically named parameters, each with a frozen flag.

    Frozen tensors have ``requires_grad`` off, so backward never reaches
    them and the optimizer never touches them.
    """

    def __init__(self):
        self.entries: dict[str, Entry] = {}

    def add(self, name: str, data, is_normalization: bool = False) -> Tensor:
        if name in self.entries:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.array(data, dtype=ad.DTYPE), requires_grad=True, name=name)
        self.entries[name] = Entry(t, False, is_normalization)
        return t

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name].tensor

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def match(self, pattern: str) -> list[str]:
        return [n for n in self.entries if fnmatch.fnmatchcase(n, pattern)]

    def _set_frozen(self, names, frozen: bool) -> None:
        for n in names:
            e = self.entries[n]
            e.frozen = frozen
            e.tensor.requires_grad = not frozen
            if frozen:
                e.tensor.grad = None

    def freeze(self, pattern: str = "*") -> list[str]:
        """Freeze every parameter whose name matches the glob ``pattern``."""
        names = self.match(pattern)
        if not names:
            raise KeyError(f"freeze pattern {pattern!r} matched no parameters")
        self._set_frozen(names, True)
        return names

    def unfreeze(self, pattern: str = "*") -> list[str]:
        names = self.match(pattern)
        if not names:
            raise KeyError(f"unfreeze pattern {pattern!r} matched no parameters")
        self._set_frozen(names, False)
        return names

    def freeze_all_except_normalization(self, pattern: str = "*") -> None:
        names = self.match(pattern)
        if not names:
            raise KeyError(f"pattern {pattern!r} matched no parameters")
        for n in names:
            self._set_frozen([n], not self.entries[n].is_normalization)

    def is_frozen(self, name: str) -> bool:
        return self.entries[name].frozen

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, e.tensor) for n, e in self.entries.items() if not e.frozen]

    def frozen_names(self) -> list[str]:
        return [n for n, e in self.entries.items() if e.frozen]

    def count(self, trainable_only: bool = False) -> int:
        return sum(e.tensor.size for e in self.entries.values()
                   if not (trainable_only and e.frozen))

    def zero_grad(self) -> None:
        for e in self.entries.values():
            e.tensor.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: e.tensor.data for n, e in self.entries.items()}

    def load_state(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self.entries) - set(arrays)
            extra = set(arrays) - set(self.entries)
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} "
                               f"unexpected={sorted(extra)[:5]}")
        for n, arr in arrays.items():
            if n not in self.entries:
                continue
            t = self.entries[n].tensor
            if t.shape != arr.shape:
                raise DimensionError(f"{n}: stored shape {arr.shape} vs parameter {t.shape}")
            t.data = np.array(arr, dtype=ad.DTYPE)

    def merge(self, other: "ParameterStore", prefix: str = "") -> None:
        for n, e in other.entries.items():
            key = prefix + n
            if key in self.entries:
                raise KeyError(f"parameter {key!r} already registered")
            self.entries[key] = e


def _init_array(shape, mode: str, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    if mode == "zero":
        return np.zeros(shape)
    if mode == "gaussian":
        return rng.normal(0.0, GAUSSIAN_STD, size=shape)
    if mode == "standard":
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)
    raise ValueError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")


class Linear:
    def __init__(self, store: ParameterStore, name: str, in_dim: int, out_dim: int,
                 init_mode: str = "standard", rng: np.random.Generator | None = None):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.init_mode = init_mode
        self.weight = store.add(f"{name}.weight", np.zeros((out_dim, in_dim)))
        self.bias = store.add(f"{name}.bias", np.zeros(out_dim))
        initialize(self, init_mode, rng if rng is not None else np.random.default_rng(0))

    @property
    def fan_in(self) -> int:
        return self.in_dim

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class Conv2d:
    def __init__(self, store: ParameterStore, name: str, in_ch: int, out_ch: int,
                 kernel, stride: int = 1, padding: int = 0, init_mode: str = "standard",
                 rng: np.random.Generator | None = None):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.stride, self.padding = stride, padding
        self.init_mode = init_mode
        self.weight = store.add(f"{name}.weight", np.zeros((out_ch, in_ch, kh, kw)))
        self.bias = store.add(f"{name}.bias", np.zeros(out_ch))
        initialize(self, init_mode, rng if rng is not None else np.random.default_rng(0))

    @property
    def fan_in(self) -> int:
        _, cin, kh, kw = self.weight.shape
        return cin * kh * kw

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def initialize(layer, mode: str, rng) -> None:
    """Re-initialize ``layer.weight``/``layer.bias`` in place.

    ``rng`` may be a seed or a ``numpy.random.Generator``.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    layer.weight.data = _init_array(layer.weight.shape, mode, layer.fan_in, rng)
    layer.bias.data = _init_array(layer.bias.shape, mode, layer.fan_in, rng)
    layer.init_mode = mode


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, dim: int, eps: float = 1e-5):
        self.dim, self.eps = dim, eps
        self.gamma = store.add(f"{name}.gamma", np.ones(dim), is_normalization=True)
        self.beta = store.add(f"{name}.beta", np.zeros(dim), is_normalization=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class Adapter:
    """Residual bottleneck: ``gelu(x W1^T + B1) W2^T + B2 + x``.

    The output projection starts at zero so a fresh adapter is the identity.
    """

    def __init__(self, store: ParameterStore, name: str, dim: int, hidden: int | None = None,
                 rng: np.random.Generator | None = None):
        hidden = hidden if hidden is not None else max(1, dim // 4)
        self.dim, self.hidden = dim, hidden
        self.down = Linear(store, f"{name}.down", dim, hidden, "standard", rng)
        self.up = Linear(store, f"{name}.up", hidden, dim, "zero")

    @property
    def num_parameters(self) -> int:
        return 2 * self.dim * self.hidden + self.hidden + self.dim

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise DimensionError(f"adapter expects last dim {self.dim}, got {x.shape}")
        return ad.add(self.up(ad.gelu(self.down(x))), x)


def adapter_forward(adapter: Adapter, f_i: Tensor) -> Tensor:
    return adapter(f_i)


class MultiHeadSelfAttention:
    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int,
                 rng: np.random.Generator | None = None):
        if dim % heads:
            raise DimensionError(f"model dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.qkv = Linear(store, f"{name}.qkv", dim, 3 * dim, "standard", rng)
        self.proj = Linear(store, f"{name}.proj", dim, dim, "standard", rng)
        self.last_attention: np.ndarray | None = None

    def __call__(self, x: Tensor) -> Tensor:
        # x: (B, L, d)
        b, seq, d = x.shape
        h, dh = self.heads, d // self.heads
        qkv = self.qkv(x).reshape(b, seq, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.matmul(ad.scale(q, 1.0 / np.sqrt(dh)), ad.swapaxes(k, -1, -2))
        attn = ad.softmax(scores, axis=-1)
        self.last_attention = attn.data
        out = ad.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, seq, d)
        return self.proj(out)


ADAPTER_SITES = ("after_attention", "after_ffn")


class TransformerEncoderLayer:
    """Pre-norm encoder block; adapters wrap each sublayer output when inserted."""

    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int,
                 ffn_mult: int = 4, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name, self.dim = name, dim
        self.norm1 = LayerNorm(store, f"{name}.norm1", dim)
        self.attn = MultiHeadSelfAttention(store, f"{name}.attn", dim, heads, rng)
        self.norm2 = LayerNorm(store, f"{name}.norm2", dim)
        self.ff1 = Linear(store, f"{name}.ff1", dim, ffn_mult * dim, "standard", rng)
        self.ff2 = Linear(store, f"{name}.ff2", ffn_mult * dim, dim, "standard", rng)
        self.adapters: dict[str, Adapter] = {}

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise DimensionError(f"{self.name}: expected last dim {self.dim}, got {x.shape}")
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        a = self.attn(self.norm1(x))
        if "after_attention" in self.adapters:
            a = self.adapters["after_attention"](a)
        x = ad.add(x, a)
        f = self.ff2(ad.gelu(self.ff1(self.norm2(x))))
        if "after_ffn" in self.adapters:
            f = self.adapters["after_ffn"](f)
        x = ad.add(x, f)
        return x.reshape(*x.shape[1:]) if squeeze else x

    def norm_layers(self) -> list[LayerNorm]:
        return [self.norm1, self.norm2]


def insert_adapters(module, store: ParameterStore, where=ADAPTER_SITES,
                    hidden: int | None = None, rng: np.random.Generator | None = None
                    ) -> list[Adapter]:
    """Attach identity-at-init adapters to ``module`` at the named sites.

    ``module`` is anything with ``dim``, ``name`` and an ``adapters`` dict,
    i.e. a :class:`TransformerEncoderLayer`.
    """
    if isinstance(where, str):
        where = (where,)
    added = []
    for site in where:
        if site not in ADAPTER_SITES:
            raise ValueError(f"unknown adapter site {site!r}")
        if site in module.adapters:
            raise ValueError(f"{module.name}: adapter already inserted at {site}")
        a = Adapter(store, f"{module.name}.adapter_{site}", module.dim, hidden, rng)
        module.adapters[site] = a
        added.append(a)
    return added


def transformer_encoder_forward(layers, x: Tensor) -> Tensor:
    for layer in layers:
        x = layer(x)
    return x


@dataclass
class AdamW:
    """Adam with decoupled weight decay over the unfrozen entries of a store."""

    store: ParameterStore
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, entry in self.store.entries.items():
            p = entry.tensor
            if entry.frozen or p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.weight_decay and p.ndim > 1:
                p.data = p.data * (1.0 - self.lr * self.weight_decay)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.store.zero_grad()
