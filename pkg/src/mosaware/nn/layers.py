"""Neural layers over the autodiff tensor core.

Sequence tensors are (T, D); one utterance at a time, no batch axis.
Conv2d inputs are (channels, height, width). Recurrent layers run the
whole sequence inside one traced op with a hand-written backward pass
(BPTT), which keeps the recorded graph small.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .store import ParameterStore
from .tensor import (
    ShapeError,
    Tensor,
    _accum,
    check_finite,
    concat,
    flip_time,
    matmul,
    relu,
)


# -- initialization ----------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def embedding_init(rng: np.random.Generator, vocab: int, dim: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab, dim))


# -- configuration -----------------------------------------------------------

VARIANTS = (
    "linear",
    "embedding",
    "conv2d",
    "gru",
    "lstm",
    "bidirectional",
    "relu",
    "dropout",
    "mean_pool_time",
)


@dataclass
class LayerConfig:
    """One layer of a composed graph; ``kind`` selects the variant."""

    kind: str
    in_dim: int = 0
    out_dim: int = 0
    vocab: int = 0
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] | None = None
    p: float = 0.0
    inner: "LayerConfig | None" = None

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown layer variant: {self.kind}")
        if self.kind in ("linear", "gru", "lstm") and (self.in_dim < 1 or self.out_dim < 1):
            raise ValueError(f"{self.kind}: dimensions must be >= 1")
        if self.kind == "embedding" and (self.vocab < 1 or self.out_dim < 1):
            raise ValueError("embedding: vocab and out_dim must be >= 1")
        if self.kind == "conv2d" and (self.in_dim < 1 or self.out_dim < 1):
            raise ValueError("conv2d: channel counts must be >= 1")
        if self.kind == "dropout" and not (0.0 <= self.p < 1.0):
            raise ValueError("dropout: probability must be in [0, 1)")
        if self.kind == "bidirectional":
            if self.inner is None or self.inner.kind not in ("gru", "lstm"):
                raise ValueError("bidirectional: inner must be a gru or lstm config")


# -- fused primitives --------------------------------------------------------

_CONV_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def _conv_indices(cin, hp, wp, kh, kw, sh, sw, ho, wo) -> np.ndarray:
    key = (cin, hp, wp, kh, kw, sh, sw, ho, wo)
    idx = _CONV_INDEX_CACHE.get(key)
    if idx is None:
        c = np.arange(cin)
        ii = np.arange(ho)[:, None] * sh + np.arange(kh)[None, :]
        jj = np.arange(wo)[:, None] * sw + np.arange(kw)[None, :]
        idx = (
            c[None, None, :, None, None] * (hp * wp)
            + ii[:, None, None, :, None] * wp
            + jj[None, :, None, None, :]
        ).reshape(ho * wo, cin * kh * kw)
        if len(_CONV_INDEX_CACHE) > 64:
            _CONV_INDEX_CACHE.clear()
        _CONV_INDEX_CACHE[key] = idx
    return idx


def conv2d_op(x: Tensor, w: Tensor, b: Tensor, stride, padding) -> Tensor:
    """2-D convolution on a (C, H, W) input via im2col."""
    cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {cin_w}")
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    idx = _conv_indices(cin, h + 2 * ph, wd + 2 * pw, kh, kw, sh, sw, ho, wo)
    cols = xp.reshape(-1)[idx]
    wmat = w.data.reshape(cout, -1)
    out = (cols @ wmat.T + b.data).T.reshape(cout, ho, wo)

    def backward(g):
        gm = g.reshape(cout, -1).T
        if w.requires_grad:
            _accum(w, (gm.T @ cols).reshape(w.data.shape))
        if b.requires_grad:
            _accum(b, gm.sum(axis=0))
        if x.requires_grad:
            dcols = gm @ wmat
            dxp = np.zeros(xp.size)
            np.add.at(dxp, idx.reshape(-1), dcols.reshape(-1))
            dxp = dxp.reshape(xp.shape)
            _accum(x, dxp[:, ph : ph + h, pw : pw + wd])

    return Tensor._node(out, (x, w, b), backward)


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def gru_seq_op(xg: Tensor, w_hh: Tensor, b_hh: Tensor) -> Tensor:
    """Run a GRU over precomputed input activations xg = x @ W_ih.T + b_ih.

    Gate order along the 3H axis is reset, update, candidate. Zero initial
    state. Returns the (T, H) hidden sequence; backward is full BPTT.
    """
    t_len, three_h = xg.shape
    hdim = three_h // 3
    whh = w_hh.data
    bhh = b_hh.data
    out = np.empty((t_len, hdim))
    saved = []
    h = np.zeros(hdim)
    for t in range(t_len):
        hg = h @ whh.T + bhh
        r = _sigmoid(xg.data[t, :hdim] + hg[:hdim])
        z = _sigmoid(xg.data[t, hdim : 2 * hdim] + hg[hdim : 2 * hdim])
        n = np.tanh(xg.data[t, 2 * hdim :] + r * hg[2 * hdim :])
        saved.append((h, r, z, n, hg[2 * hdim :]))
        h = (1.0 - z) * n + z * h
        out[t] = h

    def backward(g):
        dxg = np.zeros_like(xg.data) if xg.requires_grad else None
        dw = np.zeros_like(whh) if w_hh.requires_grad else None
        db = np.zeros_like(bhh) if b_hh.requires_grad else None
        dh = np.zeros(hdim)
        for t in range(t_len - 1, -1, -1):
            h_prev, r, z, n, hg_n = saved[t]
            dht = g[t] + dh
            dz = dht * (h_prev - n) * z * (1.0 - z)
            dn = dht * (1.0 - z) * (1.0 - n * n)
            dr = dn * hg_n * r * (1.0 - r)
            dhg = np.concatenate([dr, dz, dn * r])
            if dxg is not None:
                dxg[t, :hdim] = dr
                dxg[t, hdim : 2 * hdim] = dz
                dxg[t, 2 * hdim :] = dn
            if dw is not None:
                dw += np.outer(dhg, h_prev)
            if db is not None:
                db += dhg
            dh = dht * z + dhg @ whh
        if dxg is not None:
            _accum(xg, dxg)
        if dw is not None:
            _accum(w_hh, dw)
        if db is not None:
            _accum(b_hh, db)

    return Tensor._node(out, (xg, w_hh, b_hh), backward)


def lstm_seq_op(xg: Tensor, w_hh: Tensor, b_hh: Tensor) -> Tensor:
    """Run an LSTM over precomputed input activations xg = x @ W_ih.T + b_ih.

    Gate order along the 4H axis is input, forget, cell, output. Zero
    initial hidden and cell state. Returns the (T, H) hidden sequence.
    """
    t_len, four_h = xg.shape
    hdim = four_h // 4
    whh = w_hh.data
    bhh = b_hh.data
    out = np.empty((t_len, hdim))
    saved = []
    h = np.zeros(hdim)
    c = np.zeros(hdim)
    for t in range(t_len):
        gates = xg.data[t] + h @ whh.T + bhh
        i = _sigmoid(gates[:hdim])
        f = _sigmoid(gates[hdim : 2 * hdim])
        u = np.tanh(gates[2 * hdim : 3 * hdim])
        o = _sigmoid(gates[3 * hdim :])
        c_new = f * c + i * u
        tc = np.tanh(c_new)
        saved.append((h, c, i, f, u, o, tc))
        c = c_new
        h = o * tc
        out[t] = h

    def backward(g):
        dxg = np.zeros_like(xg.data) if xg.requires_grad else None
        dw = np.zeros_like(whh) if w_hh.requires_grad else None
        db = np.zeros_like(bhh) if b_hh.requires_grad else None
        dh = np.zeros(hdim)
        dc = np.zeros(hdim)
        for t in range(t_len - 1, -1, -1):
            h_prev, c_prev, i, f, u, o, tc = saved[t]
            dht = g[t] + dh
            do = dht * tc
            dct = dc + dht * o * (1.0 - tc * tc)
            dgates = np.concatenate(
                [
                    dct * u * i * (1.0 - i),
                    dct * c_prev * f * (1.0 - f),
                    dct * i * (1.0 - u * u),
                    do * o * (1.0 - o),
                ]
            )
            if dxg is not None:
                dxg[t] = dgates
            if dw is not None:
                dw += np.outer(dgates, h_prev)
            if db is not None:
                db += dgates
            dh = dgates @ whh
            dc = dct * f
        if dxg is not None:
            _accum(xg, dxg)
        if dw is not None:
            _accum(w_hh, dw)
        if db is not None:
            _accum(b_hh, db)

    return Tensor._node(out, (xg, w_hh, b_hh), backward)


def embedding_op(w: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise ShapeError("embedding: id sequence must be 1-D")
    if ids.size and (ids.min() < 0 or ids.max() >= w.shape[0]):
        raise ShapeError(f"embedding: id out of range for vocab {w.shape[0]}")
    out = w.data[ids]

    def backward(g):
        if w.requires_grad:
            buf = np.zeros_like(w.data)
            np.add.at(buf, ids, g)
            _accum(w, buf)

    return Tensor._node(out, (w,), backward)


# -- layer classes -----------------------------------------------------------

class Layer:
    """Base layer; subclasses register parameters at construction."""

    def __init__(self, name: str):
        self.name = name

    def forward(self, x, mode: str = "eval", rng: np.random.Generator | None = None):
        raise NotImplementedError

    def __call__(self, x, mode="eval", rng=None):
        out = self.forward(x, mode, rng)
        check_finite(self.name, out.data)
        return out


class Linear(Layer):
    def __init__(self, cfg: LayerConfig, store: ParameterStore, name: str, rng):
        super().__init__(name)
        self.in_dim, self.out_dim = cfg.in_dim, cfg.out_dim
        self.w = store.add(f"{name}.w", Tensor(glorot_uniform(rng, cfg.in_dim, cfg.out_dim, (cfg.out_dim, cfg.in_dim))))
        self.b = store.add(f"{name}.b", Tensor(np.zeros(cfg.out_dim)))

    def forward(self, x, mode="eval", rng=None):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"{self.name}: expected input dim {self.in_dim}, got {x.shape[-1]}")
        return matmul(x, _wt(self.w)) + self.b


def _wt(w: Tensor) -> Tensor:
    """Transpose view as a traced op (gradient transposes back)."""

    def backward(g):
        if w.requires_grad:
            _accum(w, g.T)

    return Tensor._node(w.data.T, (w,), backward)


class Embedding(Layer):
    def __init__(self, cfg: LayerConfig, store: ParameterStore, name: str, rng):
        super().__init__(name)
        self.vocab, self.out_dim = cfg.vocab, cfg.out_dim
        self.w = store.add(f"{name}.w", Tensor(embedding_init(rng, cfg.vocab, cfg.out_dim)))

    def forward(self, ids, mode="eval", rng=None):
        return embedding_op(self.w, ids)


class Conv2d(Layer):
    def __init__(self, cfg: LayerConfig, store: ParameterStore, name: str, rng):
        super().__init__(name)
        kh, kw = cfg.kernel
        self.stride = cfg.stride
        self.padding = cfg.padding if cfg.padding is not None else (kh // 2, kw // 2)
        self.in_channels, self.out_channels = cfg.in_dim, cfg.out_dim
        fan_in = cfg.in_dim * kh * kw
        fan_out = cfg.out_dim * kh * kw
        self.w = store.add(
            f"{name}.w", Tensor(glorot_uniform(rng, fan_in, fan_out, (cfg.out_dim, cfg.in_dim, kh, kw)))
        )
        self.b = store.add(f"{name}.b", Tensor(np.zeros(cfg.out_dim)))

    def forward(self, x, mode="eval", rng=None):
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected ({self.in_channels}, H, W) input, got {x.shape}"
            )
        return conv2d_op(x, self.w, self.b, self.stride, self.padding)


class _Recurrent(Layer):
    gates = 0
    seq_op = None

    def __init__(self, cfg: LayerConfig, store: ParameterStore, name: str, rng):
        super().__init__(name)
        self.in_dim, self.hidden = cfg.in_dim, cfg.out_dim
        g = self.gates
        self.w_ih = store.add(
            f"{name}.w_ih", Tensor(glorot_uniform(rng, cfg.in_dim, cfg.out_dim, (g * cfg.out_dim, cfg.in_dim)))
        )
        self.w_hh = store.add(
            f"{name}.w_hh", Tensor(glorot_uniform(rng, cfg.out_dim, cfg.out_dim, (g * cfg.out_dim, cfg.out_dim)))
        )
        self.b_ih = store.add(f"{name}.b_ih", Tensor(np.zeros(g * cfg.out_dim)))
        self.b_hh = store.add(f"{name}.b_hh", Tensor(np.zeros(g * cfg.out_dim)))

    def forward(self, x, mode="eval", rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.name}: expected (T, {self.in_dim}) input, got {x.shape}")
        xg = matmul(x, _wt(self.w_ih)) + self.b_ih
        return type(self).seq_op(xg, self.w_hh, self.b_hh)


class GRU(_Recurrent):
    gates = 3
    seq_op = staticmethod(gru_seq_op)


class LSTM(_Recurrent):
    gates = 4
    seq_op = staticmethod(lstm_seq_op)


class Bidirectional(Layer):
    """Runs the inner recurrent layer in both time directions, concatenating.

    Output dim is 2 * inner hidden dim.
    """

    def __init__(self, cfg: LayerConfig, store: ParameterStore, name: str, rng):
        super().__init__(name)
        inner_cls = GRU if cfg.inner.kind == "gru" else LSTM
        self.fwd = inner_cls(cfg.inner, store, f"{name}.fwd", rng)
        self.bwd = inner_cls(cfg.inner, store, f"{name}.bwd", rng)
        self.out_dim = 2 * cfg.inner.out_dim

    def forward(self, x, mode="eval", rng=None):
        fwd_out = self.fwd.forward(x, mode, rng)
        bwd_out = flip_time(self.bwd.forward(flip_time(x), mode, rng))
        return concat([fwd_out, bwd_out], axis=1)


class ReLU(Layer):
    def __init__(self, cfg: LayerConfig, store: ParameterStore, name: str, rng):
        super().__init__(name)

    def forward(self, x, mode="eval", rng=None):
        return relu(x)


class Dropout(Layer):
    """Inverted dropout: zeroes fraction p in train mode, rescales survivors."""

    def __init__(self, cfg: LayerConfig, store: ParameterStore, name: str, rng):
        super().__init__(name)
        self.p = cfg.p

    def forward(self, x, mode="eval", rng=None):
        if mode != "train" or self.p == 0.0:
            return x
        if rng is None:
            raise ValueError(f"{self.name}: train-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * Tensor(mask)


class MeanPoolTime(Layer):
    def __init__(self, cfg: LayerConfig, store: ParameterStore, name: str, rng):
        super().__init__(name)

    def forward(self, x, mode="eval", rng=None):
        if x.ndim != 2:
            raise ShapeError(f"{self.name}: expected (T, D) input, got {x.shape}")
        return x.mean(axis=0)


_LAYER_CLASSES = {
    "linear": Linear,
    "embedding": Embedding,
    "conv2d": Conv2d,
    "gru": GRU,
    "lstm": LSTM,
    "bidirectional": Bidirectional,
    "relu": ReLU,
    "dropout": Dropout,
    "mean_pool_time": MeanPoolTime,
}


def build_layer(cfg: LayerConfig, store: ParameterStore, name: str, rng) -> Layer:
    return _LAYER_CLASSES[cfg.kind](cfg, store, name, rng)


@dataclass
class Sequential:
    """A composed layer graph executed in order."""

    layers: list = field(default_factory=list)

    @classmethod
    def build(cls, cfgs: list[LayerConfig], store: ParameterStore, prefix: str, rng) -> "Sequential":
        layers = [build_layer(c, store, f"{prefix}.{i}.{c.kind}", rng) for i, c in enumerate(cfgs)]
        return cls(layers)

    def forward(self, x, mode: str = "eval", rng=None):
        for layer in self.layers:
            x = layer(x, mode, rng)
        return x

    __call__ = forward


def forward(graph: Sequential, inputs, mode: str = "eval", rng=None) -> Tensor:
    """Run a composed layer graph; dropout is identity in eval mode."""
    return graph.forward(inputs, mode, rng)
