"""2SRNN forward pass and backpropagation through time.

The network is a per-timestep affine adaptation layer ``x' = M x + b`` in
front of a stacked recurrent classifier (LSTM by default, optionally the
plain tanh RNN), read out many-to-one from the top layer's last hidden
state, followed by a hidden fully-connected layer, dropout and a G-way
linear output with softmax.

Everything operates on batches shaped ``(B, T, f)``; the single-sequence
functions are thin wrappers.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ContractError, InvalidArgumentError, InvalidInputError, ShapeError
from .signal import Sequence

GATES = ("f", "i", "C", "o")
ACTIVATIONS = ("identity", "tanh", "relu")


@dataclass
class AdaptParams:
    M: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.M.ndim != 2 or self.M.shape[0] != self.M.shape[1]:
            raise ShapeError(f"adaptation matrix must be square, got {self.M.shape}")
        if self.b.shape != (self.M.shape[0],):
            raise ShapeError(f"adaptation bias must have length {self.M.shape[0]}, got {self.b.shape}")


@dataclass
class LstmLayerParams:
    """Gate weights act on the concatenation ``[h_prev, x_t]``."""

    W_f: np.ndarray
    W_i: np.ndarray
    W_C: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_C: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        shape = self.W_f.shape
        h = shape[0]
        for g in GATES:
            W, b = getattr(self, "W_" + g), getattr(self, "b_" + g)
            if W.shape != shape or W.shape[1] <= h:
                raise ShapeError(f"gate matrix W_{g} has shape {W.shape}, expected {shape} with more columns than rows")
            if b.shape != (h,):
                raise ShapeError(f"gate bias b_{g} has shape {b.shape}, expected ({h},)")

    @property
    def hidden(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_width(self) -> int:
        return self.W_f.shape[1] - self.hidden

    @property
    def output_width(self) -> int:
        return self.hidden

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for g in GATES:
            yield "W_" + g, getattr(self, "W_" + g)
        for g in GATES:
            yield "b_" + g, getattr(self, "b_" + g)


@dataclass
class RnnLayerParams:
    """Plain recurrent layer: ``h = s_h(w_h x + u_h h_prev + b_n)``, ``y = s_y(w_y h + b_y)``."""

    w_h: np.ndarray
    u_h: np.ndarray
    b_n: np.ndarray
    w_y: np.ndarray
    b_y: np.ndarray
    sigma_h: str = "tanh"
    sigma_y: str = "identity"

    def __post_init__(self):
        h, k = self.w_h.shape[0], self.w_y.shape[0]
        if self.u_h.shape != (h, h) or self.b_n.shape != (h,):
            raise ShapeError("u_h must be h x h and b_n length h")
        if self.w_y.shape != (k, h) or self.b_y.shape != (k,):
            raise ShapeError("w_y must be k x h and b_y length k")
        for s in (self.sigma_h, self.sigma_y):
            if s not in ("tanh", "identity"):
                raise InvalidArgumentError(f"unknown recurrent activation {s!r}")

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    @property
    def input_width(self) -> int:
        return self.w_h.shape[1]

    @property
    def output_width(self) -> int:
        return self.w_y.shape[0]

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in ("w_h", "u_h", "b_n", "w_y", "b_y"):
            yield name, getattr(self, name)


@dataclass
class HeadParams:
    W_fc: np.ndarray
    b_fc: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        units = self.W_fc.shape[0]
        if self.b_fc.shape != (units,) or self.W_out.shape[1] != units or self.b_out.shape != (self.W_out.shape[0],):
            raise ShapeError("inconsistent head shapes")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown head activation {self.activation!r}")

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in ("W_fc", "b_fc", "W_out", "b_out"):
            yield name, getattr(self, name)


@dataclass
class Model:
    adapt: AdaptParams
    layers: list
    head: HeadParams
    dropout_p: float = 0.5
    meta: dict = field(default_factory=dict)
    version: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidArgumentError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if not self.layers:
            raise InvalidArgumentError("model needs at least one recurrent layer")
        width = self.f
        for k, layer in enumerate(self.layers):
            if layer.input_width != width:
                raise ShapeError(f"layer {k} expects input width {layer.input_width}, previous width is {width}")
            width = layer.output_width
        if self.head.W_fc.shape[1] != width:
            raise ShapeError(f"head expects width {self.head.W_fc.shape[1]}, top layer gives {width}")

    @property
    def f(self) -> int:
        return self.adapt.M.shape[0]

    @property
    def h(self) -> int:
        return self.layers[0].hidden

    @property
    def G(self) -> int:
        return self.head.W_out.shape[0]

    @property
    def cell(self) -> str:
        return "lstm" if isinstance(self.layers[0], LstmLayerParams) else "rnn"

    @property
    def dtype(self):
        return self.adapt.M.dtype

    def named_params(self) -> dict[str, np.ndarray]:
        """Live references to every parameter array, in checkpoint order."""
        out = {"adapt.M": self.adapt.M, "adapt.b": self.adapt.b}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.arrays():
                out[f"layers.{k}.{name}"] = arr
        for name, arr in self.head.arrays():
            out[f"head.{name}"] = arr
        return out

    def classifier_names(self) -> list[str]:
        return [n for n in self.named_params() if not n.startswith("adapt.")]

    def param_count(self, names=None) -> int:
        params = self.named_params()
        return int(sum(params[n].size for n in (names if names is not None else params)))

    def dims(self) -> dict:
        return {
            "f": self.f,
            "h": self.h,
            "G": self.G,
            "layers": len(self.layers),
            "head_units": self.head.W_fc.shape[0],
            "dropout_p": self.dropout_p,
            "cell": self.cell,
            "head_activation": self.head.activation,
        }

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Model":
        m = self.copy()
        for name, arr in m.named_params().items():
            _set_param(m, name, arr.astype(dtype))
        return m


def _set_param(model: Model, name: str, value: np.ndarray) -> None:
    parts = name.split(".")
    if parts[0] == "adapt":
        setattr(model.adapt, parts[1], value)
    elif parts[0] == "layers":
        setattr(model.layers[int(parts[1])], parts[2], value)
    else:
        setattr(model.head, parts[1], value)


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


def init_model(
    f: int,
    h: int,
    G: int,
    num_layers: int = 2,
    seed: int = 0,
    *,
    head_units: int = 512,
    dropout_p: float = 0.5,
    cell: str = "lstm",
    head_activation: str = "identity",
    dtype=np.float64,
) -> Model:
    """Fresh model with identity adaptation and Glorot-uniform classifier weights."""
    for name, value in (("f", f), ("h", h), ("G", G), ("num_layers", num_layers), ("head_units", head_units)):
        if int(value) < 1:
            raise InvalidArgumentError(f"{name} must be >= 1, got {value}")
    if cell not in ("lstm", "rnn"):
        raise InvalidArgumentError(f"unknown cell type {cell!r}")
    rng = np.random.default_rng(seed)
    adapt = AdaptParams(np.eye(f, dtype=dtype), np.zeros(f, dtype=dtype))
    layers = []
    d = f
    for _ in range(num_layers):
        if cell == "lstm":
            weights = {"W_" + g: _glorot(rng, h, h + d, dtype) for g in GATES}
            biases = {"b_" + g: np.zeros(h, dtype=dtype) for g in GATES}
            layers.append(LstmLayerParams(**weights, **biases))
        else:
            layers.append(
                RnnLayerParams(
                    w_h=_glorot(rng, h, d, dtype),
                    u_h=_glorot(rng, h, h, dtype),
                    b_n=np.zeros(h, dtype=dtype),
                    w_y=_glorot(rng, h, h, dtype),
                    b_y=np.zeros(h, dtype=dtype),
                )
            )
        d = h
    head = HeadParams(
        W_fc=_glorot(rng, head_units, d, dtype),
        b_fc=np.zeros(head_units, dtype=dtype),
        W_out=_glorot(rng, G, head_units, dtype),
        b_out=np.zeros(G, dtype=dtype),
        activation=head_activation,
    )
    return Model(adapt=adapt, layers=layers, head=head, dropout_p=dropout_p)


# --- elementwise helpers -------------------------------------------------


def sigmoid(x):
    # tanh form: no overflow for large |x|
    return 0.5 * np.tanh(0.5 * x) + 0.5


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; accepts a vector or a ``(B, G)`` matrix."""
    z = np.asarray(z)
    if np.isnan(z).any():
        raise InvalidInputError("softmax input contains NaN")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _act(name, x):
    if name == "identity":
        return x
    if name == "tanh":
        return np.tanh(x)
    return np.maximum(x, 0.0)


def _act_grad(name, pre, post):
    if name == "identity":
        return np.ones_like(pre)
    if name == "tanh":
        return 1.0 - post * post
    return (pre > 0).astype(pre.dtype)


# --- single steps ----------------------------------------------------------


def adapt_forward(p: AdaptParams, seq):
    """Apply ``x' = M x + b`` to every row of a ``T x f`` array (or a Sequence)."""
    data = seq.data if isinstance(seq, Sequence) else np.asarray(seq)
    if data.shape[-1] != p.M.shape[0]:
        raise ShapeError(f"sequence width {data.shape[-1]} does not match adaptation size {p.M.shape[0]}")
    out = data @ p.M.T + p.b
    if isinstance(seq, Sequence):
        return Sequence(out, seq.gesture_id, seq.provenance)
    return out


def lstm_cell_step(p: LstmLayerParams, x_t, h_prev, c_prev, return_gates: bool = False):
    """One LSTM step for a single vector (or a batch of row vectors)."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=p.W_f.dtype) for a in (x_t, h_prev, c_prev))
    if x_t.shape[-1] != p.input_width or h_prev.shape[-1] != p.hidden or c_prev.shape[-1] != p.hidden:
        raise ShapeError("lstm_cell_step: dimension mismatch")
    z = np.concatenate([h_prev, x_t], axis=-1)
    f = sigmoid(z @ p.W_f.T + p.b_f)
    i = sigmoid(z @ p.W_i.T + p.b_i)
    c_tilde = np.tanh(z @ p.W_C.T + p.b_C)
    c = f * c_prev + i * c_tilde
    o = sigmoid(z @ p.W_o.T + p.b_o)
    h = o * np.tanh(c)
    if return_gates:
        return h, c, {"f": f, "i": i, "C": c_tilde, "o": o}
    return h, c


def rnn_cell_step(p: RnnLayerParams, x_t, h_prev):
    x_t, h_prev = np.asarray(x_t, dtype=p.w_h.dtype), np.asarray(h_prev, dtype=p.w_h.dtype)
    if x_t.shape[-1] != p.input_width or h_prev.shape[-1] != p.hidden:
        raise ShapeError("rnn_cell_step: dimension mismatch")
    h = _act(p.sigma_h, x_t @ p.w_h.T + h_prev @ p.u_h.T + p.b_n)
    y = _act(p.sigma_y, h @ p.w_y.T + p.b_y)
    return h, y


# --- batched sequence forward / backward ---------------------------------


@dataclass
class ForwardCache:
    model_id: int
    model_version: int
    X: np.ndarray  # time-major (T, B, f); so are the per-layer arrays
    layer_inputs: list
    layer_states: list
    masks: list
    head_mask: np.ndarray
    hT: np.ndarray
    z_fc: np.ndarray
    a_fc: np.ndarray
    a_fc_dropped: np.ndarray
    logits: np.ndarray
    skip_adapt: bool = False


def _stack_lstm(p: LstmLayerParams):
    W = np.concatenate([p.W_f, p.W_i, p.W_C, p.W_o], axis=0)
    b = np.concatenate([p.b_f, p.b_i, p.b_C, p.b_o])
    return W, b


def _lstm_seq(p: LstmLayerParams, inp: np.ndarray):
    """Time-major LSTM over ``inp`` shaped ``(T, B, d)``."""
    T, B, _ = inp.shape
    h = p.hidden
    W, b = _stack_lstm(p)
    Wh, Wx = W[:, :h], W[:, h:]
    # sigmoid(a) = 0.5 * tanh(a / 2) + 0.5 on the f, i, o blocks; plain tanh on C
    scale = np.full(4 * h, 0.5, dtype=inp.dtype)
    scale[2 * h: 3 * h] = 1.0
    shift = np.full(4 * h, 0.5, dtype=inp.dtype)
    shift[2 * h: 3 * h] = 0.0
    proj = (inp @ Wx.T + b) * scale
    WhT = (Wh * scale[:, None]).T
    gates = np.empty((T, B, 4 * h), dtype=inp.dtype)
    hs = np.zeros((T + 1, B, h), dtype=inp.dtype)
    cs = np.zeros((T + 1, B, h), dtype=inp.dtype)
    tcs = np.empty((T, B, h), dtype=inp.dtype)
    for t in range(T):
        g = gates[t]
        np.tanh(proj[t] + hs[t] @ WhT, out=g)
        g *= scale
        g += shift
        cs[t + 1] = g[:, :h] * cs[t] + g[:, h: 2 * h] * g[:, 2 * h: 3 * h]
        np.tanh(cs[t + 1], out=tcs[t])
        hs[t + 1] = g[:, 3 * h:] * tcs[t]
    return hs[1:], {"gates": gates, "h": hs, "c": cs, "tanh_c": tcs}


def _rnn_seq(p: RnnLayerParams, inp: np.ndarray):
    T, B, _ = inp.shape
    proj = inp @ p.w_h.T + p.b_n
    hs = np.zeros((T + 1, B, p.hidden), dtype=inp.dtype)
    for t in range(T):
        hs[t + 1] = _act(p.sigma_h, proj[t] + hs[t] @ p.u_h.T)
    pre_y = hs[1:] @ p.w_y.T + p.b_y
    y = _act(p.sigma_y, pre_y)
    return y, {"h": hs, "pre_y": pre_y, "y": y}


def draw_masks(model: Model, batch: int, steps: int, rng: np.random.Generator):
    """Inverted-dropout masks: entries are 0 or ``1/(1-p)``."""
    p = model.dropout_p
    dtype = model.dtype
    scale = 1.0 / (1.0 - p)

    def one(shape):
        if p == 0.0:
            return np.ones(shape, dtype=dtype)
        return (rng.random(shape) >= p).astype(dtype) * dtype.type(scale)

    # layer masks are time-major, matching the recurrent loops
    layer_masks = [one((steps, batch, layer.output_width)) for layer in model.layers]
    head_mask = one((batch, model.head.W_fc.shape[0]))
    return layer_masks, head_mask


def _as_batch(X, f) -> np.ndarray:
    if isinstance(X, Sequence):
        X = X.data[None]
    elif isinstance(X, (list, tuple)) and X and isinstance(X[0], Sequence):
        X = np.stack([s.data for s in X])
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ShapeError(f"expected a (B, T, f) batch, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise InvalidInputError("empty batch or zero-length sequence")
    if X.shape[2] != f:
        raise ShapeError(f"sequence width {X.shape[2]} does not match model input width {f}")
    return X


def forward(
    model: Model,
    X,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    masks=None,
    skip_adapt: bool = False,
):
    """Batched forward pass.

    Returns ``(logits, cache)``; ``cache`` is None in eval mode. In train
    mode dropout masks are drawn from ``rng`` unless ``masks`` (as returned
    by :func:`draw_masks`) pins them.
    """
    if mode not in ("train", "eval"):
        raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    X = _as_batch(X, model.f).astype(model.dtype, copy=False)
    B, T, _ = X.shape
    train = mode == "train"
    if train:
        if masks is None:
            if rng is None:
                raise InvalidArgumentError("train-mode forward needs an rng or pinned masks")
            masks = draw_masks(model, B, T, rng)
        layer_masks, head_mask = masks
    Xt = np.ascontiguousarray(X.transpose(1, 0, 2))
    inp = Xt if skip_adapt else Xt @ model.adapt.M.T + model.adapt.b
    inputs, states = [], []
    for k, layer in enumerate(model.layers):
        inputs.append(inp)
        if isinstance(layer, LstmLayerParams):
            out, st = _lstm_seq(layer, inp)
        else:
            out, st = _rnn_seq(layer, inp)
        states.append(st)
        if train:
            out = out * layer_masks[k]
        inp = out
    hT = inp[-1]
    head = model.head
    z_fc = hT @ head.W_fc.T + head.b_fc
    a_fc = _act(head.activation, z_fc)
    a_drop = a_fc * head_mask if train else a_fc
    logits = a_drop @ head.W_out.T + head.b_out
    if not train:
        return logits, None
    cache = ForwardCache(
        model_id=id(model),
        model_version=model.version,
        X=Xt,
        layer_inputs=inputs,
        layer_states=states,
        masks=layer_masks,
        head_mask=head_mask,
        hT=hT,
        z_fc=z_fc,
        a_fc=a_fc,
        a_fc_dropped=a_drop,
        logits=logits,
        skip_adapt=skip_adapt,
    )
    return logits, cache


def _lstm_backward(p: LstmLayerParams, inp, st, dout, need_weights: bool):
    T, B, _ = inp.shape
    h = p.hidden
    W, _ = _stack_lstm(p)
    Wh, Wx = W[:, :h], W[:, h:]
    gates, hs, cs, tcs = st["gates"], st["h"], st["c"], st["tanh_c"]
    da_all = np.empty_like(gates)
    dh_next = np.zeros((B, h), dtype=inp.dtype)
    dc_next = np.zeros((B, h), dtype=inp.dtype)
    for t in range(T - 1, -1, -1):
        g = gates[t]
        f, i, c_tilde, o = g[:, :h], g[:, h: 2 * h], g[:, 2 * h: 3 * h], g[:, 3 * h:]
        dh = dout[t] + dh_next
        tc = tcs[t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = da_all[t]
        da[:, :h] = dc * cs[t]
        da[:, h: 2 * h] = dc * c_tilde
        da[:, 2 * h: 3 * h] = dc * i
        da[:, 3 * h:] = dh * tc
        dc_next = dc * f
        # local derivatives: s(1-s) for the sigmoid gates, 1-g^2 for the candidate
        deriv = g * (1.0 - g)
        deriv[:, 2 * h: 3 * h] = 1.0 - c_tilde * c_tilde
        da *= deriv
        dh_next = da @ Wh
    d_inp = da_all @ Wx
    grads = {}
    if need_weights:
        flat = da_all.reshape(T * B, 4 * h)
        dW = np.concatenate(
            [flat.T @ hs[:-1].reshape(T * B, h), flat.T @ inp.reshape(T * B, -1)], axis=1
        )
        db = flat.sum(axis=0)
        for k, g in enumerate(GATES):
            grads["W_" + g] = dW[k * h: (k + 1) * h]
            grads["b_" + g] = db[k * h: (k + 1) * h]
    return d_inp, grads


def _rnn_backward(p: RnnLayerParams, inp, st, dout, need_weights: bool):
    T, B, _ = inp.shape
    hs, pre_y, y = st["h"], st["pre_y"], st["y"]
    d_pre_y = dout * _act_grad(p.sigma_y, pre_y, y)
    dh_from_y = d_pre_y @ p.w_y
    d_pre_h = np.empty((T, B, p.hidden), dtype=inp.dtype)
    dh_next = np.zeros((B, p.hidden), dtype=inp.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh_from_y[t] + dh_next
        h_t = hs[t + 1]
        d = dh * (1.0 - h_t * h_t) if p.sigma_h == "tanh" else dh
        d_pre_h[t] = d
        dh_next = d @ p.u_h
    d_inp = d_pre_h @ p.w_h
    grads = {}
    if need_weights:
        n = T * B
        flat_h = d_pre_h.reshape(n, -1)
        flat_y = d_pre_y.reshape(n, -1)
        grads["w_h"] = flat_h.T @ inp.reshape(n, -1)
        grads["u_h"] = flat_h.T @ hs[:-1].reshape(n, -1)
        grads["b_n"] = flat_h.sum(axis=0)
        grads["w_y"] = flat_y.T @ hs[1:].reshape(n, -1)
        grads["b_y"] = flat_y.sum(axis=0)
    return d_inp, grads


def backward_batch(model: Model, cache: ForwardCache, labels, wrt=None) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean cross-entropy.

    ``wrt`` restricts which parameter names are returned (and skips the
    work for the rest); by default every parameter is differentiated.
    """
    if cache is None or cache.model_id != id(model) or cache.model_version != model.version:
        raise ContractError("forward cache does not belong to this model state")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    B = cache.logits.shape[0]
    if labels.shape[0] != B:
        raise ContractError(f"{labels.shape[0]} labels for a batch of {B}")
    if labels.min() < 0 or labels.max() >= model.G:
        raise InvalidArgumentError("label out of range")
    names = model.named_params()
    want = set(names) if wrt is None else set(wrt)
    head = model.head
    grads: dict[str, np.ndarray] = {}

    d_logits = softmax(cache.logits)
    d_logits[np.arange(B), labels] -= 1.0
    d_logits /= B
    if "head.W_out" in want:
        grads["head.W_out"] = d_logits.T @ cache.a_fc_dropped
    if "head.b_out" in want:
        grads["head.b_out"] = d_logits.sum(axis=0)
    d_a = (d_logits @ head.W_out) * cache.head_mask
    d_z = d_a * _act_grad(head.activation, cache.z_fc, cache.a_fc)
    if "head.W_fc" in want:
        grads["head.W_fc"] = d_z.T @ cache.hT
    if "head.b_fc" in want:
        grads["head.b_fc"] = d_z.sum(axis=0)

    need_below = [any(n.startswith(f"layers.{k}.") for n in want) for k in range(len(model.layers))]
    need_adapt = ("adapt.M" in want or "adapt.b" in want) and not cache.skip_adapt
    lowest = 0 if need_adapt else next((k for k, v in enumerate(need_below) if v), None)
    if lowest is None:
        return grads

    top = len(model.layers) - 1
    T = cache.X.shape[0]
    d_out = np.zeros((T, B, model.layers[top].output_width), dtype=cache.X.dtype)
    d_out[-1] = d_z @ head.W_fc
    for k in range(top, lowest - 1, -1):
        layer = model.layers[k]
        d_out = d_out * cache.masks[k]
        backprop = _lstm_backward if isinstance(layer, LstmLayerParams) else _rnn_backward
        d_out, layer_grads = backprop(layer, cache.layer_inputs[k], cache.layer_states[k], d_out, need_below[k])
        for name, g in layer_grads.items():
            if f"layers.{k}.{name}" in want:
                grads[f"layers.{k}.{name}"] = g
    if need_adapt:
        f = model.f
        flat_d = d_out.reshape(-1, f)
        if "adapt.M" in want:
            grads["adapt.M"] = flat_d.T @ cache.X.reshape(-1, f)
        if "adapt.b" in want:
            grads["adapt.b"] = flat_d.sum(axis=0)
    return grads


def batch_loss(logits: np.ndarray, labels) -> float:
    return float(batch_loss_array(logits, labels))


def batch_loss_array(logits: np.ndarray, labels):
    """Mean cross-entropy as a numpy scalar in the dtype of ``logits``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    return -log_softmax(logits)[np.arange(len(labels)), labels].mean()


def classify_forward(model: Model, seq, mode: str = "eval", rng: np.random.Generator | None = None):
    """Single-sequence forward: ``(logits, probs, cache)``; cache is None in eval mode."""
    data = seq.data if isinstance(seq, Sequence) else np.asarray(seq)
    if data.ndim != 2 or data.shape[0] == 0:
        raise InvalidInputError("classify_forward needs a non-empty T x f sequence")
    logits, cache = forward(model, data[None], mode=mode, rng=rng)
    return logits[0], softmax(logits[0]), cache


def classifier_logits(model: Model, X) -> np.ndarray:
    """Eval-mode logits of the bare classifier, bypassing the adaptation layer."""
    logits, _ = forward(model, X, mode="eval", skip_adapt=True)
    return logits


def predict(model: Model, X, batch_size: int = 512) -> np.ndarray:
    X = _as_batch(X, model.f)
    out = [forward(model, X[i: i + batch_size])[0].argmax(axis=1) for i in range(0, len(X), batch_size)]
    return np.concatenate(out)
