"""Layer arithmetic with hand-written reverse-mode gradients.

A :class:`Model` is a chain of layers over float64 batches. Images are
``(N, C, H, W)``; dense activations are ``(N, D)``. Activation index 0 is
the input and index ``i + 1`` the output of layer ``i``; ``residual_add``
layers name the activation index they add back in.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DivergenceError, ShapeError

LAYER_KINDS = ("dense", "conv2d", "maxpool2d", "relu", "flatten", "residual_add", "softmax")
PROB_FLOOR = 1e-12
# conv im2col buffers are filled in batch chunks of at most this many doubles
_COLS_BUDGET = 1 << 23


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    out_channels: int = 0
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: str = "same"
    pool: int = 2
    source: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.padding not in ("same", "valid"):
            raise ConfigError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "dense":
            d["units"] = self.units
        elif self.kind == "conv2d":
            d.update(out_channels=self.out_channels, kernel=list(self.kernel), stride=self.stride, padding=self.padding)
        elif self.kind == "maxpool2d":
            d["pool"] = self.pool
        elif self.kind == "residual_add":
            d["source"] = self.source
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "kernel" in d:
            d["kernel"] = tuple(d["kernel"])
        return cls(**d)


def dense(units):
    return LayerSpec("dense", units=units)


def conv2d(out_channels, kernel=3, stride=1, padding="same"):
    k = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
    return LayerSpec("conv2d", out_channels=out_channels, kernel=k, stride=stride, padding=padding)


def maxpool2d(pool=2):
    return LayerSpec("maxpool2d", pool=pool)


def relu():
    return LayerSpec("relu")


def flatten():
    return LayerSpec("flatten")


def residual_add(source):
    return LayerSpec("residual_add", source=source)


def softmax():
    return LayerSpec("softmax")


def _same_pads(k):
    return (k - 1) // 2, k - 1 - (k - 1) // 2


def _conv_geometry(spec, in_shape):
    c, h, w = in_shape
    kh, kw = spec.kernel
    if spec.padding == "same":
        ph, pw = _same_pads(kh), _same_pads(kw)
    else:
        ph, pw = (0, 0), (0, 0)
    hp, wp = h + sum(ph), w + sum(pw)
    ho = (hp - kh) // spec.stride + 1
    wo = (wp - kw) // spec.stride + 1
    return ph, pw, ho, wo


def infer_shapes(input_shape, specs):
    """Per-sample activation shapes, validating that the chain composes."""
    shapes = [tuple(input_shape)]
    for i, spec in enumerate(specs):
        s = shapes[-1]
        where = f"layer {i} ({spec.kind})"
        if spec.kind == "dense":
            if len(s) != 1:
                raise ShapeError(f"{where} needs a flat input, got {s}; insert flatten")
            if spec.units < 1:
                raise ConfigError(f"{where} needs units >= 1")
            out = (spec.units,)
        elif spec.kind == "conv2d":
            if len(s) != 3:
                raise ShapeError(f"{where} needs (C, H, W) input, got {s}")
            if spec.out_channels < 1 or spec.stride < 1:
                raise ConfigError(f"{where} needs out_channels >= 1 and stride >= 1")
            _, _, ho, wo = _conv_geometry(spec, s)
            if ho < 1 or wo < 1:
                raise ShapeError(f"{where}: kernel {spec.kernel} does not fit input {s}")
            out = (spec.out_channels, ho, wo)
        elif spec.kind == "maxpool2d":
            if len(s) != 3:
                raise ShapeError(f"{where} needs (C, H, W) input, got {s}")
            if s[1] < spec.pool or s[2] < spec.pool:
                raise ShapeError(f"{where}: pool {spec.pool} larger than input {s}")
            out = (s[0], s[1] // spec.pool, s[2] // spec.pool)
        elif spec.kind == "flatten":
            out = (int(np.prod(s)),)
        elif spec.kind == "residual_add":
            if not 0 <= spec.source <= i:
                raise ConfigError(f"{where}: source activation {spec.source} is not an earlier activation")
            if shapes[spec.source] != s:
                raise ShapeError(f"{where}: skip from activation {spec.source} has shape {shapes[spec.source]}, "
                                 f"main path has {s}")
            out = s
        elif spec.kind == "softmax":
            if len(s) != 1:
                raise ShapeError(f"{where} needs a flat input, got {s}")
            if i != len(specs) - 1:
                raise ConfigError(f"{where}: softmax must be the last layer")
            out = s
        else:
            out = s
        shapes.append(out)
    return shapes


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(specs, shapes, seed=0):
    rng = np.random.default_rng(seed)
    params = []
    for spec, s_in, s_out in zip(specs, shapes[:-1], shapes[1:]):
        if spec.kind == "dense":
            params.append({"W": _glorot(rng, (s_in[0], s_out[0]), s_in[0], s_out[0]), "b": np.zeros(s_out[0])})
        elif spec.kind == "conv2d":
            kh, kw = spec.kernel
            cin, cout = s_in[0], s_out[0]
            params.append({"W": _glorot(rng, (cout, cin, kh, kw), cin * kh * kw, cout * kh * kw),
                           "b": np.zeros(cout)})
        else:
            params.append({})
    return params


@dataclass
class Model:
    input_shape: tuple
    specs: list
    params: list = None
    seed: int = 0
    shapes: list = field(init=False)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.specs = list(self.specs)
        self.shapes = infer_shapes(self.input_shape, self.specs)
        if self.params is None:
            self.params = init_params(self.specs, self.shapes, self.seed)

    @property
    def output_shape(self):
        return self.shapes[-1]

    def copy(self):
        m = Model(self.input_shape, self.specs, [{k: v.copy() for k, v in p.items()} for p in self.params], self.seed)
        return m


def count_params(model) -> int:
    return int(sum(v.size for p in model.params for v in p.values()))


# --------------------------------------------------------------------------
# per-kind forward / backward


def _conv_forward(spec, p, x):
    (pt, pb), (pl, pr), ho, wo = _conv_geometry(spec, x.shape[1:])
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x
    kh, kw = spec.kernel
    cout = p["W"].shape[0]
    wm = p["W"].reshape(cout, -1)
    n = x.shape[0]
    per = max(1, _COLS_BUDGET // max(1, ho * wo * wm.shape[1]))
    out = np.empty((n, cout, ho, wo))
    for s in range(0, n, per):
        cols = kernels.im2col(xp[s:s + per], kh, kw, spec.stride)
        y = cols @ wm.T + p["b"]
        out[s:s + per] = y.transpose(0, 2, 1).reshape(-1, cout, ho, wo)
    return out, xp


def _conv_backward(spec, p, x, xp, dy):
    (pt, pb), (pl, pr), ho, wo = _conv_geometry(spec, x.shape[1:])
    kh, kw = spec.kernel
    cout = p["W"].shape[0]
    wm = p["W"].reshape(cout, -1)
    n = x.shape[0]
    per = max(1, _COLS_BUDGET // max(1, ho * wo * wm.shape[1]))
    dwm = np.zeros_like(wm)
    dxp = np.empty(xp.shape)
    for s in range(0, n, per):
        cols = kernels.im2col(xp[s:s + per], kh, kw, spec.stride)
        dflat = dy[s:s + per].reshape(-1, cout, ho * wo).transpose(0, 2, 1)
        dwm += dflat.reshape(-1, cout).T @ cols.reshape(-1, cols.shape[2])
        dcols = dflat @ wm
        dxp[s:s + per] = kernels.col2im(dcols, xp[s:s + per].shape, kh, kw, spec.stride)
    db = dy.sum(axis=(0, 2, 3))
    dx = dxp[:, :, pt:xp.shape[2] - pb, pl:xp.shape[3] - pr]
    return dx, {"W": dwm.reshape(p["W"].shape), "b": db}


def softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _layer_forward(spec, p, x):
    k = spec.kind
    if k == "dense":
        return x @ p["W"] + p["b"], None
    if k == "conv2d":
        return _conv_forward(spec, p, x)
    if k == "maxpool2d":
        return kernels.maxpool(x, spec.pool)
    if k == "relu":
        return np.maximum(x, 0.0), None
    if k == "flatten":
        return x.reshape(x.shape[0], -1), None
    if k == "softmax":
        return softmax_rows(x), None
    raise AssertionError(k)


def _layer_backward(spec, p, x, y, cache, dy):
    k = spec.kind
    if k == "dense":
        return dy @ p["W"].T, {"W": x.T @ dy, "b": dy.sum(axis=0)}
    if k == "conv2d":
        return _conv_backward(spec, p, x, cache, dy)
    if k == "maxpool2d":
        return kernels.maxpool_back(dy, cache, spec.pool, x.shape[2], x.shape[3]), {}
    if k == "relu":
        return dy * (x > 0), {}
    if k == "flatten":
        return dy.reshape(x.shape), {}
    if k == "softmax":
        return y * (dy - (dy * y).sum(axis=1, keepdims=True)), {}
    raise AssertionError(k)


@dataclass
class Activations:
    values: list
    caches: list

    @property
    def output(self):
        return self.values[-1]


def forward(model: Model, batch) -> Activations:
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"layer 0 ({model.specs[0].kind if model.specs else 'input'}) expects input "
                         f"{model.input_shape}, batch has {x.shape[1:]}")
    values, caches = [x], []
    for spec, p in zip(model.specs, model.params):
        if spec.kind == "residual_add":
            y, cache = values[-1] + values[spec.source], None
        else:
            y, cache = _layer_forward(spec, p, values[-1])
        values.append(y)
        caches.append(cache)
    return Activations(values, caches)


class LossValue(float):
    """A float that also records whether the probability floor was hit."""

    clamped = False


def cross_entropy(probabilities, labels) -> LossValue:
    p = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = p[np.arange(p.shape[0]), labels]
    clamped = bool(np.any(picked < PROB_FLOOR))
    out = LossValue(float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR)))) + 0.0)
    out.clamped = clamped
    return out


def mse(output, target) -> float:
    d = np.asarray(output, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(d * d))


def loss_of(model, acts, targets, loss="cross_entropy") -> float:
    if loss == "cross_entropy":
        return cross_entropy(acts.output, targets)
    if loss == "mse":
        return mse(acts.output, targets)
    raise ConfigError(f"unknown loss {loss!r}")


def backward(model: Model, acts: Activations, targets, loss="cross_entropy", require_finite=False):
    """Gradients of the mean batch loss for every layer's parameters.

    ``targets`` are class indices for cross-entropy, arrays shaped like the
    output for mean-squared error.
    """
    out = acts.output
    n = out.shape[0]
    last = len(model.specs) - 1
    start = last
    if loss == "cross_entropy":
        labels = np.asarray(targets, dtype=np.int64)
        onehot = np.zeros_like(out)
        onehot[np.arange(n), labels] = 1.0
        if model.specs and model.specs[-1].kind == "softmax":
            # fused softmax + cross-entropy
            grad = (out - onehot) / n
            start = last - 1
        else:
            grad = -onehot / (n * np.maximum(out, PROB_FLOOR))
    elif loss == "mse":
        grad = 2.0 * (out - np.asarray(targets, dtype=np.float64)) / out.size
    else:
        raise ConfigError(f"unknown loss {loss!r}")

    grads = [{} for _ in model.specs]
    pending = {}  # extra upstream gradient for activations feeding a skip connection
    for i in range(start, -1, -1):
        spec = model.specs[i]
        if i + 1 in pending:
            grad = grad + pending.pop(i + 1)
        if spec.kind == "residual_add":
            pending[spec.source] = pending.get(spec.source, 0) + grad
            continue
        grad, grads[i] = _layer_backward(spec, model.params[i], acts.values[i], acts.values[i + 1],
                                         acts.caches[i], grad)
    if require_finite:
        for i, g in enumerate(grads):
            for k, v in g.items():
                if not np.isfinite(v).all():
                    raise DivergenceError(f"non-finite gradient in layer {i} ({model.specs[i].kind}) {k}")
    return grads


def sgd_step(params, grads, learning_rate: float, frozen=()):
    """Plain SGD, ``p - lr * g``; layers listed in ``frozen`` are left alone."""
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if i in frozen or not p:
            new.append(p)
            continue
        layer = {}
        for k, v in p.items():
            gk = g[k]
            if gk.shape != v.shape:
                raise ShapeError(f"layer {i} {k}: gradient shape {gk.shape} != parameter shape {v.shape}")
            if not np.isfinite(gk).all():
                raise DivergenceError(f"non-finite gradient in layer {i} {k}")
            layer[k] = v - learning_rate * gk
        new.append(layer)
    return new


def grad_check(model: Model, batch, targets, epsilon: float = 1e-5, loss="cross_entropy", max_params=10_000) -> float:
    """Max relative error between backprop and central-difference gradients."""
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    n_params = count_params(model)
    if n_params > max_params:
        raise ConfigError(f"model has {n_params} parameters; grad_check enumerates at most {max_params}")
    acts = forward(model, batch)
    analytic = backward(model, acts, targets, loss)
    worst = 0.0
    for i, p in enumerate(model.params):
        for k, v in p.items():
            flat = v.reshape(-1)
            g_bp = analytic[i][k].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + epsilon
                up = float(loss_of(model, forward(model, batch), targets, loss))
                flat[j] = orig - epsilon
                down = float(loss_of(model, forward(model, batch), targets, loss))
                flat[j] = orig
                g_fd = (up - down) / (2 * epsilon)
                denom = max(abs(g_bp[j]), abs(g_fd), 1e-8)
                worst = max(worst, abs(g_bp[j] - g_fd) / denom)
    return worst
