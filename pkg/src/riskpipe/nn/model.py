"""Conv1D -> LSTM -> dense classifier written directly against numpy.

Layout conventions:

* inputs are ``(batch, steps, features)``
* ``conv_kernel`` is ``(kernel, features, filters)``, valid padding, ReLU
* LSTM gate blocks are stacked ``[input, forget, cell, output]`` along the
  last axis of ``lstm_W`` (filters x 4H), ``lstm_U`` (H x 4H), ``lstm_bias``
* dropout is inverted (scaled at train time), so inference needs no rescale
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ValidationError

PARAM_NAMES = ("conv_kernel", "conv_bias", "lstm_W", "lstm_U", "lstm_bias", "dense_W", "dense_bias")
# tensors that carry the L2 penalty; biases never do
KERNELS = ("conv_kernel", "lstm_W", "lstm_U", "dense_W")


@dataclass(frozen=True)
class ModelConfig:
    input_steps: int = 30
    input_features: int = 5
    conv_filters: int = 64
    conv_kernel: int = 3
    conv_padding: str = "valid"
    lstm_units: int = 128
    num_classes: int = 4
    l2_lambda: float = 0.01
    dropout_post_cnn: float = 0.1
    dropout_post_lstm: float = 0.3

    def __post_init__(self):
        for name in ("input_steps", "input_features", "conv_filters", "conv_kernel", "lstm_units", "num_classes"):
            if int(getattr(self, name)) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.conv_padding != "valid":
            raise ValidationError("only valid padding is supported")
        if self.conv_kernel > self.input_steps:
            raise ValidationError("conv kernel longer than the input")
        for name in ("dropout_post_cnn", "dropout_post_lstm"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValidationError(f"{name} must lie in [0, 1)")
        if self.l2_lambda < 0:
            raise ValidationError("l2_lambda must be >= 0")

    @property
    def conv_steps(self) -> int:
        return self.input_steps - self.conv_kernel + 1

    def shapes(self) -> dict[str, tuple[int, ...]]:
        k, f, c, h, n = self.conv_kernel, self.input_features, self.conv_filters, self.lstm_units, self.num_classes
        return {
            "conv_kernel": (k, f, c),
            "conv_bias": (c,),
            "lstm_W": (c, 4 * h),
            "lstm_U": (h, 4 * h),
            "lstm_bias": (4 * h,),
            "dense_W": (h, n),
            "dense_bias": (n,),
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


Params = dict[str, np.ndarray]


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Params:
    """Fan-in scaled uniform weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    shapes = config.shapes()
    fan_in = {
        "conv_kernel": config.conv_kernel * config.input_features,
        "lstm_W": config.conv_filters,
        "lstm_U": config.lstm_units,
        "dense_W": config.lstm_units,
    }
    params = {}
    for name in PARAM_NAMES:
        if name in fan_in:
            limit = np.sqrt(3.0 / fan_in[name])
            params[name] = rng.uniform(-limit, limit, size=shapes[name]).astype(dtype)
        else:
            params[name] = np.zeros(shapes[name], dtype=dtype)
    h = config.lstm_units
    params["lstm_bias"][h : 2 * h] = 1.0
    return params


def check_params(params: Params, config: ModelConfig) -> None:
    for name, shape in config.shapes().items():
        if name not in params:
            raise ValidationError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ValidationError(f"{name}: expected shape {shape}, got {params[name].shape}")


def _sigmoid(x):
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _dropout_mask(rng, shape, rate, dtype):
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


def forward(params: Params, batch: np.ndarray, config: ModelConfig, train_mode: bool = False, dropout_seed: int | None = None):
    """Class probabilities ``(B, classes)``; with ``train_mode`` also the
    activation cache needed by :func:`backward`."""
    dtype = params["dense_W"].dtype
    X = np.asarray(batch, dtype=dtype)
    if X.ndim != 3 or X.shape[1:] != (config.input_steps, config.input_features):
        raise ValidationError(f"expected batch of shape (B, {config.input_steps}, {config.input_features}), got {X.shape}")
    if not np.isfinite(X).all():
        raise ValidationError("non-finite value in input batch")
    B = X.shape[0]
    k, F, C, H = config.conv_kernel, config.input_features, config.conv_filters, config.lstm_units
    T1 = config.conv_steps

    patches = sliding_window_view(X, k, axis=1).transpose(0, 1, 3, 2).reshape(B, T1, k * F)
    z1 = patches @ params["conv_kernel"].reshape(k * F, C) + params["conv_bias"]
    a1 = np.maximum(z1, 0)

    rng = np.random.default_rng(dropout_seed) if train_mode else None
    m1 = m2 = None
    if train_mode and config.dropout_post_cnn > 0:
        m1 = _dropout_mask(rng, a1.shape, config.dropout_post_cnn, dtype)
        xs = a1 * m1
    else:
        xs = a1

    U = params["lstm_U"]
    # time-major so every per-step slice is contiguous
    zx = np.ascontiguousarray((xs @ params["lstm_W"] + params["lstm_bias"]).transpose(1, 0, 2))  # (T1, B, 4H)
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    if train_mode:
        gates = np.empty((T1, B, 4 * H), dtype=dtype)
        cs = np.zeros((T1 + 1, B, H), dtype=dtype)
        hs = np.zeros((T1 + 1, B, H), dtype=dtype)
        tcs = np.empty((T1, B, H), dtype=dtype)
    for t in range(T1):
        z = zx[t]
        z += h @ U
        act = gates[t] if train_mode else z
        act[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        act[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        act[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
        i, f, g, o = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        if train_mode:
            cs[t + 1] = c
            hs[t + 1] = h
            tcs[t] = tc

    if train_mode and config.dropout_post_lstm > 0:
        m2 = _dropout_mask(rng, h.shape, config.dropout_post_lstm, dtype)
        hd = h * m2
    else:
        hd = h
    logits = hd @ params["dense_W"] + params["dense_bias"]
    probs = softmax(logits)
    if not train_mode:
        return probs
    cache = dict(patches=patches, z1=z1, m1=m1, xs=xs, gates=gates, cs=cs, hs=hs, tcs=tcs, m2=m2, hd=hd, probs=probs)
    return probs, cache


def l2_penalty(params: Params, l2_lambda: float) -> float:
    if l2_lambda == 0:
        return 0.0
    return float(l2_lambda * sum(np.sum(params[n].astype(np.float64) ** 2) for n in KERNELS))


def _sample_weights(one_hot: np.ndarray, class_weights) -> np.ndarray:
    if class_weights is None:
        return np.ones(len(one_hot))
    return one_hot @ np.asarray(class_weights, dtype=np.float64)


def loss(probs: np.ndarray, one_hot: np.ndarray, params: Params, l2_lambda: float, class_weights=None) -> float:
    """(Weighted) mean cross-entropy plus ``l2_lambda * sum(kernel**2)``."""
    probs = np.asarray(probs, dtype=np.float64)
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if probs.shape != one_hot.shape:
        raise ValidationError(f"probability shape {probs.shape} != label shape {one_hot.shape}")
    w = _sample_weights(one_hot, class_weights)
    ce = -np.sum(one_hot * np.log(np.maximum(probs, 1e-12)), axis=1)
    return float(np.sum(w * ce) / np.sum(w)) + l2_penalty(params, l2_lambda)


def backward(params: Params, cache: dict, one_hot: np.ndarray, config: ModelConfig, l2_lambda: float | None = None, class_weights=None) -> Params:
    """Gradients of :func:`loss` for every parameter tensor (BPTT)."""
    if cache is None:
        raise ValidationError("backward needs the cache of a train-mode forward pass")
    lam = config.l2_lambda if l2_lambda is None else l2_lambda
    probs = cache["probs"]
    dtype = probs.dtype
    B = probs.shape[0]
    H, C, k, F = config.lstm_units, config.conv_filters, config.conv_kernel, config.input_features
    T1 = config.conv_steps

    w = _sample_weights(one_hot, class_weights)
    dlogits = ((probs - one_hot) * (w / w.sum())[:, None]).astype(dtype)

    grads = {}
    grads["dense_W"] = cache["hd"].T @ dlogits
    grads["dense_bias"] = dlogits.sum(axis=0)
    dh = dlogits @ params["dense_W"].T
    if cache["m2"] is not None:
        dh = dh * cache["m2"]

    gates, cs, hs, tcs = cache["gates"], cache["cs"], cache["hs"], cache["tcs"]
    U = params["lstm_U"]
    UT = np.ascontiguousarray(U.T)
    dz_all = np.empty((T1, B, 4 * H), dtype=dtype)
    dc = np.zeros((B, H), dtype=dtype)
    for t in reversed(range(T1)):
        gt = gates[t]
        i, f, g, o = gt[:, :H], gt[:, H : 2 * H], gt[:, 2 * H : 3 * H], gt[:, 3 * H :]
        tc = tcs[t]
        dc = dc + dh * o * (1 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dc * g * i * (1 - i)
        dz[:, H : 2 * H] = dc * cs[t] * f * (1 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1 - g * g)
        dz[:, 3 * H :] = dh * tc * o * (1 - o)
        dh = dz @ UT
        dc = dc * f
    grads["lstm_U"] = hs[:T1].reshape(-1, H).T @ dz_all.reshape(-1, 4 * H)
    dz_all = dz_all.transpose(1, 0, 2)  # back to (B, T1, 4H)
    grads["lstm_W"] = cache["xs"].reshape(-1, C).T @ dz_all.reshape(-1, 4 * H)
    grads["lstm_bias"] = dz_all.sum(axis=(0, 1))

    dxs = dz_all @ params["lstm_W"].T
    if cache["m1"] is not None:
        dxs = dxs * cache["m1"]
    dz1 = dxs * (cache["z1"] > 0)
    grads["conv_kernel"] = (cache["patches"].reshape(-1, k * F).T @ dz1.reshape(-1, C)).reshape(k, F, C)
    grads["conv_bias"] = dz1.sum(axis=(0, 1))

    if lam:
        for name in KERNELS:
            grads[name] = grads[name] + dtype.type(2 * lam) * params[name]
    return {name: grads[name].astype(dtype, copy=False) for name in PARAM_NAMES}


def predict_proba(params: Params, windows: np.ndarray, config: ModelConfig, chunk: int = 512) -> np.ndarray:
    windows = np.asarray(windows)
    if windows.ndim != 3:
        raise ValidationError(f"expected (N, steps, features) windows, got shape {windows.shape}")
    if len(windows) == 0:
        return np.zeros((0, config.num_classes), dtype=params["dense_W"].dtype)
    return np.concatenate([forward(params, windows[s : s + chunk], config) for s in range(0, len(windows), chunk)])


def argmax_high(probs: np.ndarray) -> np.ndarray:
    """Row argmax with ties resolved toward the higher class index."""
    n = probs.shape[1]
    return n - 1 - np.argmax(probs[:, ::-1], axis=1)


def predict(params: Params, windows: np.ndarray, config: ModelConfig):
    """Returns ``(labels, confidence, probabilities)`` per window."""
    probs = predict_proba(params, windows, config)
    labels = argmax_high(probs)
    return labels, probs[np.arange(len(probs)), labels], probs


def one_hot(labels, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def gradient_check(
    config: ModelConfig,
    batch: np.ndarray,
    labels,
    epsilon: float = 1e-5,
    samples_per_tensor: int = 200,
    seed: int = 0,
    params: Params | None = None,
    tamper=None,
) -> float:
    """Max relative error between backprop and central differences.

    Runs in float64 with dropout disabled. ``tamper`` optionally rewrites the
    analytic gradient dict before comparison (sensitivity controls).
    """
    cfg = ModelConfig(**{**config.to_dict(), "dropout_post_cnn": 0.0, "dropout_post_lstm": 0.0})
    if params is None:
        params = init_model(cfg, seed, dtype=np.float64)
        rng = np.random.default_rng(seed + 1)
        # non-trivial biases so no gradient is zero by construction
        for name in ("conv_bias", "lstm_bias", "dense_bias"):
            params[name] = params[name] + rng.normal(0, 0.1, params[name].shape)
    params = {n: np.array(v, dtype=np.float64) for n, v in params.items()}
    X = np.asarray(batch, dtype=np.float64)
    Y = one_hot(labels, cfg.num_classes)

    probs, cache = forward(params, X, cfg, train_mode=True, dropout_seed=0)
    analytic = backward(params, cache, Y, cfg)
    if tamper is not None:
        analytic = tamper(analytic)

    def objective() -> float:
        return loss(forward(params, X, cfg), Y, params, cfg.l2_lambda)

    rng = np.random.default_rng(seed + 2)
    worst = 0.0
    for name in PARAM_NAMES:
        flat = params[name].reshape(-1)
        size = flat.size
        coords = np.arange(size) if size <= samples_per_tensor else rng.choice(size, samples_per_tensor, replace=False)
        ga_flat = analytic[name].reshape(-1)
        for j in coords:
            old = flat[j]
            flat[j] = old + epsilon
            up = objective()
            flat[j] = old - epsilon
            down = objective()
            flat[j] = old
            gn = (up - down) / (2 * epsilon)
            ga = ga_flat[j]
            err = abs(ga - gn) / max(1e-8, abs(ga) + abs(gn))
            worst = max(worst, err)
    return worst
