"""Small 2D CNN over mel-spectrogram images with hand-rolled forward and
backward passes, AdamW, and a one-cycle learning-rate schedule.

Everything runs in float64 numpy: slow by deep-learning standards but exactly
reproducible and friendly to finite-difference checking.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class CnnConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128, 256, 256)
    kernel: int = 5
    dropout: float = 0.25
    batch_size: int = 16
    max_lr: float = 6e-5
    epochs: int = 150
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    pct_start: float = 0.3
    lr_div: float = 25.0
    lr_final_div: float = 1e4

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_lr <= 0:
            raise ValueError("max_lr must be positive")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd for same-padding")

    @property
    def n_blocks(self) -> int:
        return len(self.channels)


@dataclass
class CnnModel:
    config: CnnConfig
    params: dict[str, np.ndarray]
    running: dict[str, np.ndarray]  # batch-norm running mean/var per block
    in_channels: int = 1
    # input preparation the model was trained with (see prepare_mel_image)
    freq_pool: int = 1
    input_width: int = 64

    def param_names(self) -> list[str]:
        return sorted(self.params)


def init_model(cfg: CnnConfig, in_channels: int, seed: int) -> CnnModel:
    """Kaiming-uniform conv/dense weights, unit batch-norm scale, zero shift."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    running: dict[str, np.ndarray] = {}
    c_in = in_channels
    k = cfg.kernel
    for i, c_out in enumerate(cfg.channels):
        fan_in = c_in * k * k
        bound = math.sqrt(6.0 / fan_in)
        params[f"conv{i}_w"] = rng.uniform(-bound, bound, (c_out, c_in, k, k))
        params[f"conv{i}_b"] = np.zeros(c_out)
        params[f"bn{i}_gamma"] = np.ones(c_out)
        params[f"bn{i}_beta"] = np.zeros(c_out)
        running[f"bn{i}_mean"] = np.zeros(c_out)
        running[f"bn{i}_var"] = np.ones(c_out)
        c_in = c_out
    bound = math.sqrt(6.0 / c_in)
    params["fc_w"] = rng.uniform(-bound, bound, (2, c_in))
    params["fc_b"] = np.zeros(2)
    return CnnModel(config=cfg, params=params, running=running,
                    in_channels=in_channels)


# --- layer primitives -------------------------------------------------------

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 cross-correlation. x: (B,C,H,W), w: (O,C,k,k)."""
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, kernel {w.shape[1]}")
    k = w.shape[2]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # windows: (B, C, H, W, k, k) -> contract C,k,k against w
    y = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.transpose(y, (0, 3, 1, 2)) + b[None, :, None, None]


def conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    k = w.shape[2]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    dw = np.tensordot(dy, windows, axes=([0, 2, 3], [0, 2, 3]))  # (O,C,k,k)
    db = dy.sum(axis=(0, 2, 3))
    w_flip = np.transpose(w[:, :, ::-1, ::-1], (1, 0, 2, 3))
    dx = conv2d_forward(dy, w_flip, np.zeros(w.shape[1]))
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training):
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_mean = (1 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mean
        new_var = (1 - BN_MOMENTUM) * running_var + BN_MOMENTUM * var
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma)
    return y, cache, new_mean, new_var


def batchnorm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[None, :, None, None]
    dx = (inv_std[None, :, None, None] / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    )
    return dx, dgamma, dbeta


def maxpool2_forward(x):
    b, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"spatial size {h}x{w} too small for 2x2 pooling")
    h2, w2 = h // 2, w // 2
    win = x[:, :, : h2 * 2, : w2 * 2].reshape(b, c, h2, 2, w2, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
    arg = win.argmax(axis=-1)  # first max wins: lowest window index on ties
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool2_backward(dy, arg, in_shape):
    b, c, h, w = in_shape
    h2, w2 = h // 2, w // 2
    dwin = np.zeros((b, c, h2, w2, 4))
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    dwin = dwin.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(in_shape)
    dx[:, :, : h2 * 2, : w2 * 2] = dwin.reshape(b, c, h2 * 2, w2 * 2)
    return dx


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-scaling dropout mask: survivors carry 1/(1-p)."""
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# --- forward / backward -------------------------------------------------------

def _forward(model: CnnModel, x: np.ndarray, training: bool,
             dropout_masks: list[np.ndarray] | None, update_running: bool):
    cfg = model.config
    p = model.params
    caches = []
    h = x
    for i in range(cfg.n_blocks):
        conv_in = h
        h = conv2d_forward(h, p[f"conv{i}_w"], p[f"conv{i}_b"])
        h, bn_cache, new_mean, new_var = batchnorm_forward(
            h, p[f"bn{i}_gamma"], p[f"bn{i}_beta"],
            model.running[f"bn{i}_mean"], model.running[f"bn{i}_var"], training)
        if training and update_running:
            model.running[f"bn{i}_mean"] = new_mean
            model.running[f"bn{i}_var"] = new_var
        relu_mask = h > 0
        h = h * relu_mask
        pool_in_shape = h.shape
        h, pool_arg = maxpool2_forward(h)
        if training and dropout_masks is not None:
            mask = dropout_masks[i]
            h = h * mask
        else:
            mask = None
        caches.append((conv_in, bn_cache, relu_mask, pool_in_shape, pool_arg, mask))
    gap_in_shape = h.shape
    pooled = h.mean(axis=(2, 3))  # (B, C)
    logits = pooled @ p["fc_w"].T + p["fc_b"]
    return logits, (caches, gap_in_shape, pooled)


def forward_logits(model: CnnModel, x: np.ndarray) -> np.ndarray:
    """Eval-mode logits (running batch-norm stats, no dropout)."""
    x = np.asarray(x, dtype=np.float64)
    min_side = 2 ** model.config.n_blocks
    if x.shape[2] < min_side or x.shape[3] < min_side:
        raise ValueError(f"input {x.shape[2]}x{x.shape[3]} too small for "
                         f"{model.config.n_blocks} pooling stages")
    logits, _ = _forward(model, x, training=False, dropout_masks=None,
                         update_running=False)
    return logits


def predict_proba(model: CnnModel, x: np.ndarray,
                  chunk: int = 64) -> np.ndarray:
    """Positive-class probability per image.

    Inference is per-sample (running batch-norm stats, no dropout), so the
    batch is processed in fixed-size chunks to bound the activation buffers;
    results are independent of the chunking.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([softmax(forward_logits(model, x[i:i + chunk]))[:, 1]
                           for i in range(0, len(x), chunk)])


def make_dropout_masks(model: CnnModel, x_shape, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    cfg = model.config
    b, _, h, w = x_shape
    masks = []
    for i in range(cfg.n_blocks):
        h, w = h // 2, w // 2
        masks.append(dropout_mask((b, cfg.channels[i], h, w), cfg.dropout, rng))
    return masks


def loss_and_grads(model: CnnModel, x: np.ndarray, labels: np.ndarray,
                   dropout_masks: list[np.ndarray] | None = None,
                   update_running: bool = False):
    """Mean softmax cross-entropy and gradients for every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0/1")
    logits, (caches, gap_in_shape, pooled) = _forward(
        model, x, training=True, dropout_masks=dropout_masks,
        update_running=update_running)
    b = len(labels)
    probs = softmax(logits)
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(b), labels], 1e-300, None))))
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss: training diverged")

    p = model.params
    grads: dict[str, np.ndarray] = {}
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    grads["fc_w"] = dlogits.T @ pooled
    grads["fc_b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ p["fc_w"]
    _, _, gh, gw = gap_in_shape
    dh = np.broadcast_to(dpooled[:, :, None, None] / (gh * gw), gap_in_shape).copy()

    for i in reversed(range(model.config.n_blocks)):
        conv_in, bn_cache, relu_mask, pool_in_shape, pool_arg, mask = caches[i]
        if mask is not None:
            dh = dh * mask
        dh = maxpool2_backward(dh, pool_arg, pool_in_shape)
        dh = dh * relu_mask
        dh, dgamma, dbeta = batchnorm_backward(dh, bn_cache)
        grads[f"bn{i}_gamma"] = dgamma
        grads[f"bn{i}_beta"] = dbeta
        dh, dw, db = conv2d_backward(conv_in, p[f"conv{i}_w"], dh)
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    return loss, grads


# --- optimization -------------------------------------------------------------

@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()})


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState, lr: float, weight_decay: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place AdamW: bias-corrected moments plus decoupled decay
    p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p."""
    state.t += 1
    t = state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1 ** t)
        v_hat = state.v[name] / (1 - beta2 ** t)
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps) \
            - lr * weight_decay * params[name]


def onecycle_lr(step: int, total_steps: int, max_lr: float,
                pct_start: float = 0.3, div: float = 25.0,
                final_div: float = 1e4) -> float:
    """Linear ramp max_lr/div -> max_lr over pct_start of the run, then a
    linear decay to max_lr/final_div."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warm = max(1, round(pct_start * total_steps))
    start_lr = max_lr / div
    final_lr = max_lr / final_div
    if step <= warm:
        return start_lr + (max_lr - start_lr) * step / warm
    span = total_steps - 1 - warm
    if span <= 0:
        return max_lr
    return max_lr + (final_lr - max_lr) * (step - warm) / span


# --- training -------------------------------------------------------------

@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    lr_log: list[float] = field(default_factory=list)


def cnn_train(x: np.ndarray, y: np.ndarray, cfg: CnnConfig, seed: int,
              x_val: np.ndarray | None = None,
              y_val: np.ndarray | None = None) -> tuple[CnnModel, TrainHistory]:
    """Mini-batch AdamW training with the one-cycle schedule; fully
    deterministic for a given seed."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(set(y.tolist())) < 2:
        raise ValueError("need both classes present")
    n = len(x)
    model = init_model(cfg, x.shape[1], seed)
    state = AdamWState.zeros_like(model.params)
    rng = np.random.default_rng(seed + 1)

    batches_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = batches_per_epoch * cfg.epochs
    history = TrainHistory()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            masks = make_dropout_masks(model, xb.shape,
                                       int(rng.integers(0, 2 ** 31)))
            try:
                loss, grads = loss_and_grads(model, xb, yb, dropout_masks=masks,
                                             update_running=True)
            except FloatingPointError as exc:
                raise FloatingPointError(f"divergence at epoch {epoch}: {exc}") from exc
            lr = onecycle_lr(step, total_steps, cfg.max_lr, cfg.pct_start,
                             cfg.lr_div, cfg.lr_final_div)
            adamw_step(model.params, grads, state, lr, cfg.weight_decay,
                       cfg.beta1, cfg.beta2, cfg.adam_eps)
            history.lr_log.append(lr)
            epoch_loss += loss * len(idx)
            step += 1
        # epoch-end metrics in eval mode
        probs = predict_proba(model, x)
        preds = (probs >= 0.5).astype(int)
        history.train_loss.append(epoch_loss / n)
        history.train_accuracy.append(float(np.mean(preds == y)))
        if x_val is not None and y_val is not None:
            val_probs = predict_proba(model, x_val)
            val_p = np.clip(np.where(y_val == 1, val_probs, 1 - val_probs),
                            1e-12, None)
            history.val_loss.append(float(-np.mean(np.log(val_p))))
            history.val_accuracy.append(
                float(np.mean((val_probs >= 0.5).astype(int) == y_val)))
    return model, history


# --- image preparation and serialization -----------------------------------

def prepare_mel_image(mel_db: np.ndarray, target_width: int = 64,
                      freq_pool: int = 1) -> np.ndarray:
    """Per-image standardization then zero-pad/trim the time axis so the
    width divides evenly under repeated 2x2 pooling. freq_pool > 1 averages
    that many adjacent frequency rows first (a cheaper input resolution)."""
    m = np.asarray(mel_db, dtype=np.float64)
    if freq_pool > 1:
        if m.shape[0] % freq_pool:
            raise ValueError(f"{m.shape[0]} rows not divisible by freq_pool "
                             f"{freq_pool}")
        m = m.reshape(m.shape[0] // freq_pool, freq_pool, -1).mean(axis=1)
    std = m.std()
    m = (m - m.mean()) / (std if std > 0 else 1.0)
    rows, cols = m.shape
    out = np.zeros((rows, target_width))
    w = min(cols, target_width)
    out[:, :w] = m[:, :w]
    return out


def _encode_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape),
            "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()}


def _decode_array(d: dict) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(d["data"]), dtype="<f8")
    return a.reshape(d["shape"]).copy()


def model_to_dict(model: CnnModel) -> dict:
    cfg = model.config
    return {"kind": "cnn", "in_channels": model.in_channels,
            "freq_pool": model.freq_pool, "input_width": model.input_width,
            "config": {"channels": list(cfg.channels), "kernel": cfg.kernel,
                       "dropout": cfg.dropout, "batch_size": cfg.batch_size,
                       "max_lr": cfg.max_lr, "epochs": cfg.epochs,
                       "weight_decay": cfg.weight_decay},
            "params": {k: _encode_array(v) for k, v in model.params.items()},
            "running": {k: _encode_array(v) for k, v in model.running.items()}}


def model_from_dict(d: dict) -> CnnModel:
    c = d["config"]
    cfg = CnnConfig(channels=tuple(c["channels"]), kernel=c["kernel"],
                    dropout=c["dropout"], batch_size=c["batch_size"],
                    max_lr=c["max_lr"], epochs=c["epochs"],
                    weight_decay=c["weight_decay"])
    return CnnModel(config=cfg,
                    params={k: _decode_array(v) for k, v in d["params"].items()},
                    running={k: _decode_array(v) for k, v in d["running"].items()},
                    in_channels=d["in_channels"],
                    freq_pool=d.get("freq_pool", 1),
                    input_width=d.get("input_width", 64))
