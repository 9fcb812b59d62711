"""The 5-class gesture CNN: forward, backprop, Adam, training loop, serialization.

Everything runs on plain numpy in NHWC layout. Reductions accumulate in double
precision; an immutable trained model is safe to share across inference threads.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import GESTURES

N_CLASSES = len(GESTURES)
INPUT_HW = (40, 44)
CHANNELS = (8, 16, 32, 32)
DENSE_WIDTH = 64
CONV_DROPOUT = 0.25
DENSE_DROPOUT = 0.5
MODEL_FORMAT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    pass


class NonFiniteUpdate(ArithmeticError):
    pass


class VersionMismatch(ValueError):
    pass


@dataclass
class GesturePrediction:
    probs: np.ndarray
    argmax_class: str
    max_prob: float


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    early_stop_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _default_arch() -> dict:
    return {
        "input_hw": list(INPUT_HW),
        "channels": list(CHANNELS),
        "kernel": 3,
        "pool": 2,
        "dense": [DENSE_WIDTH, N_CLASSES],
        "conv_dropout": CONV_DROPOUT,
        "dense_dropout": DENSE_DROPOUT,
        "flatten_order": "hwc",
        "classes": list(GESTURES),
    }


def _expected_shapes(arch: dict) -> dict:
    h, w = arch["input_hw"]
    shapes = {}
    c_in = 1
    for i, c_out in enumerate(arch["channels"], start=1):
        k = arch["kernel"]
        shapes[f"conv{i}_w"] = (c_out, c_in, k, k)
        shapes[f"conv{i}_b"] = (c_out,)
        h, w = h // arch["pool"], w // arch["pool"]
        c_in = c_out
    flat = h * w * c_in
    d1, d2 = arch["dense"]
    shapes["dense1_w"] = (d1, flat)
    shapes["dense1_b"] = (d1,)
    shapes["dense2_w"] = (d2, d1)
    shapes["dense2_b"] = (d2,)
    return shapes


@dataclass
class CnnModel:
    params: dict
    arch: dict = field(default_factory=_default_arch)
    rng_seed: int = 0

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def new_model(seed: int = 0) -> CnnModel:
    """He-uniform initialized model (ReLU-appropriate); biases start at zero.

    The softmax layer starts at zero instead: He init there saturates the
    logits (|z| > 10) through the pooled activation growth and costs hundreds
    of warmup steps; zero logits start the loss at ln(5) exactly.
    """
    rng = np.random.default_rng(seed)
    arch = _default_arch()
    params = {}
    for name, shape in _expected_shapes(arch).items():
        if name.endswith("_b") or name == "dense2_w":
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape)
    return CnnModel(params=params, arch=arch, rng_seed=seed)


# ---------------------------------------------------------------------------
# layer primitives

def _conv_kernel_view(w_spec: np.ndarray) -> np.ndarray:
    """(out, in, 3, 3) parameter layout -> (9*in, out) gemm layout."""
    c_out, c_in = w_spec.shape[:2]
    return np.ascontiguousarray(w_spec.transpose(2, 3, 1, 0)).reshape(9 * c_in, c_out)


def _im2col(x: np.ndarray):
    """(B, H, W, C) -> (B*H*W, 9*C) of 3x3 same-padded patches, one copy."""
    batch, h, width, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    sb, sh, sw, sc = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(batch, h, width, 3, 3, c),
        strides=(sb, sh, sw, sh, sw, sc), writeable=False,
    )
    return np.ascontiguousarray(view).reshape(batch * h * width, 9 * c)


def _conv_same(col: np.ndarray, w_flat: np.ndarray, b: np.ndarray, out_shape):
    return (col @ w_flat + b).reshape(out_shape)


def _conv_same_backward(col, w_flat, x_shape, dout):
    batch, h, width, c_in = x_shape
    dflat = dout.reshape(-1, dout.shape[3])
    dw_flat = col.T @ dflat
    db = dflat.sum(axis=0)
    dcol = (dflat @ w_flat.T).reshape(batch, h, width, 3, 3, c_in)
    dxp = np.zeros((batch, h + 2, width + 2, c_in), dtype=dout.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[:, di:di + h, dj:dj + width, :] += dcol[:, :, :, di, dj, :]
    return dxp[:, 1:1 + h, 1:1 + width, :], dw_flat, db


def _pool_slices(x: np.ndarray):
    h2, w2 = x.shape[1] // 2, x.shape[2] // 2
    return (
        x[:, 0:h2 * 2:2, 0:w2 * 2:2, :], x[:, 0:h2 * 2:2, 1:w2 * 2:2, :],
        x[:, 1:h2 * 2:2, 0:w2 * 2:2, :], x[:, 1:h2 * 2:2, 1:w2 * 2:2, :],
    )


def _maxpool(x: np.ndarray):
    """2x2 stride-2 max pool, odd trailing rows/cols dropped (floor)."""
    s = _pool_slices(x)
    out = np.maximum(np.maximum(s[0], s[1]), np.maximum(s[2], s[3]))
    return out


def _maxpool_backward(x, out, dout):
    """Routes each cell's gradient to the first maximum in row-major order."""
    dx = np.zeros_like(x)
    taken = np.zeros(out.shape, dtype=bool)
    h2, w2 = out.shape[1], out.shape[2]
    views = (
        dx[:, 0:h2 * 2:2, 0:w2 * 2:2, :], dx[:, 0:h2 * 2:2, 1:w2 * 2:2, :],
        dx[:, 1:h2 * 2:2, 0:w2 * 2:2, :], dx[:, 1:h2 * 2:2, 1:w2 * 2:2, :],
    )
    for src, dst in zip(_pool_slices(x), views):
        hit = (src == out) & ~taken
        dst += dout * hit
        taken |= hit
    return dx


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# forward / backward over the whole network

def _forward_batch(model: CnnModel, xs: np.ndarray, train_rng=None, want_cache=False):
    """xs: (B, 40, 44). Returns (probs, cache). Dropout only when train_rng given."""
    if xs.ndim != 3 or xs.shape[1:] != tuple(model.arch["input_hw"]):
        raise ShapeMismatch(f"expected (B, 40, 44) input, got {xs.shape}")
    dtype = next(iter(model.params.values())).dtype
    a = np.asarray(xs, dtype=dtype)[..., None]
    cache = {"conv": []} if want_cache else None

    for i in range(1, len(model.arch["channels"]) + 1):
        w_flat = _conv_kernel_view(model.params[f"conv{i}_w"])
        col = _im2col(a)
        out_shape = a.shape[:3] + (w_flat.shape[1],)
        z = _conv_same(col, w_flat, model.params[f"conv{i}_b"], out_shape)
        relu_mask = z > 0
        r = z * relu_mask
        p = _maxpool(r)
        if train_rng is not None:
            keep = train_rng.random(p.shape) >= CONV_DROPOUT
            drop = (keep / (1.0 - CONV_DROPOUT)).astype(dtype)
        else:
            drop = None
        out = p * drop if drop is not None else p
        if want_cache:
            cache["conv"].append(
                {"col": col, "w_flat": w_flat, "x_shape": a.shape,
                 "relu_mask": relu_mask, "r": r, "pooled": p, "drop": drop}
            )
        a = out

    flat = a.reshape(a.shape[0], -1)
    h = flat @ model.params["dense1_w"].T + model.params["dense1_b"]
    h_mask = h > 0
    hr = h * h_mask
    if train_rng is not None:
        keep = train_rng.random(hr.shape) >= DENSE_DROPOUT
        d_drop = (keep / (1.0 - DENSE_DROPOUT)).astype(dtype)
        hd = hr * d_drop
    else:
        d_drop = None
        hd = hr
    logits = hd @ model.params["dense2_w"].T + model.params["dense2_b"]
    probs = _softmax(logits)

    if want_cache:
        cache.update(
            {"flat": flat, "h_mask": h_mask, "hd": hd, "d_drop": d_drop,
             "logits": logits, "probs": probs, "a_shape": a.shape}
        )
    return probs, cache


def forward(model: CnnModel, frame_values: np.ndarray, mode: str = "infer",
            rng=None) -> GesturePrediction:
    """Classify one 40x44 matrix. Dropout is active only in train mode."""
    values = np.asarray(frame_values, dtype=np.float64)
    if values.shape != tuple(model.arch["input_hw"]):
        raise ShapeMismatch(f"expected {tuple(model.arch['input_hw'])}, got {values.shape}")
    train_rng = rng if mode == "train" else None
    probs, _ = _forward_batch(model, values[None], train_rng=train_rng)
    p = probs[0]
    idx = int(p.argmax())
    return GesturePrediction(probs=p, argmax_class=GESTURES[idx], max_prob=float(p[idx]))


def predict_batch(model: CnnModel, xs: np.ndarray, chunk: int = 64) -> np.ndarray:
    """(N, 40, 44) -> (N, 5) probabilities, inference mode."""
    outs = []
    for start in range(0, len(xs), chunk):
        probs, _ = _forward_batch(model, xs[start:start + chunk])
        outs.append(probs)
    return np.concatenate(outs) if outs else np.zeros((0, N_CLASSES))


def cast_model(model: CnnModel, dtype) -> CnnModel:
    """Same architecture with parameters in the given dtype (float32 speeds up
    bulk inference; stored models stay float64)."""
    return CnnModel(
        params={k: p.astype(dtype) for k, p in model.params.items()},
        arch=model.arch, rng_seed=model.rng_seed,
    )


def loss_and_gradients(model: CnnModel, xs: np.ndarray, ys_onehot: np.ndarray,
                       rng=None):
    """Mean categorical cross-entropy and gradients for every parameter.

    Dropout masks come from rng; pass rng=None to disable dropout (used by the
    finite-difference checks).
    """
    loss, grads, _ = _loss_grads_probs(model, xs, ys_onehot, rng)
    return loss, grads


def _loss_grads_probs(model: CnnModel, xs: np.ndarray, ys_onehot: np.ndarray,
                      rng=None):
    if len(xs) == 0:
        raise EmptyBatch("batch must be non-empty")
    ys_onehot = np.asarray(ys_onehot, dtype=np.float64)
    if ys_onehot.shape != (len(xs), N_CLASSES):
        raise ShapeMismatch(f"labels must be ({len(xs)}, {N_CLASSES}) one-hot")

    probs, cache = _forward_batch(model, xs, train_rng=rng, want_cache=True)
    batch = len(xs)
    # loss reduction always in double precision, whatever the compute dtype
    logits64 = cache["logits"].astype(np.float64)
    shifted = logits64 - logits64.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-(ys_onehot * log_probs).sum() / batch)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    grads = {}
    dlogits = (probs - ys_onehot.astype(probs.dtype)) / batch
    dlogits = dlogits.astype(probs.dtype)
    grads["dense2_w"] = dlogits.T @ cache["hd"]
    grads["dense2_b"] = dlogits.sum(axis=0)
    dhd = dlogits @ model.params["dense2_w"]
    if cache["d_drop"] is not None:
        dhd = dhd * cache["d_drop"]
    dh = dhd * cache["h_mask"]
    grads["dense1_w"] = dh.T @ cache["flat"]
    grads["dense1_b"] = dh.sum(axis=0)
    da = (dh @ model.params["dense1_w"]).reshape(cache["a_shape"])

    for i in range(len(model.arch["channels"]), 0, -1):
        layer = cache["conv"][i - 1]
        if layer["drop"] is not None:
            da = da * layer["drop"]
        dr = _maxpool_backward(layer["r"], layer["pooled"], da)
        dz = dr * layer["relu_mask"]
        da, dw_flat, db = _conv_same_backward(layer["col"], layer["w_flat"],
                                              layer["x_shape"], dz)
        c_in, c_out = layer["x_shape"][3], dz.shape[3]
        # gemm layout (9*in, out) back to the (out, in, 3, 3) parameter layout
        grads[f"conv{i}_w"] = dw_flat.reshape(3, 3, c_in, c_out).transpose(3, 2, 0, 1)
        grads[f"conv{i}_b"] = db

    return loss, grads, probs


# ---------------------------------------------------------------------------
# optimizer and training loop

@dataclass
class AdamState:
    m: dict
    v: dict

    @staticmethod
    def zeros_like(model: CnnModel) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p) for k, p in model.params.items()},
            v={k: np.zeros_like(p) for k, p in model.params.items()},
        )


def adam_step(model: CnnModel, grads: dict, state: AdamState, cfg: TrainConfig,
              t: int) -> None:
    """Standard Adam with bias correction, updating parameters in place."""
    if t < 1:
        raise ValueError("step index t must be >= 1")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, p in model.params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** t)
        v_hat = state.v[name] / (1 - b2 ** t)
        update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        if not np.all(np.isfinite(update)):
            raise NonFiniteUpdate(f"non-finite Adam update for {name}")
        p -= update


def _onehot(labels: np.ndarray) -> np.ndarray:
    out = np.zeros((len(labels), N_CLASSES))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def evaluate_windows(model: CnnModel, xs: np.ndarray, ys: np.ndarray):
    """Window-level cross-entropy loss and accuracy, dropout off."""
    probs = predict_batch(model, xs)
    eps = 1e-12
    loss = float(-np.log(np.maximum(probs[np.arange(len(ys)), ys], eps)).mean())
    acc = float((probs.argmax(axis=1) == ys).mean())
    return loss, acc


def train(model: CnnModel, train_xs, train_ys, val_xs, val_ys,
          cfg: TrainConfig, compute_dtype=np.float32):
    """Mini-batch Adam training with early stopping on validation loss.

    Returns (model, history); the model carries the best-validation parameters.
    History rows: {epoch, train_loss, val_loss, train_acc, val_acc}.
    Batches run in float32 by default (CPU budget); the loss reduction and the
    stored parameters stay double precision.
    """
    if len(train_xs) == 0 or len(val_xs) == 0:
        raise EmptyBatch("train and validation sets must be non-empty")
    if cfg.max_epochs == 0:
        return model, []
    train_xs = np.asarray(train_xs, dtype=compute_dtype)
    val_xs = np.asarray(val_xs, dtype=compute_dtype)
    train_ys = np.asarray(train_ys, dtype=np.int64)
    val_ys = np.asarray(val_ys, dtype=np.int64)

    work = CnnModel(
        params={k: p.astype(compute_dtype) for k, p in model.params.items()},
        arch=model.arch, rng_seed=model.rng_seed,
    )
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(work)
    history = []
    best_val = np.inf
    best_params = {k: p.copy() for k, p in work.params.items()}
    since_best = 0
    t = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_xs))
        epoch_loss = 0.0
        epoch_hits = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = train_xs[idx], train_ys[idx]
            loss, grads, probs = _loss_grads_probs(work, xb, _onehot(yb), rng=rng)
            t += 1
            adam_step(work, grads, state, cfg, t)
            epoch_loss += loss * len(idx)
            epoch_hits += int((probs.argmax(axis=1) == yb).sum())

        val_loss, val_acc = evaluate_windows(work, val_xs, val_ys)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / len(train_xs),
            "val_loss": val_loss,
            "train_acc": epoch_hits / len(train_xs),
            "val_acc": val_acc,
        })

        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: p.copy() for k, p in work.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break

    model.params = {k: p.astype(np.float64) for k, p in best_params.items()}
    return model, history


def history_to_csv(history, path) -> None:
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_loss,train_acc,val_acc\n")
        for row in history:
            f.write(
                f"{row['epoch']},{row['train_loss']:.6f},{row['val_loss']:.6f},"
                f"{row['train_acc']:.6f},{row['val_acc']:.6f}\n"
            )


# ---------------------------------------------------------------------------
# serialization

def save_model(model: CnnModel, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "arch_meta": model.arch,
        "rng_seed": model.rng_seed,
        "parameters": {k: p.tolist() for k, p in model.params.items()},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_model(path) -> CnnModel:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise VersionMismatch(
            f"model format {doc.get('format_version')}, expected {MODEL_FORMAT_VERSION}"
        )
    arch = doc["arch_meta"]
    expected = _expected_shapes(arch)
    params = {}
    for name, shape in expected.items():
        if name not in doc["parameters"]:
            raise ShapeMismatch(f"missing parameter {name}")
        arr = np.asarray(doc["parameters"][name], dtype=np.float64)
        if arr.shape != shape:
            raise ShapeMismatch(f"{name}: stored {arr.shape}, expected {shape}")
        params[name] = arr
    return CnnModel(params=params, arch=arch, rng_seed=doc.get("rng_seed", 0))


def clone_model(model: CnnModel) -> CnnModel:
    return CnnModel(
        params={k: p.copy() for k, p in model.params.items()},
        arch=copy.deepcopy(model.arch),
        rng_seed=model.rng_seed,
    )
