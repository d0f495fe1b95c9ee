"""Trainable pair classifier over concatenated multimodal vectors.

Architecture: the two products' (text || image) rows form a 2-channel
input; a 1-D convolution mixes aligned features across the pair, then
layer normalization, ReLU, and an MLP head ending in softmax over
{not-match, match}. Forward, backward and AdamW are implemented directly
in numpy with float64 parameters; gradients are exact (verified against
central finite differences in the test suite).

Class index 0 is "not match", index 1 is "match", matching the integer
labels on samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .vectors import as_vector

LN_EPS = 1e-5
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class DeciderConfig:
    conv_filters: int = 16
    kernel_size: int = 3
    hidden_dims: tuple[int, ...] = (256, 64)
    dropout_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.conv_filters < 1:
            raise ValueError("conv_filters must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and positive")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 64
    max_epochs: int = 20
    scheduler: str = "plateau"  # "plateau" | "cosine"
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.plateau_factor < 1.0):
            raise ValueError("plateau_factor must be in [0, 1)")
        if self.scheduler not in ("plateau", "cosine"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        object.__setattr__(self, "betas", tuple(self.betas))


@dataclass(frozen=True)
class PairSample:
    """Two products' text+image vectors with a binary match label."""

    text_a: np.ndarray
    image_a: np.ndarray
    text_b: np.ndarray
    image_b: np.ndarray
    label: int  # 1 = match, 0 = not match

    def __post_init__(self):
        for name in ("text_a", "image_a", "text_b", "image_b"):
            object.__setattr__(self, name, as_vector(getattr(self, name)))
        dims = {v.shape[0] for v in (self.text_a, self.image_a, self.text_b, self.image_b)}
        if len(dims) != 1:
            raise ValueError(f"all four vectors must share one dimension, got {sorted(dims)}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class MatchDecision:
    """Scored verdict for a product pair (canonical id_a < id_b)."""

    id_a: str
    id_b: str
    probability: float  # probability of the match class
    is_match: bool
    retrieval_rank: int = 0
    retrieval_score: float = 0.0

    def __post_init__(self):
        if self.id_a and self.id_b and not (self.id_a < self.id_b):
            raise ValueError(f"ids must be canonically ordered: {self.id_a!r} !< {self.id_b!r}")

    @property
    def label(self) -> str:
        return "match" if self.is_match else "not_match"


class DeciderModel:
    """Parameter set of the pair classifier; see `init_model`."""

    def __init__(self, config: DeciderConfig, input_len: int, params: dict[str, np.ndarray]):
        self.config = config
        self.input_len = input_len
        self.params = params

    @property
    def flat_dim(self) -> int:
        return self.config.conv_filters * self.input_len

    def param_names(self) -> list[str]:
        return list(self.params)

    def copy(self) -> "DeciderModel":
        return DeciderModel(self.config, self.input_len, {k: v.copy() for k, v in self.params.items()})


def init_model(config: DeciderConfig, input_len: int = 256) -> DeciderModel:
    """He-initialized model for 2-channel inputs of length `input_len`."""
    rng = np.random.default_rng(config.seed)
    f, k = config.conv_filters, config.kernel_size
    params: dict[str, np.ndarray] = {
        "conv_w": rng.standard_normal((f, 2, k)) * np.sqrt(2.0 / (2 * k)),
        "conv_b": np.zeros(f),
        "ln_gamma": np.ones(f * input_len),
        "ln_beta": np.zeros(f * input_len),
    }
    dims = [f * input_len, *config.hidden_dims, 2]
    for i in range(len(dims) - 1):
        params[f"lin{i}_w"] = rng.standard_normal((dims[i], dims[i + 1])) * np.sqrt(2.0 / dims[i])
        params[f"lin{i}_b"] = np.zeros(dims[i + 1])
    return DeciderModel(config, input_len, params)


def assemble_input(sample: PairSample) -> np.ndarray:
    """Stack the pair into a (2, 2d) array: row per product, text then image."""
    return np.stack(
        [
            np.concatenate([sample.text_a, sample.image_a]),
            np.concatenate([sample.text_b, sample.image_b]),
        ]
    ).astype(np.float64)


def assemble_batch(text_a, image_a, text_b, image_b) -> np.ndarray:
    """Vectorized `assemble_input` over (n, d) modality arrays -> (n, 2, 2d)."""
    row_a = np.concatenate([text_a, image_a], axis=1)
    row_b = np.concatenate([text_b, image_b], axis=1)
    return np.stack([row_a, row_b], axis=1).astype(np.float64)


def _im2col(x: np.ndarray, ksize: int) -> np.ndarray:
    # (B, C, L) -> (B, L, C*K) windows with same-padding
    b, c, length = x.shape
    pad = (ksize - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    windows = np.stack([xp[:, :, t : t + length] for t in range(ksize)], axis=3)  # B,C,L,K
    return windows.transpose(0, 2, 1, 3).reshape(b, length, c * ksize)


def _forward_cache(model: DeciderModel, x: np.ndarray, training: bool, rng) -> tuple[np.ndarray, dict]:
    p = model.params
    cfg = model.config
    b, c, length = x.shape
    if c != 2 or length != model.input_len:
        raise ValueError(f"expected input shape (n, 2, {model.input_len}), got {x.shape}")
    if training and cfg.dropout_rate > 0.0 and rng is None:
        raise ValueError("training-mode forward with dropout requires an rng")

    cache: dict = {"x": x}
    cols = _im2col(x, cfg.kernel_size)
    cache["cols"] = cols
    conv = cols @ p["conv_w"].reshape(cfg.conv_filters, -1).T + p["conv_b"]  # B,L,F
    h = conv.transpose(0, 2, 1).reshape(b, -1)  # channel-major flatten

    mu = h.mean(axis=1, keepdims=True)
    var = ((h - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    x_hat = (h - mu) * inv_std
    ln_out = x_hat * p["ln_gamma"] + p["ln_beta"]
    act = np.maximum(ln_out, 0.0)
    cache.update(x_hat=x_hat, inv_std=inv_std, ln_out=ln_out, ln_act=act)

    n_linear = len(cfg.hidden_dims) + 1
    acts, zs, masks = [act], [], []
    for i in range(n_linear):
        z = acts[-1] @ p[f"lin{i}_w"] + p[f"lin{i}_b"]
        zs.append(z)
        if i < n_linear - 1:
            a = np.maximum(z, 0.0)
            if training and cfg.dropout_rate > 0.0:
                mask = (rng.random(a.shape) >= cfg.dropout_rate) / (1.0 - cfg.dropout_rate)
                a = a * mask
                masks.append(mask)
            else:
                masks.append(None)
            acts.append(a)
    cache.update(acts=acts, zs=zs, masks=masks)

    logits = zs[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    cache["probs"] = probs
    return probs, cache


def forward(model: DeciderModel, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
    """Probability pairs (n, 2); each row sums to 1. Dropout only when training."""
    probs, _ = _forward_cache(model, np.asarray(x, dtype=np.float64), training, rng)
    return probs


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean of -log p[label], with probabilities clamped to [1e-12, 1]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs labels {labels.shape}")
    picked = np.clip(probs[np.arange(len(labels)), labels], PROB_CLAMP, 1.0)
    return float(-np.log(picked).mean())


def backward(
    model: DeciderModel,
    x: np.ndarray,
    labels: np.ndarray,
    training: bool = False,
    rng=None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients of mean cross-entropy w.r.t. every parameter."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    probs, cache = _forward_cache(model, x, training, rng)
    loss = cross_entropy_loss(probs, labels)

    p = model.params
    cfg = model.config
    b = x.shape[0]
    grads: dict[str, np.ndarray] = {}

    onehot = np.zeros_like(probs)
    onehot[np.arange(b), labels] = 1.0
    dz = (probs - onehot) / b

    n_linear = len(cfg.hidden_dims) + 1
    for i in range(n_linear - 1, -1, -1):
        a_prev = cache["acts"][i]
        grads[f"lin{i}_w"] = a_prev.T @ dz
        grads[f"lin{i}_b"] = dz.sum(axis=0)
        da = dz @ p[f"lin{i}_w"].T
        if i > 0:
            mask = cache["masks"][i - 1]
            if mask is not None:
                da = da * mask
            dz = da * (cache["zs"][i - 1] > 0.0)
    d_act = da  # gradient w.r.t. ReLU(ln_out)

    d_ln_out = d_act * (cache["ln_out"] > 0.0)
    x_hat = cache["x_hat"]
    grads["ln_gamma"] = (d_ln_out * x_hat).sum(axis=0)
    grads["ln_beta"] = d_ln_out.sum(axis=0)
    d_xhat = d_ln_out * p["ln_gamma"]
    inv_std = cache["inv_std"]
    dh = inv_std * (
        d_xhat
        - d_xhat.mean(axis=1, keepdims=True)
        - x_hat * (d_xhat * x_hat).mean(axis=1, keepdims=True)
    )

    d_conv = dh.reshape(b, cfg.conv_filters, model.input_len).transpose(0, 2, 1)  # B,L,F
    cols = cache["cols"]
    grads["conv_w"] = (
        d_conv.reshape(-1, cfg.conv_filters).T @ cols.reshape(-1, cols.shape[2])
    ).reshape(p["conv_w"].shape)
    grads["conv_b"] = d_conv.sum(axis=(0, 1))

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient in {name}")
    return loss, grads


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adamw_state(model: DeciderModel) -> AdamWState:
    return AdamWState(
        m={k: np.zeros_like(v) for k, v in model.params.items()},
        v={k: np.zeros_like(v) for k, v in model.params.items()},
    )


def adamw_step(
    model: DeciderModel,
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    weight_decay: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, param in model.params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1**t)
        v_hat = state.v[name] / (1.0 - b2**t)
        update = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * param
        param -= lr * update
        if not np.all(np.isfinite(param)):
            raise RuntimeError(f"non-finite parameter after update: {name}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def train(
    model: DeciderModel,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
) -> list[EpochStats]:
    """Epoch loop with seeded shuffling; returns per-epoch history.

    The plateau scheduler multiplies the learning rate by `plateau_factor`
    after `plateau_patience` consecutive epochs without validation-loss
    improvement. Raises RuntimeError if the loss diverges to NaN.
    """
    x_train, y_train = train_data
    x_val, y_val = val_data
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("train and validation sets must be nonempty")
    x_train = np.asarray(x_train, dtype=np.float64)
    x_val = np.asarray(x_val, dtype=np.float64)
    y_train = np.asarray(y_train)
    y_val = np.asarray(y_val)

    rng = np.random.default_rng(cfg.seed)
    state = init_adamw_state(model)
    lr = cfg.learning_rate
    best_val = np.inf
    stale = 0
    history: list[EpochStats] = []

    for epoch in range(cfg.max_epochs):
        if cfg.scheduler == "cosine":
            lr = cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.max_epochs))
        perm = rng.permutation(len(x_train))
        batch_losses = []
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grads = backward(model, x_train[idx], y_train[idx], training=True, rng=rng)
            if not np.isfinite(loss):
                raise RuntimeError(f"training diverged at epoch {epoch}: loss={loss}")
            adamw_step(model, grads, state, lr, cfg.weight_decay, cfg.betas)
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))
        val_loss = _dataset_loss(model, x_val, y_val)
        if not np.isfinite(val_loss):
            raise RuntimeError(f"validation loss diverged at epoch {epoch}: {val_loss}")
        history.append(EpochStats(epoch, train_loss, val_loss, lr))

        if cfg.scheduler == "plateau":
            if val_loss < best_val:
                best_val = val_loss
                stale = 0
            else:
                stale += 1
                if stale >= cfg.plateau_patience:
                    lr *= cfg.plateau_factor
                    stale = 0
    return history


def _dataset_loss(model: DeciderModel, x: np.ndarray, y: np.ndarray, chunk: int = 4096) -> float:
    total = 0.0
    for start in range(0, len(x), chunk):
        xb = x[start : start + chunk]
        yb = y[start : start + chunk]
        total += cross_entropy_loss(forward(model, xb), yb) * len(xb)
    return total / len(x)


def predict(model: DeciderModel, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Match-class probability per sample, eval mode, chunked."""
    out = np.empty(len(x), dtype=np.float64)
    for start in range(0, len(x), chunk):
        out[start : start + chunk] = forward(model, x[start : start + chunk])[:, 1]
    return out


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    match: ClassMetrics
    not_match: ClassMetrics
    macro_f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    missing_classes: tuple[str, ...] = field(default=())

    @property
    def size(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _prf(tp: int, fp: int, fn: int) -> ClassMetrics:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassMetrics(precision, recall, f1)


def metrics_from_confusion(tp: int, fp: int, fn: int, tn: int) -> EvalReport:
    """Per-class precision/recall/F1 and macro F1 from raw confusion counts."""
    match = _prf(tp, fp, fn)
    not_match = _prf(tn, fn, fp)
    missing = []
    if tp + fn == 0:
        missing.append("match")
    if tn + fp == 0:
        missing.append("not_match")
    return EvalReport(
        match=match,
        not_match=not_match,
        macro_f1=(match.f1 + not_match.f1) / 2.0,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        missing_classes=tuple(missing),
    )


def evaluate(model: DeciderModel, x: np.ndarray, y: np.ndarray) -> EvalReport:
    """Confusion-matrix metrics at the argmax decision."""
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty set")
    y = np.asarray(y)
    probs = predict(model, np.asarray(x, dtype=np.float64))
    pred = (probs > 0.5).astype(np.int64)  # argmax of a 2-way softmax
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    return metrics_from_confusion(tp, fp, fn, tn)


def decide(
    model: DeciderModel,
    sample: PairSample,
    threshold: float = 0.5,
    id_a: str = "",
    id_b: str = "",
    retrieval_rank: int = 0,
    retrieval_score: float = 0.0,
) -> MatchDecision:
    """Score one pair; the label is `probability >= threshold`."""
    if not (0.0 < threshold <= 1.0):
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    prob = float(forward(model, assemble_input(sample)[None, :, :])[0, 1])
    if not np.isfinite(prob):
        raise RuntimeError("decider produced a non-finite probability")
    return MatchDecision(
        id_a=id_a,
        id_b=id_b,
        probability=prob,
        is_match=prob >= threshold,
        retrieval_rank=retrieval_rank,
        retrieval_score=retrieval_score,
    )


def swap_asymmetry(model: DeciderModel, x: np.ndarray) -> float:
    """Mean |p(A,B) - p(B,A)| over a batch; the architecture does not
    guarantee symmetry under swapping the two products, so it is measured
    rather than assumed."""
    p_fwd = predict(model, x)
    p_rev = predict(model, np.ascontiguousarray(x[:, ::-1, :]))
    return float(np.abs(p_fwd - p_rev).mean())


def history_to_csv(history: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss), repr(row.lr)])
