"""Adam training loop with early stopping, plus the finite-difference gradient check."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import ArrayDataset
from .loss import LossConfig, total_loss
from .metrics import MetricError, roc_auc
from .model import ModelConfig, Params, forward_batch, init_params, model_backward
from .rng import SplitMix64

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    lambda_rep: float = 1.0
    val_fraction: float = 0.2

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr > 0 required")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps > 0 required")
        if self.batch_size < 1:
            raise ValueError("batch_size >= 1 required")
        if self.epochs < 0 or self.patience < 1:
            raise ValueError("epochs >= 0 and patience >= 1 required")
        if self.lambda_rep < 0:
            raise ValueError("lambda_rep >= 0 required")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction in (0, 1) required")


@dataclass
class AdamState:
    t: int
    m: Params
    v: Params

    @classmethod
    def zeros(cls, params: Params) -> "AdamState":
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: Params, grads: Params, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns new (params, state)."""
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameters")
    t = state.t + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        new_p[name] = p - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(t, new_m, new_v)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_auc: float | None = None
    stopped_early: bool = False
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return {
            "train_loss": list(self.train_loss),
            "val_auc": list(self.val_auc),
            "best_epoch": self.best_epoch,
            "best_val_auc": self.best_val_auc,
            "stopped_early": self.stopped_early,
            "checkpoint": self.checkpoint,
        }


def stratified_split(labels: np.ndarray, val_fraction: float, seed: int):
    """Seeded per-class shuffle; returns sorted (train_idx, val_idx)."""
    root = SplitMix64(seed).child("split")
    train_idx, val_idx = [], []
    for c in (0, 1):
        idx = root.child(c).shuffle(np.flatnonzero(labels == c))
        n_val = int(round(val_fraction * len(idx)))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def predict(params: Params, cfg: ModelConfig, ds: ArrayDataset, batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(ds), batch_size):
        sl = slice(start, start + batch_size)
        y_hat, _, _ = forward_batch(ds.embeddings[sl], ds.centers[sl], params, cfg)
        out.append(y_hat)
    return np.concatenate(out) if out else np.zeros(0)


def train(ds: ArrayDataset, model_cfg: ModelConfig, cfg: TrainConfig, progress=None):
    """Fit on a stratified split of ``ds``; returns (best-validation params, report).

    ``progress`` is an optional callable receiving (epoch, train_loss, val_auc).
    """
    model_cfg.validate()
    cfg.validate()
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if ds.embeddings.shape[-1] != model_cfg.a:
        raise ValueError(
            f"embedding dimension mismatch: dataset has {ds.embeddings.shape[-1]}, model expects {model_cfg.a}"
        )
    train_idx, val_idx = stratified_split(ds.labels, cfg.val_fraction, cfg.seed)
    val = ds.subset(val_idx)
    if len(np.unique(val.labels)) < 2:
        raise MetricError("AUC undefined: validation split contains a single class")
    if len(train_idx) == 0:
        raise ValueError("empty training split")

    loss_cfg = LossConfig(lambda_rep=cfg.lambda_rep)
    params = init_params(model_cfg, cfg.seed)
    state = AdamState.zeros(params)
    best = params
    report = TrainReport()
    shuffler = SplitMix64(cfg.seed).child("epoch")
    wait = 0
    for epoch in range(cfg.epochs):
        order = shuffler.child(epoch).shuffle(train_idx)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            y_hat, XL, trace = forward_batch(ds.embeddings[idx], ds.centers[idx], params, model_cfg)
            loss, d_y_hat, d_XL = total_loss(y_hat, ds.labels[idx], XL, loss_cfg)
            grads = model_backward(trace, d_y_hat, d_XL, params, model_cfg)
            params, state = adam_step(params, grads, state, cfg)
            total += loss * len(idx)
        auc = roc_auc(predict(params, model_cfg, val), val.labels)
        report.train_loss.append(total / len(order))
        report.val_auc.append(auc)
        if progress is not None:
            progress(epoch, report.train_loss[-1], auc)
        log.debug("epoch %d loss %.5f val_auc %.4f", epoch, report.train_loss[-1], auc)
        if report.best_val_auc is None or auc > report.best_val_auc:
            best, report.best_epoch, report.best_val_auc = params, epoch, auc
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                report.stopped_early = True
                break
    return best, report


# ---------------------------------------------------------------- gradcheck


@dataclass
class GradcheckReport:
    seed: int
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "max_rel_error": self.max_rel_error,
            "worst_param": self.worst_param,
            "passed": self.passed,
            "per_param": dict(self.per_param),
        }


def gradcheck(model_cfg: ModelConfig, loss_cfg: LossConfig, seed: int, k: int = 4,
              h: float = 1e-5, fault: str | None = None) -> GradcheckReport:
    """Compare model_backward + total_loss gradients with central differences.

    Parameters are the seeded initialization plus N(0, 0.2^2) noise, so the
    zero-initialized classifier output layer does not mask upstream paths.
    Error per tensor is ||a - n|| / max(||a||, ||n||, 1e-8).
    """
    model_cfg.validate()
    rng = SplitMix64(seed).child("gradcheck")
    params = init_params(model_cfg, seed)
    for name in params:
        params[name] = params[name] + 0.2 * rng.child("noise", name).normal(params[name].size).reshape(params[name].shape)
    Z = rng.child("Z").normal(k * model_cfg.a).reshape(1, k, model_cfg.a)
    C = rng.child("C").uniform(2 * k).reshape(1, k, 2)
    y = np.array([float(rng.child("y").below(2))])

    def loss_at(p):
        y_hat, XL, _ = forward_batch(Z, C, p, model_cfg)
        return total_loss(y_hat, y, XL, loss_cfg)[0]

    y_hat, XL, trace = forward_batch(Z, C, params, model_cfg)
    _, d_y_hat, d_XL = total_loss(y_hat, y, XL, loss_cfg)
    analytic = model_backward(trace, d_y_hat, d_XL, params, model_cfg)
    if fault == "sign-flip":
        analytic = {name: -g for name, g in analytic.items()}
    elif fault is not None:
        raise ValueError(f"unknown fault {fault!r}")

    per_param = {}
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at(params)
            flat[i] = orig - h
            down = loss_at(params)
            flat[i] = orig
            nflat[i] = (up - down) / (2 * h)
        a = analytic[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-8)
        per_param[name] = float(np.linalg.norm(a - numeric) / denom)
    worst = max(per_param, key=per_param.get)
    return GradcheckReport(seed, per_param[worst], worst, per_param)
