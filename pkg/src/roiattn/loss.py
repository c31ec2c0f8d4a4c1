"""Binary cross-entropy, anchor-excluding repulsive loss, and their sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    lambda_rep: float = 1.0
    eps: float = 1e-7

    def validate(self) -> None:
        if self.lambda_rep < 0:
            raise ValueError("lambda_rep >= 0 required")
        if not 0.0 < self.eps <= 1e-3:
            raise ValueError("eps must lie in (0, 1e-3]")


def bce(y_hat, y, eps: float = 1e-7):
    """Elementwise -[y log p + (1 - y) log(1 - p)] with p clamped to [eps, 1 - eps]."""
    p = np.clip(y_hat, eps, 1.0 - eps)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def bce_grad(y_hat, y, eps: float = 1e-7):
    y_hat = np.asarray(y_hat, dtype=np.float64)
    p = np.clip(y_hat, eps, 1.0 - eps)
    inside = (y_hat >= eps) & (y_hat <= 1.0 - eps)
    return np.where(inside, -y / p + (1.0 - y) / (1.0 - p), 0.0)


def repulsive_loss(XL: np.ndarray, anchor_index: int = 0, eps: float = 1e-7, grad: bool = False):
    """Mean over the batch of squared off-diagonal cosine similarities.

    Rows other than ``anchor_index`` are unit-normalized (norms clamped at
    eps); the sum runs over ordered pairs i != j and is divided by K(K - 1).
    With ``grad=True`` returns ``(loss, dXL)``; the anchor row of dXL is zero.
    """
    XL = np.asarray(XL, dtype=np.float64)
    single = XL.ndim == 2
    if single:
        XL = XL[None]
    B, k, _ = XL.shape
    if k < 3:
        raise ValueError("need >=2 non-anchor RoIs")
    keep = np.arange(k) != anchor_index
    E = XL[:, keep]
    K = k - 1
    norms = np.linalg.norm(E, axis=-1, keepdims=True)
    clamped = norms < eps
    n = np.maximum(norms, eps)
    e = E / n
    cos = e @ e.swapaxes(-1, -2)
    off = 1.0 - np.eye(K)
    scale = 1.0 / (B * K * (K - 1))
    loss = float((cos * cos * off).sum() * scale)
    if not grad:
        return loss
    dcos = 2.0 * scale * cos * off
    de = 2.0 * dcos @ e  # dcos is symmetric
    radial = (de * e).sum(-1, keepdims=True)
    dE = np.where(clamped, de / n, (de - e * radial) / n)
    dXL = np.zeros_like(XL)
    dXL[:, keep] = dE
    return loss, (dXL[0] if single else dXL)


def total_loss(y_hat, y, XL, cfg: LossConfig):
    """Batch-mean BCE plus ``lambda_rep`` times the repulsive term.

    Returns ``(loss, d_y_hat, d_XL)``. With ``lambda_rep == 0`` the repulsive
    term is skipped entirely and ``d_XL`` is None.
    """
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    B = y_hat.shape[0]
    loss = bce(y_hat, y, cfg.eps).sum() / B
    d_y_hat = bce_grad(y_hat, y, cfg.eps) / B
    d_XL = None
    if cfg.lambda_rep:
        rep, d_rep = repulsive_loss(XL, 0, cfg.eps, grad=True)
        loss = loss + cfg.lambda_rep * rep
        d_XL = cfg.lambda_rep * d_rep
    return float(loss), d_y_hat, d_XL
