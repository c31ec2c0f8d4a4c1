"""RoI attention head: 2D rotary self-attention over RoI embeddings, readout, MLP.

Everything is batched over a leading axis B. Shapes used below:
``Z`` (B, k, a) input embeddings, ``C`` (B, k, 2) box centers, ``X`` (B, k, d).
Gradients are derived by hand for exactly this architecture.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .rng import SplitMix64

Params = dict[str, np.ndarray]

READOUTS = ("anchor", "meanpool", "maxpool")
LN_EPS = 1e-5
CHECKPOINT_FORMAT = "roiattn-checkpoint"
CHECKPOINT_VERSION = 1
_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class ModelConfig:
    a: int = 32
    d: int = 64
    H: int = 4
    L: int = 2
    mlp_ratio: int = 4
    rope_base: float = 10000.0
    rope_scale: float = 100.0
    readout: str = "anchor"
    use_rope: bool = True
    # False feeds raw embeddings straight in (requires a == d)
    project_input: bool = True

    @property
    def head_dim(self) -> int:
        return self.d // self.H

    def validate(self) -> None:
        if self.a < 1 or self.d < 1 or self.H < 1:
            raise ValueError("a, d and H must be positive")
        # head layout only matters when attention blocks exist
        if self.L > 0 and self.d % self.H:
            raise ValueError(f"d={self.d} must be divisible by H={self.H}")
        if self.L > 0 and self.head_dim % 4:
            raise ValueError(f"head dim {self.head_dim} must be divisible by 4")
        if self.d % 2:
            raise ValueError("d must be even for the d -> d/2 classifier")
        # L=0 is the no-context pooling baseline
        if self.L < 0:
            raise ValueError("L >= 0 required")
        if self.mlp_ratio < 1:
            raise ValueError("mlp_ratio >= 1 required")
        if not self.project_input and self.a != self.d:
            raise ValueError(f"project_input=False requires a == d (a={self.a}, d={self.d})")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}, got {self.readout!r}")


@dataclass
class ForwardTrace:
    Z: np.ndarray
    cos: np.ndarray | None
    sin: np.ndarray | None
    X0: np.ndarray
    blocks: list[dict] = field(default_factory=list)
    lnf: dict = field(default_factory=dict)
    XL: np.ndarray | None = None
    readout: np.ndarray | None = None
    argmax: np.ndarray | None = None
    head_u: np.ndarray | None = None
    head_g: np.ndarray | None = None
    logit: np.ndarray | None = None
    y_hat: np.ndarray | None = None

    def attention_probs(self) -> list[np.ndarray]:
        return [b["attn"]["P"] for b in self.blocks]


# ---------------------------------------------------------------- parameters


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, hidden = cfg.d, cfg.mlp_ratio * cfg.d
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.project_input:
        shapes.update({"in.W": (cfg.a, d), "in.b": (d,)})
    for l in range(cfg.L):
        p = f"blocks.{l}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.Wq": (d, d), p + "attn.Wk": (d, d),
            p + "attn.Wv": (d, d), p + "attn.Wo": (d, d),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "ffn.W1": (d, hidden), p + "ffn.b1": (hidden,),
            p + "ffn.W2": (hidden, d), p + "ffn.b2": (d,),
        })
    shapes.update({
        "lnf.g": (d,), "lnf.b": (d,),
        "head.W1": (d, d // 2), "head.b1": (d // 2,),
        "head.W2": (d // 2, 1), "head.b2": (1,),
    })
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> Params:
    """Fan-in scaled uniform weights, zero biases, unit LN gains, zero final layer."""
    cfg.validate()
    root = SplitMix64(seed).child("init")
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif leaf.startswith("W") and name != "head.W2":
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = root.child(name).uniform(int(np.prod(shape)), -bound, bound).reshape(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def check_params(params: Params, cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"parameter names do not match config (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: shape {params[name].shape} != {shape}")
        if not np.all(np.isfinite(params[name])):
            raise ValueError(f"{name}: non-finite values")


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: Params, meta: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "meta": meta or {},
        "params": {
            name: {"shape": list(params[name].shape), "data": params[name].ravel().tolist()}
            for name in param_shapes(cfg)
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, Params, dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
    cfg = ModelConfig(**payload["config"])
    cfg.validate()
    params = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["params"].items()
    }
    check_params(params, cfg)
    return cfg, params, payload.get("meta", {})


# ---------------------------------------------------------------- primitives


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return g * xhat + b, (xhat, rstd)


def _layer_norm_back(dy, g, cache):
    xhat, rstd = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxhat = dy * g
    dx = rstd * (
        dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dt = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt)


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def rope_angles(centers: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Rotation angle per coordinate pair, shape centers.shape[:-1] + (head_dim / 2,).

    Pairs 0 .. dh/4-1 take the x coordinate, the remaining pairs take y; pair
    t of each half turns by ``coord * rope_scale * rope_base**(-4t/dh)``.
    """
    dh = cfg.head_dim
    freqs = cfg.rope_scale * cfg.rope_base ** (-4.0 * np.arange(dh // 4) / dh)
    cx = centers[..., 0:1] * freqs
    cy = centers[..., 1:2] * freqs
    return np.concatenate([cx, cy], axis=-1)


def _rotate(x, cos, sin):
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope_rotate(vec: np.ndarray, center, cfg: ModelConfig) -> np.ndarray:
    """Rotate one head-dim vector by the angles of a single box center."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape[-1] != cfg.head_dim:
        raise ValueError(f"vector length {vec.shape[-1]} != head dim {cfg.head_dim}")
    ang = rope_angles(np.asarray(center, dtype=np.float64), cfg)
    return _rotate(vec, np.cos(ang), np.sin(ang))


# ---------------------------------------------------------------- forward


def _split_heads(x, H):
    B, k, d = x.shape
    return x.reshape(B, k, H, d // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, k, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, k, H * dh)


def _rope_tables(C, cfg):
    if not cfg.use_rope:
        return None, None
    ang = rope_angles(C, cfg)[:, None]  # broadcast over heads
    return np.cos(ang), np.sin(ang)


def _attention(X, cos, sin, params, prefix, cfg):
    h, ln_cache = _layer_norm(X, params[prefix + "ln1.g"], params[prefix + "ln1.b"])
    q = _split_heads(h @ params[prefix + "attn.Wq"], cfg.H)
    k = _split_heads(h @ params[prefix + "attn.Wk"], cfg.H)
    v = _split_heads(h @ params[prefix + "attn.Wv"], cfg.H)
    if cos is not None:
        q, k = _rotate(q, cos, sin), _rotate(k, cos, sin)
    S = q @ k.swapaxes(-1, -2) / np.sqrt(cfg.head_dim)
    S = S - S.max(-1, keepdims=True)
    P = np.exp(S)
    P /= P.sum(-1, keepdims=True)
    O = _merge_heads(P @ v)
    out = X + O @ params[prefix + "attn.Wo"]
    cache = {"ln": ln_cache, "h": h, "q": q, "k": k, "v": v, "P": P, "O": O}
    return out, cache


def attention_forward(X, centers, params: Params, cfg: ModelConfig, layer: int = 0):
    """Pre-norm RoPE self-attention sublayer with residual: ``X + Wo(attn(LN(X)))``.

    Accepts a single sequence (k, d) or a batch (B, k, d).
    """
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input to attention")
    single = X.ndim == 2
    if single:
        X, centers = X[None], np.asarray(centers)[None]
    cos, sin = _rope_tables(np.asarray(centers, dtype=np.float64), cfg)
    out, cache = _attention(X, cos, sin, params, f"blocks.{layer}.", cfg)
    return (out[0] if single else out), cache


def _ffn(X, params, prefix):
    h, ln_cache = _layer_norm(X, params[prefix + "ln2.g"], params[prefix + "ln2.b"])
    u = h @ params[prefix + "ffn.W1"] + params[prefix + "ffn.b1"]
    g, t = _gelu(u)
    out = X + g @ params[prefix + "ffn.W2"] + params[prefix + "ffn.b2"]
    return out, {"ln": ln_cache, "h": h, "u": u, "g": g, "t": t}


def forward_batch(Z: np.ndarray, C: np.ndarray, params: Params, cfg: ModelConfig):
    """Returns (y_hat (B,), X_L (B, k, d), trace)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 3 or Z.shape[-1] != cfg.a:
        raise ValueError(f"embedding dimension mismatch: got {Z.shape[-1]}, model expects {cfg.a}")
    if not np.all(np.isfinite(Z)):
        raise ValueError("non-finite input embeddings")
    cos, sin = _rope_tables(np.asarray(C, dtype=np.float64), cfg)
    X = Z @ params["in.W"] + params["in.b"] if cfg.project_input else Z
    trace = ForwardTrace(Z=Z, cos=cos, sin=sin, X0=X)
    for l in range(cfg.L):
        prefix = f"blocks.{l}."
        X, attn_cache = _attention(X, cos, sin, params, prefix, cfg)
        X, ffn_cache = _ffn(X, params, prefix)
        trace.blocks.append({"attn": attn_cache, "ffn": ffn_cache})
    XL, ln_cache = _layer_norm(X, params["lnf.g"], params["lnf.b"])
    trace.lnf = {"ln": ln_cache}
    trace.XL = XL

    if cfg.readout == "anchor":
        r = XL[:, 0]
    elif cfg.readout == "meanpool":
        r = XL.mean(1)
    else:
        trace.argmax = XL.argmax(1)
        r = XL.max(1)
    trace.readout = r
    u = r @ params["head.W1"] + params["head.b1"]
    g, t = _gelu(u)
    logit = (g @ params["head.W2"])[:, 0] + params["head.b2"][0]
    if not np.all(np.isfinite(logit)):
        raise FloatingPointError("non-finite activation in forward pass")
    trace.head_u, trace.head_g, trace.logit = u, (g, t), logit
    trace.y_hat = sigmoid(logit)
    return trace.y_hat, XL, trace


def model_forward(record, params: Params, cfg: ModelConfig):
    """Single-record forward: returns (y_hat, X_L (k, d), trace)."""
    y_hat, XL, trace = forward_batch(record.embeddings()[None], record.centers()[None], params, cfg)
    return float(y_hat[0]), XL[0], trace


# ---------------------------------------------------------------- backward


def model_backward(trace: ForwardTrace, d_y_hat, d_XL, params: Params, cfg: ModelConfig) -> Params:
    """Reverse pass. ``d_y_hat`` is (B,), ``d_XL`` is (B, k, d) or None."""
    grads: Params = {}
    y = trace.y_hat
    d_logit = np.asarray(d_y_hat, dtype=np.float64) * y * (1.0 - y)

    g, t = trace.head_g
    grads["head.b2"] = np.array([d_logit.sum()])
    grads["head.W2"] = g.T @ d_logit[:, None]
    dg = d_logit[:, None] * params["head.W2"][:, 0]
    du = _gelu_back(dg, trace.head_u, t)
    grads["head.b1"] = du.sum(0)
    grads["head.W1"] = trace.readout.T @ du
    dr = du @ params["head.W1"].T

    XL = trace.XL
    dXL = np.zeros_like(XL) if d_XL is None else np.array(d_XL, dtype=np.float64)
    if cfg.readout == "anchor":
        dXL[:, 0] += dr
    elif cfg.readout == "meanpool":
        dXL += dr[:, None, :] / XL.shape[1]
    else:
        B, _, d = XL.shape
        bi, di = np.meshgrid(np.arange(B), np.arange(d), indexing="ij")
        dXL[bi, trace.argmax, di] += dr

    dX, grads["lnf.g"], grads["lnf.b"] = _layer_norm_back(dXL, params["lnf.g"], trace.lnf["ln"])

    for l in reversed(range(cfg.L)):
        prefix = f"blocks.{l}."
        dX = _ffn_back(dX, trace.blocks[l]["ffn"], params, prefix, grads)
        dX = _attention_back(dX, trace.blocks[l]["attn"], trace.cos, trace.sin, params, prefix, cfg, grads)

    if cfg.project_input:
        grads["in.W"] = np.einsum("bki,bkj->ij", trace.Z, dX)
        grads["in.b"] = dX.sum((0, 1))
    return grads


def _ffn_back(dX, cache, params, prefix, grads):
    grads[prefix + "ffn.b2"] = dX.sum((0, 1))
    grads[prefix + "ffn.W2"] = np.einsum("bki,bkj->ij", cache["g"], dX)
    dg = dX @ params[prefix + "ffn.W2"].T
    du = _gelu_back(dg, cache["u"], cache["t"])
    grads[prefix + "ffn.b1"] = du.sum((0, 1))
    grads[prefix + "ffn.W1"] = np.einsum("bki,bkj->ij", cache["h"], du)
    dh = du @ params[prefix + "ffn.W1"].T
    dx_ln, grads[prefix + "ln2.g"], grads[prefix + "ln2.b"] = _layer_norm_back(
        dh, params[prefix + "ln2.g"], cache["ln"]
    )
    return dX + dx_ln


def _attention_back(dX, cache, cos, sin, params, prefix, cfg, grads):
    grads[prefix + "attn.Wo"] = np.einsum("bki,bkj->ij", cache["O"], dX)
    dO = _split_heads(dX @ params[prefix + "attn.Wo"].T, cfg.H)
    P, q, k, v = cache["P"], cache["q"], cache["k"], cache["v"]
    dP = dO @ v.swapaxes(-1, -2)
    dv = P.swapaxes(-1, -2) @ dO
    dS = P * (dP - (dP * P).sum(-1, keepdims=True)) / np.sqrt(cfg.head_dim)
    dq = dS @ k
    dk = dS.swapaxes(-1, -2) @ q
    if cos is not None:
        # inverse rotation is rotation by the negated angle
        dq, dk = _rotate(dq, cos, -sin), _rotate(dk, cos, -sin)
    h = cache["h"]
    dh = np.zeros_like(h)
    for name, dpart in (("Wq", dq), ("Wk", dk), ("Wv", dv)):
        dpart = _merge_heads(dpart)
        grads[prefix + "attn." + name] = np.einsum("bki,bkj->ij", h, dpart)
        dh += dpart @ params[prefix + "attn." + name].T
    dx_ln, grads[prefix + "ln1.g"], grads[prefix + "ln1.b"] = _layer_norm_back(
        dh, params[prefix + "ln1.g"], cache["ln"]
    )
    return dX + dx_ln
