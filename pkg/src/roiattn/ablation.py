"""Component ablation over readout, attention context, RoPE and the repulsive term."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .data import ArrayDataset
from .loss import bce_grad
from .metrics import MetricReport, evaluate, roc_auc
from .model import ModelConfig, sigmoid
from .rng import SplitMix64
from .train import AdamState, TrainConfig, adam_step, predict, stratified_split, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    name: str
    description: str
    anchor: bool
    rope: bool
    rcl: bool


VARIANTS = {
    v.name: v
    for v in (
        Variant("maxpool", "max-pool raw RoI embeddings -> MLP, no attention", False, False, False),
        Variant("anchor", "attention, anchor readout", True, False, False),
        Variant("anchor_rope", "attention + RoPE, anchor readout", True, True, False),
        Variant("anchor_rope_rcl", "attention + RoPE + repulsive loss, anchor readout", True, True, True),
        Variant("anchor_probe", "linear probe on the raw anchor embedding", True, False, False),
        Variant("maxpool_projected", "learned projection -> max-pool -> MLP, no attention", False, False, False),
    )
}
DEFAULT_VARIANTS = tuple(VARIANTS)


def variant_configs(name: str, base_model: ModelConfig, base_train: TrainConfig):
    """Model and train configs for one network variant (not the probe)."""
    if name == "maxpool":
        return (replace(base_model, L=0, readout="maxpool", use_rope=False,
                        project_input=False, d=base_model.a),
                replace(base_train, lambda_rep=0.0))
    if name == "maxpool_projected":
        return (replace(base_model, L=0, readout="maxpool", use_rope=False),
                replace(base_train, lambda_rep=0.0))
    if name == "anchor":
        return replace(base_model, readout="anchor", use_rope=False), replace(base_train, lambda_rep=0.0)
    if name == "anchor_rope":
        return replace(base_model, readout="anchor", use_rope=True), replace(base_train, lambda_rep=0.0)
    if name == "anchor_rope_rcl":
        return replace(base_model, readout="anchor", use_rope=True), base_train
    raise ValueError(f"unknown variant {name!r}")


def train_anchor_probe(ds: ArrayDataset, cfg: TrainConfig):
    """Logistic regression on the raw anchor embedding, same split and schedule as train().

    Returns (weights dict, best validation AUC).
    """
    cfg.validate()
    train_idx, val_idx = stratified_split(ds.labels, cfg.val_fraction, cfg.seed)
    X = ds.embeddings[:, 0]
    y = ds.labels
    a = X.shape[1]
    bound = 1.0 / np.sqrt(a)
    params = {
        "w": SplitMix64(cfg.seed).child("probe").uniform(a, -bound, bound),
        "b": np.zeros(1),
    }
    state = AdamState.zeros(params)
    best, best_auc, wait = params, None, 0
    shuffler = SplitMix64(cfg.seed).child("epoch")
    for epoch in range(cfg.epochs):
        order = shuffler.child(epoch).shuffle(train_idx)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            p = sigmoid(X[idx] @ params["w"] + params["b"][0])
            d_logit = bce_grad(p, y[idx]) / len(idx) * p * (1 - p)
            grads = {"w": X[idx].T @ d_logit, "b": np.array([d_logit.sum()])}
            params, state = adam_step(params, grads, state, cfg)
        auc = roc_auc(probe_scores(params, ds.embeddings[val_idx]), y[val_idx])
        if best_auc is None or auc > best_auc:
            best, best_auc, wait = params, auc, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    return best, best_auc


def probe_scores(params, embeddings: np.ndarray) -> np.ndarray:
    return sigmoid(embeddings[:, 0] @ params["w"] + params["b"][0])


def _eval_set(ds: ArrayDataset, test: ArrayDataset | None, cfg: TrainConfig):
    if test is not None:
        return test, "test"
    _, val_idx = stratified_split(ds.labels, cfg.val_fraction, cfg.seed)
    return ds.subset(val_idx), "val"


def run_variant(name: str, ds: ArrayDataset, test: ArrayDataset | None,
                base_model: ModelConfig, base_train: TrainConfig) -> dict:
    variant = VARIANTS[name]
    eval_ds, eval_name = _eval_set(ds, test, base_train)
    if name == "anchor_probe":
        params, val_auc = train_anchor_probe(ds, base_train)
        report: MetricReport = evaluate(probe_scores(params, eval_ds.embeddings), eval_ds.labels)
        best_epoch = None
    else:
        model_cfg, train_cfg = variant_configs(name, base_model, base_train)
        params, tr = train(ds, model_cfg, train_cfg)
        report = evaluate(predict(params, model_cfg, eval_ds), eval_ds.labels)
        val_auc, best_epoch = tr.best_val_auc, tr.best_epoch
    return {
        "variant": name,
        "description": variant.description,
        "anchor": variant.anchor,
        "rope": variant.rope,
        "rcl": variant.rcl,
        "status": "ok",
        "best_epoch": best_epoch,
        "val_auc": val_auc,
        "eval_set": eval_name,
        **report.to_dict(),
    }


def run_ablation(ds: ArrayDataset, test: ArrayDataset | None, base_model: ModelConfig,
                 base_train: TrainConfig, variants=DEFAULT_VARIANTS, on_row=None) -> list[dict]:
    """Train each variant with the shared seed. Failed variants yield a row with status "failed"."""
    for name in variants:
        if name not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    rows = []
    for i, name in enumerate(variants):
        try:
            row = run_variant(name, ds, test, base_model, base_train)
        except KeyboardInterrupt:
            rows.append(_failed(name, "interrupted"))
            rows.extend(_failed(n, "not run") for n in variants[i + 1 :])
            break
        except Exception as exc:  # keep the rest of the table
            log.exception("variant %s failed", name)
            row = _failed(name, f"{type(exc).__name__}: {exc}")
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return rows


def _failed(name: str, error: str) -> dict:
    v = VARIANTS[name]
    return {"variant": name, "description": v.description, "anchor": v.anchor,
            "rope": v.rope, "rcl": v.rcl, "status": "failed", "error": error}


def format_table(rows: list[dict]) -> str:
    """Aligned fixed-width text table."""
    headers = ["variant", "anchor", "rope", "rcl", "auc", "f1", "r@0.1", "r@0.3", "r@0.5", "status"]
    mark = {True: "x", False: "-"}
    lines = []
    for row in rows:
        if row["status"] == "ok":
            nums = [f"{row['auc']:.4f}", f"{row['f1']:.4f}"] + [f"{row['r_at'][k]:.4f}" for k in ("0.1", "0.3", "0.5")]
        else:
            nums = ["failed"] * 5
        lines.append([row["variant"], mark[row["anchor"]], mark[row["rope"]], mark[row["rcl"]], *nums, row["status"]])
    widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h) for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*headers), fmt.format(*("-" * w for w in widths))]
    out += [fmt.format(*l) for l in lines]
    return "\n".join(out)
