import json
import math

import numpy as np
import pytest

from roiattn.loss import LossConfig
from roiattn.model import (
    ModelConfig,
    attention_forward,
    forward_batch,
    init_params,
    load_checkpoint,
    model_backward,
    model_forward,
    param_shapes,
    rope_rotate,
    save_checkpoint,
)
from roiattn.train import gradcheck

from conftest import random_record

SMALL = ModelConfig(a=8, d=16, H=2, L=2)


def perturbed(cfg, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    return {k: v + scale * rng.standard_normal(v.shape) for k, v in init_params(cfg, seed).items()}


def test_init_is_deterministic():
    a, b = init_params(SMALL, 3), init_params(SMALL, 3)
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = init_params(SMALL, 4)
    assert not np.array_equal(a["in.W"], c["in.W"])


def test_init_layout():
    p = init_params(SMALL, 0)
    assert np.all(p["head.W2"] == 0) and np.all(p["in.b"] == 0)
    assert np.all(p["blocks.0.ln1.g"] == 1)
    bound = 1 / math.sqrt(SMALL.d)
    assert np.abs(p["blocks.0.attn.Wq"]).max() <= bound


def test_zero_init_classifier_gives_half():
    params = init_params(SMALL, 0)
    for seed in range(5):
        y_hat, _, _ = model_forward(random_record(seed, a=8), params, SMALL)
        assert y_hat == 0.5


def test_head_dim_invariant():
    assert ModelConfig(d=64, H=4).head_dim == 16
    with pytest.raises(ValueError, match="divisible by 4"):
        ModelConfig(d=24, H=4).validate()
    with pytest.raises(ValueError, match="divisible by H"):
        ModelConfig(d=64, H=5).validate()


def test_no_positional_parameters():
    shapes = param_shapes(SMALL)
    assert not any("pos" in name for name in shapes)
    # the same parameter set serves any sequence length
    params = perturbed(SMALL)
    for k in (1, 3, 9):
        y, XL, _ = forward_batch(np.ones((1, k, 8)), np.full((1, k, 2), 0.5), params, SMALL)
        assert XL.shape == (1, k, 16)


# ---------------------------------------------------------------- RoPE

ROPE4 = ModelConfig(a=4, d=8, H=2, L=1)


def test_rope_identity_at_origin(rng):
    v = rng.standard_normal(4)
    assert np.array_equal(rope_rotate(v, (0.0, 0.0), ROPE4), v)


def test_rope_quarter_turn():
    cx = (math.pi / 2) / ROPE4.rope_scale
    out = rope_rotate(np.array([1.0, 0.0, 1.0, 0.0]), (cx, 0.0), ROPE4)
    assert out == pytest.approx([0.0, 1.0, 1.0, 0.0], abs=1e-15)


def test_rope_preserves_norm(rng):
    cfg = ModelConfig(d=64, H=4)
    for _ in range(100):
        v = rng.standard_normal(16)
        c = rng.uniform(-2, 2, size=2)
        assert abs(np.linalg.norm(rope_rotate(v, c, cfg)) - np.linalg.norm(v)) < 1e-9


def test_rope_dot_depends_on_offset_only(rng):
    cfg = ModelConfig(d=64, H=4)
    q, k = rng.standard_normal(16), rng.standard_normal(16)
    ci, cj = rng.uniform(size=2), rng.uniform(size=2)
    shift = np.array([0.37, -0.2])
    a = rope_rotate(q, ci, cfg) @ rope_rotate(k, cj, cfg)
    b = rope_rotate(q, ci + shift, cfg) @ rope_rotate(k, cj + shift, cfg)
    assert abs(a - b) < 1e-9


# ---------------------------------------------------------------- attention


def test_single_token_attention(rng):
    params = perturbed(SMALL)
    X = rng.standard_normal((1, 16))
    out, cache = attention_forward(X, [[0.3, 0.4]], params, SMALL)
    assert np.array_equal(cache["P"], np.ones((1, 2, 1, 1)))
    mu, sd = X.mean(), X.std()
    h = (X - mu) / np.sqrt(sd**2 + 1e-5) * params["blocks.0.ln1.g"] + params["blocks.0.ln1.b"]
    expected = X + h @ params["blocks.0.attn.Wv"] @ params["blocks.0.attn.Wo"]
    assert np.allclose(out, expected, atol=1e-12)


def test_identical_tokens_attend_uniformly(rng):
    params = perturbed(SMALL)
    k = 5
    X = np.tile(rng.standard_normal(16), (k, 1))
    _, cache = attention_forward(X, np.full((k, 2), 0.4), params, SMALL)
    assert np.allclose(cache["P"], 1 / k, atol=1e-12)


def test_attention_rejects_non_finite():
    X = np.zeros((3, 16))
    X[1, 2] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        attention_forward(X, np.zeros((3, 2)), perturbed(SMALL), SMALL)


def test_attention_rows_sum_to_one():
    params = perturbed(SMALL)
    rec = random_record(1, k=7, a=8)
    _, _, trace = model_forward(rec, params, SMALL)
    for P in trace.attention_probs():
        assert np.abs(P.sum(-1) - 1).max() < 1e-6


def test_translation_invariance():
    params = perturbed(SMALL)
    rec = random_record(2, k=6, a=8)
    Z, C = rec.embeddings()[None], rec.centers()[None]
    y0, _, t0 = forward_batch(Z, C, params, SMALL)
    y1, _, t1 = forward_batch(Z, C + [0.1, 0.1], params, SMALL)
    for P0, P1 in zip(t0.attention_probs(), t1.attention_probs()):
        assert np.abs(P0 - P1).max() < 1e-6
    assert abs(y0[0] - y1[0]) < 1e-6


def test_permutation_equivariance(rng):
    params = perturbed(SMALL)
    rec = random_record(3, k=6, a=8)
    Z, C = rec.embeddings(), rec.centers()
    perm = np.r_[0, 1 + rng.permutation(5)]
    y0, X0, _ = forward_batch(Z[None], C[None], params, SMALL)
    y1, X1, _ = forward_batch(Z[perm][None], C[perm][None], params, SMALL)
    assert abs(y0[0] - y1[0]) < 1e-6
    assert np.abs(X0[0][perm] - X1[0]).max() < 1e-6


def test_meanpool_equals_anchor_on_identical_rows(rng):
    base = perturbed(SMALL)
    Z = np.tile(rng.standard_normal(8), (4, 1))[None]
    C = np.full((1, 4, 2), 0.5)
    ya, _, _ = forward_batch(Z, C, base, SMALL)
    ym, _, _ = forward_batch(Z, C, base, ModelConfig(a=8, d=16, H=2, L=2, readout="meanpool"))
    assert abs(ya[0] - ym[0]) < 1e-12


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        forward_batch(np.zeros((1, 3, 5)), np.zeros((1, 3, 2)), init_params(SMALL, 0), SMALL)


def test_batch_matches_single_records():
    params = perturbed(SMALL)
    recs = [random_record(s, k=5, a=8) for s in range(4)]
    Z = np.stack([r.embeddings() for r in recs])
    C = np.stack([r.centers() for r in recs])
    yb, XLb, _ = forward_batch(Z, C, params, SMALL)
    for i, r in enumerate(recs):
        y, XL, _ = model_forward(r, params, SMALL)
        assert abs(y - yb[i]) < 1e-12
        assert np.abs(XL - XLb[i]).max() < 1e-12


# ---------------------------------------------------------------- backward


def test_zero_upstream_gives_zero_gradients():
    params = perturbed(SMALL)
    rec = random_record(4, k=5, a=8)
    _, XL, trace = model_forward(rec, params, SMALL)
    grads = model_backward(trace, np.zeros(1), np.zeros((1,) + XL.shape), params, SMALL)
    assert grads.keys() == params.keys()
    assert all(np.all(g == 0) for g in grads.values())


@pytest.mark.parametrize("readout", ["anchor", "meanpool", "maxpool"])
@pytest.mark.parametrize("use_rope", [True, False])
def test_gradients_match_finite_differences(readout, use_rope):
    cfg = ModelConfig(a=16, d=16, H=2, L=1, readout=readout, use_rope=use_rope)
    rep = gradcheck(cfg, LossConfig(lambda_rep=1.0), seed=7)
    assert rep.max_rel_error < 1e-4, rep.worst_param


def test_gradients_without_attention_or_projection():
    cfg = ModelConfig(a=8, d=8, H=1, L=0, readout="maxpool", use_rope=False, project_input=False)
    rep = gradcheck(cfg, LossConfig(lambda_rep=0.5), seed=1)
    assert rep.max_rel_error < 1e-4


def test_fault_injection_is_detected():
    rep = gradcheck(ModelConfig(a=16, d=16, H=2, L=1), LossConfig(), seed=0, fault="sign-flip")
    assert rep.max_rel_error == pytest.approx(2.0, abs=1e-6)


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path):
    params = perturbed(SMALL)
    p = tmp_path / "ck.json"
    save_checkpoint(p, SMALL, params, meta={"best_epoch": 3})
    cfg, back, meta = load_checkpoint(p)
    assert cfg == SMALL and meta == {"best_epoch": 3}
    assert all(np.array_equal(params[k], back[k]) for k in params)
    payload = json.loads(p.read_text())
    assert payload["version"] == 1 and payload["config"]["H"] == 2


def test_checkpoint_version_is_checked(tmp_path):
    p = tmp_path / "ck.json"
    save_checkpoint(p, SMALL, init_params(SMALL, 0))
    payload = json.loads(p.read_text())
    payload["version"] = 99
    p.write_text(json.dumps(payload))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(p)
