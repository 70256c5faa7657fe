"""Forward pass semantics, masked non-influence, equivariance, checkpoints."""

import dataclasses

import numpy as np
import pytest

from ctformer import data as D
from ctformer import tensor as T
from ctformer.attnmask import MaskStrategy
from ctformer.errors import ConfigError
from ctformer.model import (
    ModelConfig,
    ModelParams,
    ablate,
    count_params,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from ctformer.patching import PatchPlan
from ctformer.train import cmse_loss

from gradcheck import check_gradients


def _window(inputs, factors, horizon_per_channel, observed=None, seed=0):
    rng = np.random.default_rng(seed)
    inputs = [np.asarray(v, dtype=np.float64) for v in inputs]
    if observed is None:
        observed = [np.ones(len(v), dtype=bool) for v in inputs]
    return D.WindowSample(
        origin=0,
        input_len=len(inputs[0]) * factors[0],
        horizon=horizon_per_channel * factors[0],
        factors=list(factors),
        inputs=inputs,
        observed=observed,
        targets=[rng.normal(size=horizon_per_channel * factors[0] // r) for r in factors],
        phases=[0] * len(inputs),
    )


def _setup(factors=(1, 1), L=16, H=8, d=4, heads=2, blocks=2, c=1,
           patch_len=4, seed=0, **overrides):
    rng = np.random.default_rng(seed)
    inputs = [rng.normal(size=L // r) for r in factors]
    window = _window(inputs, list(factors), H, seed=seed + 1)
    window.input_len = L
    window.horizon = H
    plan = PatchPlan(
        tuple(max(2, patch_len // r) for r in factors),
        tuple((L // r) // max(2, patch_len // r) for r in factors),
        tuple((L // r) % max(2, patch_len // r) for r in factors),
    )
    config = ModelConfig(
        input_len=L, horizon=H, d_model=d, n_heads=heads, n_blocks=blocks,
        channel_tokens=c, **overrides,
    )
    params = ModelParams(config, plan, list(factors), seed=seed)
    return window, plan, config, params


def test_forward_shapes_follow_horizon_division():
    window, _, config, params = _setup(factors=(1, 4), L=24, H=8)
    pred = forward(window, params, config)
    assert [len(p) for p in pred.normalized] == [8, 2]


def test_forward_all_zero_weights_gives_zero_forecasts():
    window, _, config, params = _setup()
    for _, p in params.registry():
        p.data[:] = 0.0
    params.bank.pos_table[:] = 0.0
    pred = forward(window, params, config)
    for y in pred.normalized:
        assert np.array_equal(y, np.zeros_like(y))


def test_forward_matches_hand_stepped_trace():
    """Single channel, one patch, one channel token, d=2, one head: the whole
    pipeline re-derived in straight-line numpy."""
    L, d = 4, 2
    window, plan, config, params = _setup(
        factors=(1,), L=L, H=2, d=d, heads=1, blocks=2, c=1, patch_len=4, seed=3
    )
    assert plan.counts == (1,)
    pred = forward(window, params, config).normalized[0]

    def ln(x, gain, shift, eps=1e-5):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + eps) * gain + shift

    w, b = params.bank.projections[4]
    local = window.inputs[0] @ w.data + b.data + params.bank.pos_table[0]
    local = local + params.bank.channel_embed.data[0]
    ct = params.bank.channel_tokens.data[0] + params.bank.channel_embed.data[0]
    x = np.stack([local, ct])
    # CD-ReadOnly with one channel: local sees itself; the token reads the local
    attn_to = np.array([0, 0])
    for blk in params.blocks:
        normed = ln(x, blk.ln1_gain.data, blk.ln1_shift.data)
        q = normed @ blk.w_q.data
        k = normed @ blk.w_k.data
        v = normed @ blk.w_v.data
        # each row attends a single key, so softmax weight is exactly 1
        att = v[attn_to]
        x = x + att @ blk.w_o.data
        normed2 = ln(x, blk.ln2_gain.data, blk.ln2_shift.data)
        hidden = np.maximum(normed2 @ blk.ffn_w1.data + blk.ffn_b1.data, 0.0)
        x = x + hidden @ blk.ffn_w2.data + blk.ffn_b2.data
    wd, bd = params.decoders[1]
    expected = x[1].reshape(1, d) @ wd.data + bd.data
    assert np.max(np.abs(pred - expected.reshape(-1))) < 1e-12


def test_forward_channel_permutation_equivariance():
    factors = [1, 1, 4]
    L, H, d, c = 16, 8, 4, 2
    rng = np.random.default_rng(7)
    inputs = [rng.normal(size=L // r) for r in factors]
    window = _window(inputs, factors, H, seed=8)
    plan = PatchPlan((4, 4, 2), (4, 4, 2), (0, 0, 0))
    config = ModelConfig(input_len=L, horizon=H, d_model=d, n_heads=2,
                         channel_tokens=c)
    params = ModelParams(config, plan, factors, seed=9)
    base = forward(window, params, config).normalized

    perm = [2, 0, 1]
    window_p = _window([inputs[j] for j in perm], [factors[j] for j in perm], H, seed=8)
    plan_p = PatchPlan(
        tuple(plan.lengths[j] for j in perm),
        tuple(plan.counts[j] for j in perm),
        tuple(plan.dropped[j] for j in perm),
    )
    params_p = ModelParams(config, plan_p, [factors[j] for j in perm], seed=9)
    # carry every parameter over, permuting the channel-indexed ones
    params_p.bank.projections = params.bank.projections
    params_p.bank.channel_embed = T.Tensor(
        params.bank.channel_embed.data[perm], requires_grad=True
    )
    ct = params.bank.channel_tokens.data.reshape(len(factors), c, d)
    params_p.bank.channel_tokens = T.Tensor(
        ct[perm].reshape(len(factors) * c, d), requires_grad=True
    )
    params_p.blocks = params.blocks
    params_p.decoders = params.decoders
    permuted = forward(window_p, params_p, config).normalized
    for j, src in enumerate(perm):
        assert np.max(np.abs(permuted[j] - base[src])) < 1e-12


@pytest.mark.parametrize("strategy", [MaskStrategy.CD_READONLY, MaskStrategy.CI_READONLY])
def test_masked_patch_values_cannot_influence_forecasts(strategy):
    factors = (1, 2)
    window, plan, config, params = _setup(
        factors=factors, L=16, H=4, mask_strategy=strategy, seed=11
    )
    # fully mask patch 1 of channel 0 (indices 4..8) and patch 0 of channel 1
    window.observed[0][4:8] = False
    window.observed[1][0:2] = False
    base = forward(window, params, config).normalized
    tampered = window.copy()
    tampered.inputs[0][4:8] = 1e6
    tampered.inputs[1][0:2] = -777.0
    out = forward(tampered, params, config).normalized
    for a, b in zip(base, out):
        assert np.max(np.abs(a - b)) < 1e-12


def test_dropout_flags_also_silence_patches():
    window, plan, config, params = _setup(factors=(1,), L=16, H=4, seed=2)
    from ctformer.patching import TokenLayout

    layout = TokenLayout(plan.counts, config.channel_tokens)
    drop = np.ones(layout.total, dtype=bool)
    drop[1] = False  # second patch of the only channel
    base = forward(window, params, config, dropout_flags=drop).normalized
    tampered = window.copy()
    tampered.inputs[0][4:8] = 123.0
    out = forward(tampered, params, config, dropout_flags=drop).normalized
    for a, b in zip(base, out):
        assert np.max(np.abs(a - b)) < 1e-12


def test_variable_length_inputs_keep_output_shapes():
    window, plan, config, params = _setup(factors=(1, 4), L=32, H=8, patch_len=8)
    full = forward(window, params, config)
    for short_len in (16, 24):
        truncated = D.truncate_inputs(window, short_len)
        pred = forward(truncated, params, config)
        assert [len(p) for p in pred.normalized] == [len(p) for p in full.normalized]


def test_forward_missing_decoder_is_config_error():
    window, plan, config, params = _setup(factors=(1, 2), L=16, H=8)
    params.factors = [1, 3]
    with pytest.raises(ConfigError, match="factor 3"):
        forward(window, params, config)


def test_end_to_end_gradient_small_model():
    window, plan, config, params = _setup(
        factors=(1, 2), L=16, H=4, d=4, heads=2, blocks=2, c=2, seed=21
    )

    def build():
        return cmse_loss(window.targets, forward(window, params, config))

    worst = check_gradients(build, dict(params.registry()), h=1e-5)
    assert worst < 1e-4


# --- parameter counting -------------------------------------------------------


def test_count_params_empty_registry():
    class Empty:
        def registry(self):
            return []

    assert count_params(Empty()) == 0


def test_count_params_decoder_arithmetic():
    window, plan, config, params = _setup(factors=(1,), L=16, H=3, d=4, heads=2, c=1)
    w, b = params.decoders[1]
    assert w.data.size + b.data.size == 4 * 3 + 3 == 15


def test_count_params_matches_audit_sum():
    window, plan, config, params = _setup(factors=(1, 4), L=32, H=8, d=8, c=2)
    audit = 0
    for _, p in params.registry():
        audit += int(np.prod(p.data.shape)) if p.data.shape else 1
    assert count_params(params) == audit


def test_registry_enumerates_each_tensor_once():
    window, plan, config, params = _setup(factors=(1, 1, 4), L=16, H=8)
    entries = params.registry()
    names = [n for n, _ in entries]
    ids = [id(p) for _, p in entries]
    assert len(set(names)) == len(names)
    assert len(set(ids)) == len(ids)


# --- ablations ------------------------------------------------------------------


def test_ablate_channel_dependence_forces_ci():
    config = ModelConfig(input_len=8, horizon=4, mask_strategy=MaskStrategy.CD_READONLY)
    assert ablate(config, "no_channel_dependence").mask_strategy is MaskStrategy.CI_READONLY


def test_ablate_patch_masking_keeps_zero_filled_patches_attendable():
    window, plan, config, params = _setup(factors=(1,), L=16, H=4, seed=5)
    config_off = ablate(config, "no_patch_masking")
    assert config_off.dropout_ratio == 0.0
    window.observed[0][0:4] = False
    base = forward(window, params, config_off).normalized
    tampered = window.copy()
    tampered.inputs[0][0:4] = 50.0
    out = forward(tampered, params, config_off).normalized
    # with masking disabled, the zero-filled patch is attendable, so values leak
    assert any(np.max(np.abs(a - b)) > 1e-6 for a, b in zip(base, out))


def test_ablate_channel_embedding_freezes_zeros():
    window, plan, config, params = _setup(factors=(1, 2), L=16, H=4,
                                          use_channel_embedding=False)
    assert not params.bank.channel_embed.requires_grad
    assert np.array_equal(params.bank.channel_embed.data, np.zeros((2, config.d_model)))
    base = forward(window, params, config).normalized
    params.bank.channel_embed.data[:] = 0.0  # stays zero regardless of "init"
    out = forward(window, params, config).normalized
    for a, b in zip(base, out):
        assert np.array_equal(a, b)


def test_ablate_unknown_toggle():
    config = ModelConfig(input_len=8, horizon=4)
    with pytest.raises(ConfigError):
        ablate(config, "no_gravity")


# --- checkpoints -------------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path):
    window, plan, config, params = _setup(factors=(1, 4), L=32, H=8, d=8, c=2, seed=13)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(params, path)
    clone = ModelParams(config, plan, [1, 4], seed=99)  # different init
    load_checkpoint(clone, path)
    for (na, a), (nb, b) in zip(params.registry(), clone.registry()):
        assert na == nb
        assert np.array_equal(a.data, b.data)
    pred_a = forward(window, params, config).normalized
    pred_b = forward(window, clone, config).normalized
    for a, b in zip(pred_a, pred_b):
        assert np.array_equal(a, b)


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    _, plan, config, params = _setup(factors=(1,), L=16, H=4)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(params, path)
    other_config = dataclasses.replace(config, horizon=8)
    other = ModelParams(other_config, plan, [1], seed=0)
    with pytest.raises(ConfigError):
        load_checkpoint(other, path)
