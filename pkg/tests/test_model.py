"""Encoder/decoder, two-frame forward pass, batched path, full-model gradients."""

import numpy as np
import pytest

from framegate.autodiff import Tape, apply, backward, grad_check
from framegate.gating import GatingHead, SharpenParams
from framegate.model import (ForwardResult, ModelConfig, ModelParams, decode, encode,
                             extract_grads, forward_batch, forward_pair,
                             prepare_batch_params)

TOL = 1e-5

SMALL = ModelConfig(image_side=8, latent_dim=6, num_heads=1,
                    enc_hidden=(16, 8), dec_hidden=(8, 16), gate_hidden=8)


def frames(rng, config, count=1):
    out = rng.random((count, config.pixels))
    return out if count > 1 else out[0]


# ---- config / params ----

def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(image_side=1)
    with pytest.raises(ValueError):
        ModelConfig(latent_dim=2, num_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(num_heads=0)
    with pytest.raises(ValueError):
        ModelConfig(enc_hidden=(0,))


def test_pixels_property():
    assert ModelConfig(image_side=16).pixels == 256


def test_initialize_bounds_and_zero_biases():
    rng = np.random.default_rng(0)
    params = ModelParams.initialize(SMALL, rng)
    for i, w in enumerate(params.enc_w):
        a = np.sqrt(6.0 / sum(w.shape))
        assert np.abs(w).max() <= a
        assert np.array_equal(params.enc_b[i], np.zeros(w.shape[1]))
    for head in params.heads:
        assert np.array_equal(head.b1, np.zeros_like(head.b1))
        assert np.array_equal(head.b2, np.zeros_like(head.b2))


def test_initialize_deterministic_in_seed():
    a = ModelParams.initialize(SMALL, np.random.default_rng(7)).named()
    b = ModelParams.initialize(SMALL, np.random.default_rng(7)).named()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_named_round_trip():
    params = ModelParams.initialize(SMALL, np.random.default_rng(1))
    rebuilt = ModelParams.from_named(SMALL, params.named())
    assert all(np.array_equal(v, rebuilt.named()[k]) for k, v in params.named().items())


def test_from_named_rejects_bad_keys_and_shapes():
    params = ModelParams.initialize(SMALL, np.random.default_rng(2))
    arrays = params.named()
    missing = dict(arrays)
    missing.pop("enc0.w")
    with pytest.raises(KeyError, match="enc0.w"):
        ModelParams.from_named(SMALL, missing)
    extra = dict(arrays)
    extra["enc9.w"] = np.zeros((2, 2))
    with pytest.raises(KeyError, match="enc9.w"):
        ModelParams.from_named(SMALL, extra)
    bad = dict(arrays)
    bad["dec0.b"] = np.zeros(3)
    with pytest.raises(ValueError, match="dec0.b"):
        ModelParams.from_named(SMALL, bad)


# ---- encode / decode ----

def test_zero_params_encode_to_zero_decode_to_half():
    params = ModelParams.zeros(SMALL)
    x = np.linspace(0, 1, SMALL.pixels)
    h = encode(x, params)
    assert np.array_equal(h.data, np.zeros(SMALL.latent_dim))
    x_hat = decode(np.zeros(SMALL.latent_dim), params)
    assert np.array_equal(x_hat.data, np.full(SMALL.pixels, 0.5))


def test_encode_shared_and_deterministic():
    rng = np.random.default_rng(3)
    params = ModelParams.initialize(SMALL, rng)
    x = frames(rng, SMALL)
    assert np.array_equal(encode(x, params).data, encode(x.copy(), params).data)


def test_decode_stays_inside_unit_interval():
    rng = np.random.default_rng(4)
    params = ModelParams.initialize(SMALL, rng)
    out = decode(rng.normal(size=SMALL.latent_dim), params).data
    assert (out > 0).all() and (out < 1).all()


def test_encode_rejects_wrong_length():
    params = ModelParams.zeros(SMALL)
    with pytest.raises(ValueError):
        encode(np.zeros(10), params)
    with pytest.raises(ValueError):
        decode(np.zeros(5), params)


# ---- forward_pair ----

def test_hard_mode_swaps_at_most_k_components():
    rng = np.random.default_rng(5)
    for num_heads in (1, 2):
        config = ModelConfig(image_side=8, latent_dim=6, num_heads=num_heads,
                             enc_hidden=(16, 8), dec_hidden=(8, 16), gate_hidden=8)
        params = ModelParams.initialize(config, rng)
        x_prev, x_curr = frames(rng, config), frames(rng, config)
        res = forward_pair(x_prev, x_curr, params, SharpenParams(gamma=2.0), mode="hard")
        h_prev = encode(x_prev, params).data
        mixed = res.mixed.data
        assert np.sum(~np.isclose(mixed, h_prev)) <= num_heads


def test_equal_frames_mix_to_current_encoding():
    rng = np.random.default_rng(6)
    params = ModelParams.initialize(SMALL, rng)
    x = frames(rng, SMALL)
    res = forward_pair(x, x.copy(), params, SharpenParams(gamma=1.0), mode="hard")
    assert np.allclose(res.mixed.data, res.latent_curr.data, atol=1e-15)


def test_hard_mode_ignores_rng():
    rng = np.random.default_rng(7)
    params = ModelParams.initialize(SMALL, rng)
    x_prev, x_curr = frames(rng, SMALL), frames(rng, SMALL)
    sp = SharpenParams(gamma=4.0, sigma=0.5)
    a = forward_pair(x_prev, x_curr, params, sp, mode="hard",
                     rng=np.random.default_rng(1))
    b = forward_pair(x_prev, x_curr, params, sp, mode="hard",
                     rng=np.random.default_rng(2))
    assert a.loss.item() == b.loss.item()


def test_soft_mode_requires_rng_when_noisy():
    params = ModelParams.initialize(SMALL, np.random.default_rng(8))
    x = np.zeros(SMALL.pixels)
    with pytest.raises(ValueError, match="rng"):
        forward_pair(x, x, params, SharpenParams(gamma=1.0, sigma=0.1), mode="soft")


def test_forward_pair_loss_nonnegative_and_result_fields():
    rng = np.random.default_rng(9)
    params = ModelParams.initialize(SMALL, rng)
    res = forward_pair(frames(rng, SMALL), frames(rng, SMALL), params,
                       SharpenParams(gamma=1.0), mode="soft",
                       rng=np.random.default_rng(0))
    assert isinstance(res, ForwardResult)
    assert res.loss.item() >= 0.0
    assert len(res.w_per_head) == SMALL.num_heads
    assert res.mask.shape == (SMALL.latent_dim,)
    assert res.x_hat.shape == (SMALL.pixels,)


def test_unknown_mode_rejected():
    params = ModelParams.zeros(SMALL)
    x = np.zeros(SMALL.pixels)
    with pytest.raises(ValueError, match="mode"):
        forward_pair(x, x, params, SharpenParams(gamma=1.0), mode="binary")


# ---- batched path ----

def test_batch_loss_equals_mean_of_pair_losses():
    rng = np.random.default_rng(10)
    params = ModelParams.initialize(SMALL, rng)
    xp = frames(rng, SMALL, 5)
    xc = frames(rng, SMALL, 5)
    sp = SharpenParams(gamma=3.0)
    tape = Tape()
    bp, leaves = prepare_batch_params(params, tape)
    batch_loss = forward_batch(xp, xc, bp, sp, mode="soft",
                               rng=np.random.default_rng(0)).loss.item()
    singles = [forward_pair(xp[i], xc[i], params, sp, mode="soft",
                            rng=np.random.default_rng(0)).loss.item()
               for i in range(5)]
    assert abs(batch_loss - np.mean(singles)) < 1e-12


def assemble(config, values):
    """ModelParams from a name -> array-or-leaf mapping, no copying."""
    params = ModelParams(config=config)
    n_enc = len(config.enc_hidden) + 1
    n_dec = len(config.dec_hidden) + 1
    params.enc_w = [values[f"enc{i}.w"] for i in range(n_enc)]
    params.enc_b = [values[f"enc{i}.b"] for i in range(n_enc)]
    params.dec_w = [values[f"dec{i}.w"] for i in range(n_dec)]
    params.dec_b = [values[f"dec{i}.b"] for i in range(n_dec)]
    params.heads = [GatingHead(values[f"head{k}.w1"], values[f"head{k}.b1"],
                               values[f"head{k}.w2"], values[f"head{k}.b2"])
                    for k in range(config.num_heads)]
    return params


def leaf_params(config, arrays, tape):
    """ModelParams whose fields are all tape leaves; also name -> leaf."""
    leaves = {name: tape.leaf(arr) for name, arr in arrays.items()}
    return assemble(config, leaves), leaves


def test_batch_gradients_match_averaged_pair_gradients():
    rng = np.random.default_rng(11)
    params = ModelParams.initialize(SMALL, rng)
    xp = frames(rng, SMALL, 4)
    xc = frames(rng, SMALL, 4)
    sp = SharpenParams(gamma=2.0)

    tape = Tape()
    bp, leaves = prepare_batch_params(params, tape)
    res = forward_batch(xp, xc, bp, sp, mode="soft", rng=np.random.default_rng(0))
    batch_grads = extract_grads(leaves, backward(res.loss))

    arrays = params.named()
    summed = {k: np.zeros_like(v) for k, v in arrays.items()}
    for i in range(4):
        pair_tape = Tape()
        tracked, pair_leaves = leaf_params(SMALL, arrays, pair_tape)
        res = forward_pair(xp[i], xc[i], tracked, sp, mode="soft",
                           rng=np.random.default_rng(0))
        grads = backward(res.loss)
        for name, leaf in pair_leaves.items():
            summed[name] += grads[leaf.node] / 4.0
    worst = max(np.abs(batch_grads[k] - summed[k]).max() for k in summed)
    assert worst < 1e-12


# ---- full-model gradient check ----

# Central differences at step 1e-6 carry an absolute noise floor near 1e-13,
# so a coordinate only resolves cleanly when its true gradient clears ~1e-8.
# The evaluation point below is screened for that: a near-copy current frame
# keeps the loss (and with it the cancellation error) small, while a full-range
# previous frame keeps the gating path live.  Seed 1 has no gradient
# coordinate stuck in the unresolvable band for any head count or noise level.
@pytest.mark.parametrize("num_heads", [1, 2])
@pytest.mark.parametrize("sigma", [0.0, 0.05])
def test_full_model_gradients(num_heads, sigma):
    rng = np.random.default_rng(1)
    config = ModelConfig(image_side=8, latent_dim=6, num_heads=num_heads,
                         enc_hidden=(16, 8), dec_hidden=(8, 16), gate_hidden=8)
    params = ModelParams.initialize(config, rng)
    x_prev = 0.25 + 0.75 * rng.random(config.pixels)
    x_curr = 0.5 + 0.04 * (2 * rng.random(config.pixels) - 1)
    sp = SharpenParams(gamma=2.0, sigma=sigma)
    arrays = params.named()

    for name in arrays:
        def f(leaf, vary=name):
            vals = {k: (leaf if k == vary else v) for k, v in arrays.items()}
            mixed = assemble(config, vals)
            res = forward_pair(x_prev, x_curr, mixed, sp, mode="soft",
                               rng=np.random.default_rng(0))
            return res.loss

        assert grad_check(f, arrays[name]) <= TOL, name
