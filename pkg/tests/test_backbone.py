"""Frozen backbone: immutability, wiring of the two insertion sites."""

import numpy as np
import pytest

from taam.backbone import init_backbone
from taam.errors import ContractError
from taam.modulator import SiteParams, Modulator, init_modulator
from taam.rng import rng_for
from taam.tensor import Tape, Tensor, sum_all


def small_backbone(in_dim=5, hidden=4, seed=0):
    return init_backbone(in_dim, hidden, rng_for(seed, "bb"), hops=2)


def test_init_bounds_dtype_determinism():
    bb = small_backbone()
    assert bb.w1.shape == (5, 4) and bb.w2.shape == (4, 4)
    assert np.abs(bb.w1).max() <= 1.0 / np.sqrt(5)
    assert np.abs(bb.w2).max() <= 1.0 / np.sqrt(4)
    again = small_backbone()
    assert np.array_equal(bb.w1, again.w1) and np.array_equal(bb.w2, again.w2)
    f32 = init_backbone(5, 4, rng_for(0, "bb"), dtype=np.float32)
    assert f32.w1.dtype == np.float32
    with pytest.raises(ContractError):
        init_backbone(0, 4, rng_for(0, "bb"))


def test_weights_are_write_locked():
    bb = small_backbone()
    with pytest.raises(ValueError):
        bb.w1[0, 0] = 1.0
    with pytest.raises(ValueError):
        bb.w2[0, 0] = 1.0


def test_forward_is_pure():
    bb = small_backbone()
    mod = init_modulator(bb.site_widths, rng_for(1, "m"), embed_dim=4, heads=2)
    x = np.random.default_rng(2).normal(size=(6, 5))
    a = bb.forward(Tensor(x), mod).embedding.data
    b = bb.forward(Tensor(x), mod).embedding.data
    assert np.array_equal(a, b)


def test_forward_records_sites_and_shapes():
    bb = small_backbone()
    mod = init_modulator(bb.site_widths, rng_for(1, "m"), embed_dim=4, heads=2)
    x = np.random.default_rng(2).normal(size=(6, 5))
    acts = bb.forward(x, mod)  # plain ndarray input is wrapped
    assert len(acts.pre) == len(acts.post) == 2
    assert acts.pre[0].shape == (6, 5)
    assert acts.post[0].shape == (6, 5)
    assert acts.pre[1].shape == (6, 4)
    assert acts.embedding.shape == (6, 4)


def test_width_mismatch_rejected():
    bb = small_backbone()
    mod = init_modulator((5, 3), rng_for(1, "m"), embed_dim=4, heads=2)
    with pytest.raises(ContractError, match="widths"):
        bb.forward(Tensor(np.zeros((2, 5))), mod)


def passthrough_modulator(widths, heads=2):
    # unit scale, zero shift at every site, so the sites vanish when the
    # norm is hooked to identity
    sites = []
    for w in widths:
        row = np.concatenate([np.ones(w), np.zeros(w)])
        sites.append(SiteParams(
            Tensor(np.zeros((heads * 2 * w, 3)), requires_grad=True),
            Tensor(np.tile(row, heads).reshape(-1, 1), requires_grad=True),
            Tensor(np.random.default_rng(0).normal(size=(heads, w)), requires_grad=True),
            Tensor(np.zeros((1, heads)), requires_grad=True),
        ))
    return Modulator(Tensor(np.zeros((3, 1)), requires_grad=True), sites)


def test_linear_bypass_recovers_plain_projection():
    bb = small_backbone()
    mod = passthrough_modulator(bb.site_widths)
    x = np.random.default_rng(4).normal(size=(7, 5))
    got = bb.forward(Tensor(x), mod, norm_fn=lambda t: t).embedding.data
    assert np.allclose(got, x @ bb.w1 @ bb.w2, rtol=1e-12)


def test_backward_trains_modulator_not_backbone():
    bb = small_backbone()
    mod = init_modulator(bb.site_widths, rng_for(3, "m"), embed_dim=4, heads=2)
    x = Tensor(np.random.default_rng(5).normal(size=(6, 5)))
    w1_before = bb.w1.copy()
    with Tape() as tape:
        loss = sum_all(bb.forward(x, mod).embedding)
    tape.backward(loss)
    for p in mod.parameters():
        assert p.grad is not None
    assert x.grad is None
    assert np.array_equal(bb.w1, w1_before)
