"""Conditional VQ-VAE: quantisation, loss terms, and gradient routing.

The straight-through convention makes the raw quantised loss
non-differentiable, so finite differences are checked against term-isolated
surrogates: the reconstruction path uses a frozen quantisation offset
(z_q* - z_e* held constant), and the embed term is probed directly through
the codebook entries while the code assignment is stable. Fixtures assert a
margin to the nearest rectifier kink and codebook decision boundary first.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from gazeshift import so3
from gazeshift.vqvae import (ConditionalVQVAE, ConditionVector, MotionAllocation,
                             VQVAEConfig, quantize, quantize_rows,
                             reconstruction_terms)
from gazeshift.so3 import EyePose, HeadPose

FD_H = 1e-6
FD_REL = 1e-4


def small_model(seed: int = 0) -> ConditionalVQVAE:
    return ConditionalVQVAE(VQVAEConfig(codebook_size=4, latent_dim=3, hidden_width=8),
                            seed=seed)


def fixture_batch(rng: np.random.Generator, n: int = 3):
    Y = rng.uniform(-0.4, 0.4, size=(n, 5))
    C = np.concatenate([
        rng.uniform(-0.3, 0.3, size=(n, 2)),   # eye yaw, pitch
        rng.uniform(-0.5, 0.5, size=(n, 3)),   # head yaw, pitch, roll
        rng.uniform(0.5, 2.0, size=(n, 3)),    # target, metres
    ], axis=1)
    return Y, C


def assignment_margin(model: ConditionalVQVAE, Y, C) -> float:
    """Distance gap between the chosen code and the runner-up, per batch min."""
    z_e = model.encode_rows(Y, C)
    d2 = ((z_e[:, None, :] - model.codebook) ** 2).sum(axis=2)
    d2.sort(axis=1)
    return float((d2[:, 1] - d2[:, 0]).min())


def kink_margin(model: ConditionalVQVAE, Y, C) -> float:
    """Smallest |pre-activation| over every rectified layer in the model."""
    Cn = model.condition_inputs(C)
    f_y = model.recon_encoder.forward(Y)
    f_c = model.cond_encoder.forward(Cn)
    z_e = model.fusion_in.forward(np.concatenate([f_y, f_c], axis=1))
    _, z_q = quantize_rows(z_e, model.codebook)
    h = model.fusion_out.forward(np.concatenate([z_q, f_c], axis=1))
    margins = []
    for net, x in ((model.recon_encoder, Y), (model.cond_encoder, Cn),
                   (model.decoder, h)):
        for z, act in zip(net.preactivations(x), net.activations):
            if act == "relu":
                margins.append(float(np.abs(z).min()))
    return min(margins)


def stable_fixture(seed_start: int = 0):
    """A (model, Y, C) fixture with safe margins for finite differencing."""
    for seed in range(seed_start, seed_start + 50):
        rng = np.random.default_rng(seed)
        model = small_model(seed)
        Y, C = fixture_batch(rng)
        if assignment_margin(model, Y, C) < 1e-3:
            continue
        if kink_margin(model, Y, C) < 1e-4:
            continue
        # geodesic distances must stay away from the metric's kinks at 0, pi
        pred = model.decode_rows(quantize_rows(model.encode_rows(Y, C), model.codebook)[1], C)
        vals, _ = reconstruction_terms(pred, Y, C, 1.0, want_grad=False)
        if vals.min() < 0.05 or vals.max() > math.pi - 0.1:
            continue
        return model, Y, C
    raise AssertionError("no stable fixture found")


# -- domain types ----------------------------------------------------------------

def test_condition_vector_flattens_in_documented_order():
    c = ConditionVector(EyePose(0.1, 0.2), HeadPose(0.3, 0.4, 0.5), [1.0, 2.0, 2.5])
    np.testing.assert_array_equal(c.as_input(), [0.1, 0.2, 0.3, 0.4, 0.5, 1.0, 2.0, 2.5])
    back = ConditionVector.from_input(c.as_input())
    assert back.eye == c.eye and back.head == c.head
    np.testing.assert_array_equal(back.target, c.target)


def test_condition_vector_rejects_degenerate_target():
    with pytest.raises(ValueError):
        ConditionVector(EyePose(0, 0), HeadPose(0, 0, 0), [0.0, 0.0, 0.01])
    with pytest.raises(ValueError):
        ConditionVector(EyePose(0, 0), HeadPose(0, 0, 0), [1.0, np.nan, 0.0])


def test_motion_allocation_validation():
    a = MotionAllocation([0.1, -0.2], [0.3, 0.0, -0.1])
    np.testing.assert_array_equal(a.as_vector(), [0.1, -0.2, 0.3, 0.0, -0.1])
    with pytest.raises(ValueError):
        MotionAllocation([0.1], [0.3, 0.0, -0.1])
    with pytest.raises(ValueError):
        MotionAllocation([0.1, 4.0], [0.0, 0.0, 0.0])  # beyond pi
    back = MotionAllocation.from_vector(a.as_vector())
    np.testing.assert_array_equal(back.delta_head, a.delta_head)


# -- quantize --------------------------------------------------------------------

def test_quantize_nearest_neighbor():
    book = np.array([[0.0, 0.0], [1.0, 1.0]])
    res = quantize(np.array([0.1, 0.2]), book)
    assert res.index == 0  # nearest entry is the first one
    np.testing.assert_array_equal(res.z_q, [0.0, 0.0])


def test_quantize_exact_hit():
    book = np.array([[0.0, 0.0], [1.0, 1.0]])
    res = quantize(np.array([1.0, 1.0]), book)
    assert res.index == 1
    np.testing.assert_array_equal(res.z_q, [1.0, 1.0])


def test_quantize_tie_breaks_to_smallest_index():
    book = np.array([[0.0, 0.0], [1.0, 0.0]])
    res = quantize(np.array([0.5, 0.0]), book)  # exactly equidistant
    assert res.index == 0


def test_quantize_exhaustive_against_oracle():
    rng = np.random.default_rng(21)
    book = rng.normal(size=(7, 4))
    Z = rng.normal(size=(50, 4))
    idx, z_q = quantize_rows(Z, book)
    for i in range(50):
        d2 = [float(((Z[i] - e) ** 2).sum()) for e in book]
        assert idx[i] == int(np.argmin(d2))
        np.testing.assert_array_equal(z_q[i], book[idx[i]])


def test_quantize_idempotent():
    rng = np.random.default_rng(22)
    book = rng.normal(size=(5, 3))
    res = quantize(rng.normal(size=3), book)
    again = quantize(res.z_q, book)
    assert again.index == res.index


def test_quantize_validates_inputs():
    with pytest.raises(ValueError):
        quantize(np.zeros(3), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        quantize(np.zeros(3), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        quantize(np.array([1.0, np.inf, 0.0]), np.zeros((4, 3)))


# -- encode / decode ---------------------------------------------------------------

def test_encode_shape_and_determinism():
    c = ConditionVector(EyePose(0.1, 0.0), HeadPose(0.2, -0.1, 0.0), [1.5, 0.3, 0.2])
    y = MotionAllocation([0.05, 0.02], [0.2, -0.1, 0.0])
    a = ConditionalVQVAE(VQVAEConfig(), seed=5).encode(y, c)
    b = ConditionalVQVAE(VQVAEConfig(), seed=5).encode(y, c)
    assert a.shape == (VQVAEConfig().latent_dim,) == (8,)
    np.testing.assert_array_equal(a, b)


def test_decode_shape_and_split():
    model = small_model()
    c = ConditionVector(EyePose(0, 0), HeadPose(0, 0, 0), [1.0, 0.0, 0.0])
    out = model.decode(np.zeros(3), c)
    assert out.delta_eye.shape == (2,) and out.delta_head.shape == (3,)
    with pytest.raises(ValueError):
        model.decode(np.zeros(5), c)


def test_encode_input_gradients_match_fd():
    # chain the per-net input gradients through the fusion and compare with
    # finite differences of encode_rows coordinates
    model, Y, C = stable_fixture(30)
    H = model.config.hidden_width
    D = model.config.latent_dim
    for coord in range(D):
        z0 = model.encode_rows(Y, C)
        upstream = np.zeros_like(z0)
        upstream[:, coord] = 1.0
        _, g_u = model.fusion_in.backward(upstream)
        _, g_y = model.recon_encoder.backward(g_u[:, :H])
        for i in (0, 1):
            for j in range(5):
                step = np.zeros_like(Y)
                step[i, j] = FD_H
                fd = (model.encode_rows(Y + step, C)[i, coord]
                      - model.encode_rows(Y - step, C)[i, coord]) / (2 * FD_H)
                assert g_y[i, j] == pytest.approx(fd, rel=FD_REL, abs=1e-9)


# -- reconstruction loss ------------------------------------------------------------

def test_reconstruction_zero_for_exact_prediction():
    rng = np.random.default_rng(23)
    Y, C = fixture_batch(rng)
    vals, _ = reconstruction_terms(Y, Y, C, 1.0, want_grad=False)
    # arccos near u = 1 resolves zero only to about sqrt(eps)
    np.testing.assert_allclose(vals, 0.0, atol=1e-7)


def test_reconstruction_nonnegative():
    rng = np.random.default_rng(24)
    Y, C = fixture_batch(rng, n=20)
    pred = Y + rng.normal(scale=0.2, size=Y.shape)
    vals, _ = reconstruction_terms(pred, Y, C, 1.0, want_grad=False)
    assert np.all(vals >= 0)


def test_reconstruction_invariant_to_wrapped_targets():
    # the loss compares rotations, so a 2*pi shift in a true angle is invisible
    rng = np.random.default_rng(25)
    Y, C = fixture_batch(rng)
    shifted = Y.copy()
    shifted[:, 2] += 2 * math.pi
    a, _ = reconstruction_terms(Y + 0.1, Y, C, 1.0, want_grad=False)
    b, _ = reconstruction_terms(Y + 0.1, shifted, C, 1.0, want_grad=False)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_reconstruction_same_axis_value():
    # 30 degree head-yaw error, eyes exact -> loss = pi/6 with lambda_rc = 1
    Y = np.zeros((1, 5))
    C = np.zeros((1, 8))
    C[0, 5] = 1.0  # any valid target; unused by the loss
    pred = Y.copy()
    pred[0, 2] = math.radians(30)
    vals, _ = reconstruction_terms(pred, Y, C, 1.0, want_grad=False)
    assert vals[0] == pytest.approx(math.radians(30), abs=1e-12)


def test_reconstruction_lambda_scales_head_term():
    Y = np.zeros((1, 5))
    C = np.zeros((1, 8))
    C[0, 5] = 1.0
    pred = Y.copy()
    pred[0, 0] = 0.2   # eye yaw error
    pred[0, 2] = 0.3   # head yaw error
    v1, _ = reconstruction_terms(pred, Y, C, 1.0, want_grad=False)
    v2, _ = reconstruction_terms(pred, Y, C, 2.0, want_grad=False)
    assert v2[0] - v1[0] == pytest.approx(0.3, abs=1e-12)


# -- vq loss: values ------------------------------------------------------------------

def test_vq_loss_zero_at_perfect_reconstruction():
    model = small_model()
    zeros = {name: np.zeros_like(p) for name, p in model.params().items()}
    model.set_params(zeros)  # zero nets and zero codebook: z_e = z_q = pred = 0
    c = ConditionVector(EyePose(0.1, 0.0), HeadPose(0.2, 0.0, 0.0), [1.0, 0.2, 0.1])
    y = MotionAllocation([0.0, 0.0], [0.0, 0.0, 0.0])
    terms = model.vq_loss(y, c)
    assert terms.total == pytest.approx(0.0, abs=1e-12)
    assert terms.rec == pytest.approx(0.0, abs=1e-12)
    assert terms.embed == terms.commit == pytest.approx(0.0, abs=1e-12)


def test_vq_loss_beta_weighs_only_commit():
    model, Y, C = stable_fixture(40)
    terms, _ = model.loss_and_grads(Y, C, want_grads=False)
    beta = model.config.beta
    assert terms.commit == terms.embed  # same value, different gradient routing
    assert terms.total == pytest.approx(terms.rec + (1 + beta) * terms.embed, rel=1e-12)


def test_vq_loss_rejects_bad_batches():
    model = small_model()
    with pytest.raises(ValueError):
        model.loss_and_grads(np.zeros((0, 5)), np.zeros((0, 8)))
    with pytest.raises(ValueError):
        model.loss_and_grads(np.zeros((2, 5)), np.zeros((3, 8)))


# -- vq loss: gradient routing and finite differences ----------------------------------

def flat_params(model):
    return {name: p for name, p in model.params().items()}


def fd_probe(model, Y, C, name, j, weights, h=FD_H):
    """Central difference of the weighted loss in one parameter coordinate."""
    p = model.params()[name].ravel()
    orig = p[j]
    rec_w, embed_w, commit_w = weights
    p[j] = orig + h
    up, _ = model.loss_and_grads(Y, C, rec_weight=rec_w, embed_weight=embed_w,
                                 commit_weight=commit_w, want_grads=False)
    p[j] = orig - h
    down, _ = model.loss_and_grads(Y, C, rec_weight=rec_w, embed_weight=embed_w,
                                   commit_weight=commit_w, want_grads=False)
    p[j] = orig
    return (up.total - down.total) / (2 * h)


def test_codebook_gradient_comes_only_from_embed_term():
    model, Y, C = stable_fixture(50)
    # rec + commit active, embed off: codebook gradient must vanish exactly
    _, grads = model.loss_and_grads(Y, C, rec_weight=1.0, embed_weight=0.0)
    assert np.all(grads["codebook"] == 0.0)
    # embed alone: codebook gradient matches finite differences of the real
    # loss while the code assignment is stable
    _, grads = model.loss_and_grads(Y, C, rec_weight=0.0, embed_weight=1.0,
                                    commit_weight=0.0)
    idx, _ = quantize_rows(model.encode_rows(Y, C), model.codebook)
    flat = grads["codebook"].ravel()
    D = model.config.latent_dim
    for j in range(model.codebook.size):
        fd = fd_probe(model, Y, C, "codebook", j, (0.0, 1.0, 0.0))
        assert flat[j] == pytest.approx(fd, rel=FD_REL, abs=1e-9), j
    # entries never selected receive exactly zero
    unused = set(range(model.config.codebook_size)) - set(int(k) for k in idx)
    for k in unused:
        assert np.all(grads["codebook"][k] == 0.0)


def test_encoder_gradient_blocked_on_embed_term():
    model, Y, C = stable_fixture(60)
    _, grads = model.loss_and_grads(Y, C, rec_weight=0.0, embed_weight=1.0,
                                    commit_weight=0.0)
    for name, g in grads.items():
        if name != "codebook":
            assert np.all(g == 0.0), name


def test_commit_gradient_reaches_encoder_not_codebook():
    model, Y, C = stable_fixture(70)
    beta = model.config.beta
    _, grads = model.loss_and_grads(Y, C, rec_weight=0.0, embed_weight=0.0,
                                    commit_weight=beta)
    assert np.all(grads["codebook"] == 0.0)
    # decoder is behind the stop-gradient too
    for name, g in grads.items():
        if name.startswith(("decoder.", "fusion_out.")):
            assert np.all(g == 0.0), name
    # encoder-path gradients match finite differences of the real commit
    # loss: with the assignment stable, e_idx acts as the frozen constant
    # that sg[z_q] denotes
    some = 0
    for name in ("recon_encoder.0.W", "cond_encoder.0.W", "fusion_in.0.W"):
        g = grads[name].ravel()
        p = model.params()[name].ravel()
        rng = np.random.default_rng(hash(name) % (2**32))
        for j in rng.choice(p.size, size=6, replace=False):
            fd = fd_probe(model, Y, C, name, int(j), (0.0, 0.0, beta))
            assert g[j] == pytest.approx(fd, rel=FD_REL, abs=1e-9), (name, j)
            some += 1
    assert some > 0


def test_rec_gradients_match_straight_through_surrogate():
    """All non-codebook gradients of the reconstruction term against FD.

    The surrogate fixes the quantisation offset (z_q* - z_e*) at the fixture
    point and decodes z_e + offset, which is exactly the function whose true
    gradient the straight-through estimator reports.
    """
    model, Y, C = stable_fixture(80)
    z_e0 = model.encode_rows(Y, C)
    _, z_q0 = quantize_rows(z_e0, model.codebook)
    offset = z_q0 - z_e0  # frozen

    def surrogate() -> float:
        f_c = model.cond_encoder.forward(model.condition_inputs(C))
        f_y = model.recon_encoder.forward(Y)
        z_e = model.fusion_in.forward(np.concatenate([f_y, f_c], axis=1))
        h = model.fusion_out.forward(np.concatenate([z_e + offset, f_c], axis=1))
        pred = model.decoder.forward(h)
        vals, _ = reconstruction_terms(pred, Y, C, model.config.lambda_rc,
                                       want_grad=False)
        return float(vals.mean())

    _, grads = model.loss_and_grads(Y, C, rec_weight=1.0, embed_weight=0.0,
                                    commit_weight=0.0)
    assert np.all(grads["codebook"] == 0.0)
    checked = 0
    for name, g in grads.items():
        if name == "codebook":
            continue
        p = model.params()[name].ravel()
        gf = g.ravel()
        rng = np.random.default_rng(checked + 1)
        picks = rng.choice(p.size, size=min(8, p.size), replace=False)
        for j in picks:
            orig = p[j]
            p[j] = orig + FD_H
            up = surrogate()
            p[j] = orig - FD_H
            down = surrogate()
            p[j] = orig
            fd = (up - down) / (2 * FD_H)
            assert gf[j] == pytest.approx(fd, rel=FD_REL, abs=1e-9), (name, j)
            checked += 1
    assert checked >= 40


def test_total_gradient_is_sum_of_term_gradients():
    model, Y, C = stable_fixture(90)
    beta = model.config.beta
    _, g_total = model.loss_and_grads(Y, C)
    _, g_rec = model.loss_and_grads(Y, C, rec_weight=1.0, embed_weight=0.0,
                                    commit_weight=0.0)
    _, g_embed = model.loss_and_grads(Y, C, rec_weight=0.0, embed_weight=1.0,
                                      commit_weight=0.0)
    _, g_commit = model.loss_and_grads(Y, C, rec_weight=0.0, embed_weight=0.0,
                                       commit_weight=beta)
    for name in g_total:
        np.testing.assert_allclose(
            g_total[name], g_rec[name] + g_embed[name] + g_commit[name],
            atol=1e-12, err_msg=name)


# -- persistence ----------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model, Y, C = stable_fixture(100)
    path = tmp_path / "model.json"
    model.save(path, metadata={"note": "fixture"})
    loaded, ck = ConditionalVQVAE.load(path)
    assert loaded.config == model.config
    assert loaded.fingerprint() == model.fingerprint()
    assert ck.metadata["note"] == "fixture"
    np.testing.assert_array_equal(loaded.codebook, model.codebook)
    terms_a, _ = model.loss_and_grads(Y, C, want_grads=False)
    terms_b, _ = loaded.loss_and_grads(Y, C, want_grads=False)
    assert terms_a.total == terms_b.total


def test_load_rejects_other_checkpoints(tmp_path):
    from gazeshift import nets
    path = tmp_path / "other.json"
    nets.save_checkpoint(path, {"w": np.zeros(2)}, metadata={"model": {"kind": "foo"}})
    with pytest.raises(ValueError):
        ConditionalVQVAE.load(path)
