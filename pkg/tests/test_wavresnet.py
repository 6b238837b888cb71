import numpy as np
import pytest

from convframelet import directional, hankel, verification
from convframelet.errors import InvalidArgumentError, NumericFailureError, TrainingDivergedError
from convframelet.wavresnet import checkpoint as ckpt
from convframelet.wavresnet import layers, network
from convframelet.wavresnet.infer import NetworkDenoiser, PatchConfig, infer_image
from convframelet.wavresnet.network import ArchConfig, init_params
from convframelet.wavresnet.train import (
    TrainConfig, Trainer, TrainingData, TrainingSample, calibrate_input_scale, learning_rate, train,
)

SMALL = ArchConfig(in_bands=3, channels=4, module_count=1, convs_per_module=2, patch=(9, 9))


@pytest.fixture(scope="module")
def t3():
    return directional.build_transform(1, (2,))


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    routine = rng.random((4, 16, 16))
    return TrainingData(routine + 0.1 * rng.standard_normal(routine.shape), routine)


def tiny_cfg(**kw):
    base = dict(lr_initial=0.01, lr_final=0.001, clip=0.01, momentum=0.9, batch_size=2,
                epochs_stage1=1, epochs_stage2=1, epochs_stage3=1, db_refresh_epochs=1, db_stride=4)
    base.update(kw)
    return TrainConfig(**base)


# layers --------------------------------------------------------------------

def test_conv_matches_hankel_conv2d(rng):
    x = rng.standard_normal((2, 7, 6, 3))
    w = rng.standard_normal((3, 3, 3, 5))
    y, _ = layers.conv_forward(x, w)
    bank = hankel.FilterBank(w.transpose(0, 3, 1, 2))
    for n in range(2):
        np.testing.assert_allclose(y[n].transpose(2, 0, 1), hankel.conv2d(x[n].transpose(2, 0, 1), bank), atol=1e-12)


def test_conv_is_patch_matrix_product(rng):
    x = rng.standard_normal((1, 5, 5, 2))
    w = rng.standard_normal((2, 3, 3, 4))
    y, _ = layers.conv_forward(x, w, bias=np.arange(4.0))
    cols = layers.im2col(x, 3, 3)
    np.testing.assert_allclose(y, cols @ w.transpose(1, 2, 0, 3).reshape(18, 4) + np.arange(4.0), atol=1e-12)


def test_conv_backward_is_adjoint(rng):
    x = rng.standard_normal((2, 6, 5, 3))
    w = rng.standard_normal((3, 3, 3, 2))
    dy = rng.standard_normal((2, 6, 5, 2))
    y, cache = layers.conv_forward(x, w)
    dx, dw, db = layers.conv_backward(dy, cache, w, True)
    assert np.isclose(np.sum(y * dy), np.sum(x * dx))
    w2 = rng.standard_normal(w.shape)
    assert np.isclose(np.sum(layers.conv_forward(x, w2)[0] * dy), np.sum(w2 * dw))
    np.testing.assert_allclose(db, dy.sum(axis=(0, 1, 2)))


def test_batchnorm_backward_matches_differences(rng):
    x = rng.standard_normal((3, 2, 2, 2))
    gamma, beta = rng.uniform(0.5, 1.5, 2), rng.standard_normal(2)
    dy = rng.standard_normal(x.shape)
    _, cache, _, _ = layers.bn_forward_train(x, gamma, beta)
    dx, dgamma, dbeta = layers.bn_backward(dy, cache)
    eps = 1e-6
    for idx in [(0, 0, 0, 0), (2, 1, 0, 1), (1, 1, 1, 0)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        fd = (np.sum(layers.bn_forward_train(xp, gamma, beta)[0] * dy)
              - np.sum(layers.bn_forward_train(xm, gamma, beta)[0] * dy)) / (2 * eps)
        assert np.isclose(dx[idx], fd, rtol=1e-5, atol=1e-8)
    xhat = (x - x.mean(axis=(0, 1, 2))) / np.sqrt(x.var(axis=(0, 1, 2)) + layers.BN_EPS)
    np.testing.assert_allclose(dgamma, np.sum(dy * xhat, axis=(0, 1, 2)))
    np.testing.assert_allclose(dbeta, np.sum(dy, axis=(0, 1, 2)))


def test_relu_round_trip():
    y, mask = layers.relu_forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(y, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(layers.relu_backward(np.ones(3), mask), [0.0, 0.0, 1.0])


# network -------------------------------------------------------------------

def test_layout_and_full_size_config():
    big = ArchConfig.full_size()
    assert (big.channels, big.module_count, big.patch) == (128, 6, (55, 55))
    assert ArchConfig.from_config(SMALL.to_config()) == SMALL
    names = [n for n, _ in network.parameter_layout(SMALL)]
    assert names[0] == "in.w" and names[-1] == "out.b" and "m0.byp.b" in names
    with pytest.raises(InvalidArgumentError):
        ArchConfig(kernel=(2, 3))


def test_zero_output_layer_is_identity(rng):
    p = init_params(SMALL, seed=1, std=0.3).with_zero_output()
    x = rng.standard_normal((2, 3, 9, 9))
    np.testing.assert_array_equal(network.forward(p, x), x)


def test_network_is_nonlinear(rng):
    p = init_params(SMALL, seed=1, std=0.3)
    x = rng.standard_normal((3, 9, 9))
    # zero shifts make the net positively homogeneous, so negation is the witness
    r1 = network.estimate_residual(p, x)
    r2 = network.estimate_residual(p, -x)
    assert np.linalg.norm(r2 + r1) > 1e-2 * np.linalg.norm(r1)


def test_deterministic_initialisation_and_forward(rng):
    a, b = init_params(SMALL, seed=5), init_params(SMALL, seed=5)
    assert a.digest() == b.digest()
    assert a.digest() != init_params(SMALL, seed=6).digest()
    x = rng.standard_normal((3, 9, 9))
    np.testing.assert_array_equal(network.forward(a, x), network.forward(b, x))


def test_loss_vanishes_at_trunk_output(rng):
    p = init_params(SMALL, seed=2, std=0.3)
    x = rng.standard_normal((2, 3, 9, 9))
    target = network.estimate_residual(p, x, train=True)
    res = network.loss_and_grad(p, x, target)
    assert res.loss < 1e-25
    assert max(np.max(np.abs(g)) for g in res.grads.values()) < 1e-10


@pytest.mark.parametrize("factor", [1.0, 2.0])
def test_output_bias_gradient_closed_form(rng, factor):
    p = init_params(SMALL, seed=3, std=0.3)
    p.input_scale = 1.7
    x = rng.standard_normal((2, 3, 9, 9))
    t = factor * rng.standard_normal(x.shape)
    res = network.loss_and_grad(p, x, t)
    diff = p.input_scale * (network.estimate_residual(p, x, train=True) - t)
    assert res.loss == pytest.approx(np.mean(diff ** 2))
    np.testing.assert_allclose(res.grads["out.b"], 2 * diff.sum(axis=(0, 2, 3)) / diff.size, atol=1e-14)


def test_gradient_check_small_net():
    arch = ArchConfig(in_bands=2, channels=3, module_count=1, convs_per_module=2, patch=(5, 5))
    rep = verification.gradient_check(7, arch)
    assert rep.checked > 0.5 * (rep.checked + rep.excluded_kinks)
    assert rep.max_relative_error < 1e-4


def test_non_finite_layer_is_named(rng):
    p = init_params(SMALL, seed=0)
    p.weights["m0.c1.w"][0, 0, 0, 0] = np.nan
    with pytest.raises(NumericFailureError, match="m0.c1"):
        network.forward(p, rng.standard_normal((3, 9, 9)))


def test_band_count_mismatch(rng):
    with pytest.raises(InvalidArgumentError):
        network.forward(init_params(SMALL), rng.standard_normal((4, 9, 9)))


def test_module_features_shapes(rng):
    feats = network.module_features(init_params(SMALL), rng.standard_normal((3, 10, 11)))
    assert len(feats) == 2 and feats[1].shape == (4, 10, 11)


# inference -------------------------------------------------------------------

def test_identity_network_reproduces_image(t3, rng):
    p = init_params(SMALL, seed=0).with_zero_output()
    img = rng.random((16, 16))
    out = infer_image(p, img, t3, PatchConfig(stride=4))
    np.testing.assert_allclose(out.data, img, atol=1e-12)
    np.testing.assert_allclose(NetworkDenoiser(p, t3, PatchConfig(stride=4))(img).data, img, atol=1e-12)


def test_inference_band_mismatch(rng):
    with pytest.raises(InvalidArgumentError):
        infer_image(init_params(SMALL), rng.random((32, 32)), directional.standard_transform())


# training ----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(stages=("stage2", "stage1"))
    with pytest.raises(InvalidArgumentError):
        TrainConfig(lr_initial=0.001, lr_final=0.01)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(clip=0.0)
    cfg = TrainConfig(stages=("stage1", "stage3"))
    assert TrainConfig.from_config(cfg.to_config()) == cfg


def test_log_linear_schedule():
    cfg = TrainConfig(lr_initial=0.1, lr_final=0.001)
    assert learning_rate(cfg, 0, 11) == pytest.approx(0.1)
    assert learning_rate(cfg, 10, 11) == pytest.approx(0.001)
    assert learning_rate(cfg, 5, 11) == pytest.approx(0.01)


def test_input_scale_normalises_targets(data, t3):
    p = calibrate_input_scale(init_params(SMALL), data, t3)
    bands = directional.forward_batch(data.low - data.routine, t3)
    assert np.std(bands * p.input_scale) == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        calibrate_input_scale(init_params(SMALL), TrainingData(data.routine, data.routine), t3)


def test_sample_pairs_inputs_with_matching_targets(t3):
    rng = np.random.default_rng(4)
    low = rng.random((3, 16, 16))
    tr = Trainer(init_params(SMALL), TrainingData(low, 0.5 * low), t3, tiny_cfg(batch_size=6))
    s = tr.sample(tr._pool("stage1"))
    assert s.inputs.shape == (6, 3, 9, 9) and s.tags == ("DB0",) * 6
    # clean = input / 2 under every flip and location, so the residual target is half the input
    np.testing.assert_allclose(s.targets, 0.5 * s.inputs, atol=1e-12)


def test_overfits_a_fixed_batch(data, t3):
    arch = ArchConfig(in_bands=3, channels=8, module_count=1, convs_per_module=2, patch=(9, 9))
    cfg = TrainConfig(lr_initial=0.03, lr_final=0.03, lr_decay="constant", clip=1.0, batch_size=2)
    tr = Trainer(init_params(arch, seed=0, std=0.1), data, t3, cfg)
    s = tr.sample(tr._pool("stage1"))
    first = tr.train_step(s)
    for _ in range(499):
        last = tr.train_step(s)
    assert last <= first / 100


def test_identity_pairs_shrink_residual(data, t3):
    p = init_params(SMALL, seed=0, std=0.3)
    tr = Trainer(p, data, t3, tiny_cfg(clip=1.0, lr_initial=0.01, lr_final=0.01, lr_decay="constant"))
    x = directional.forward_batch(data.routine[:2], t3)[:, :, :9, :9]
    s = TrainingSample(x, np.zeros_like(x), ("identity", "identity"))
    before = np.linalg.norm(network.estimate_residual(p, x, train=True))
    for _ in range(100):
        tr.train_step(s)
    after = np.linalg.norm(network.estimate_residual(p, x, train=True))
    assert after < 0.1 * before


def test_clipped_update_is_bounded(data, t3):
    p = init_params(SMALL, seed=0, std=0.3)
    before = {k: v.copy() for k, v in p.weights.items()}
    tr = Trainer(p, data, t3, tiny_cfg(lr_initial=0.1, lr_final=0.1, lr_decay="constant", clip=1e-3, momentum=0.0))
    tr.train_step(tr.sample(tr._pool("stage1")))
    steps = np.concatenate([np.abs(p.weights[k] - before[k]).ravel() for k in before])
    assert steps.max() <= 0.1 * 1e-3 * (1 + 1e-12)
    assert steps.max() >= 0.1 * 1e-3 * (1 - 1e-12)


def test_stage_gating_and_consumption(data, t3):
    snapshots = {}

    def record(tr, entry):
        snapshots[entry["step"]] = (entry["stage"], dict(tr.consumed), len(tr.db_sets))

    res = train(init_params(SMALL, seed=0), data, t3, tiny_cfg(), callback=record)
    # four images, batch 2: two steps per epoch, one epoch per stage
    assert [snapshots[i][0] for i in range(6)] == ["stage1"] * 2 + ["stage2"] * 2 + ["stage3"] * 2
    assert snapshots[1][1] == {"DB0": 4, "DBi": 0, "identity": 0}
    assert snapshots[3][1]["identity"] == 0 and snapshots[3][2] == 1
    assert sum(res.consumed.values()) == 12
    assert len(res.losses) == 6 and all(np.isfinite(e["loss"]) for e in res.losses)


def test_skipping_stage_two_never_builds_db(data, t3):
    res = train(init_params(SMALL), data, t3, tiny_cfg(stages=("stage1", "stage3")))
    assert res.consumed["DBi"] == 0
    assert len(res.losses) == 4


def test_divergence_is_reported(data, t3):
    tr = Trainer(init_params(SMALL, seed=0, std=0.3), data, t3, tiny_cfg())
    s = tr.sample(tr._pool("stage1"))
    with pytest.raises(TrainingDivergedError, match="step 0"):
        tr.train_step(TrainingSample(s.inputs, 1e5 * np.ones_like(s.targets), s.tags))


def test_checkpoint_round_trip(tmp_path, rng):
    p = init_params(SMALL, seed=4, std=0.3)
    p.meta["note"] = "x"
    ck = ckpt.Checkpoint(p, {"levels": 1}, None, None, {"k": 1}, {"extra": rng.random((2, 3))})
    ckpt.save_checkpoint(tmp_path / "a.ckpt", ck)
    back = ckpt.load_checkpoint(tmp_path / "a.ckpt")
    assert back.params.digest() == p.digest()  # the saved state was rounded in place
    assert back.params.meta == {"note": "x"} and back.extra == {"k": 1}
    np.testing.assert_array_equal(back.arrays["extra"], ck.arrays["extra"])
    np.testing.assert_array_equal(p.weights["in.w"], p.weights["in.w"].astype(np.float32))


def test_checkpoint_corruption_detected(tmp_path):
    ckpt.save_checkpoint(tmp_path / "a.ckpt", ckpt.Checkpoint(init_params(SMALL)))
    blob = bytearray((tmp_path / "a.ckpt").read_bytes())
    blob[-5] ^= 0xFF
    with pytest.raises(InvalidArgumentError, match="checksum"):
        ckpt.decode_checkpoint(bytes(blob))
    with pytest.raises(InvalidArgumentError):
        ckpt.decode_checkpoint(b"NOTACKPT" + bytes(blob[8:]))
    with pytest.raises(FileNotFoundError):
        ckpt.load_checkpoint(tmp_path / "missing.ckpt")


def test_resume_is_exact(tmp_path, data, t3):
    cfg = tiny_cfg(epochs_stage1=2, epochs_stage2=2, epochs_stage3=1)
    tr = Trainer(calibrate_input_scale(init_params(SMALL, seed=0), data, t3), data, t3, cfg)
    tr.run(max_steps=5)  # stops inside stage 2, after one DB refresh
    ckpt.save_checkpoint(tmp_path / "mid.ckpt", tr.checkpoint())
    straight = tr.run()
    resumed = Trainer.resume(ckpt.load_checkpoint(tmp_path / "mid.ckpt"), data, t3).run()
    assert resumed.params.digest() == straight.params.digest()
    assert resumed.consumed == straight.consumed
    assert [e["loss"] for e in resumed.losses] == [e["loss"] for e in straight.losses]


def test_resume_rejects_other_data(tmp_path, data, t3):
    tr = Trainer(init_params(SMALL), data, t3, tiny_cfg())
    tr.run(max_steps=1)
    other = TrainingData(data.low + 1.0, data.routine)
    with pytest.raises(InvalidArgumentError, match="differ"):
        Trainer.resume(tr.checkpoint(), other, t3)
