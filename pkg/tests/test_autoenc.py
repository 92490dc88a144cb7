import math

import numpy as np
import pytest

from _gradcheck import draw_clear_of_kinks, finite_difference_grads, max_relative_error

from clustertrack.core import Detection, Mask
from clustertrack.autoenc import (
    AutoencoderConfig,
    TrainingDiverged,
    adadelta_init,
    adadelta_step,
    backward,
    build_training_set,
    embed,
    embed_batch,
    forward,
    glorot_init,
    load_checkpoint,
    loss,
    loss_and_grads,
    preprocess_mask,
    save_checkpoint,
    train,
)
from clustertrack.autoenc.layers import conv2d, conv_transpose2d
from clustertrack.synthgen import SynthConfig, generate_sequence

TINY = AutoencoderConfig(mask_size=8, channels=1, latent=4, conv_channels=(2, 3))


class TestPreprocess:
    def test_square_input_unchanged(self):
        m = Mask.from_binary(np.ones((32, 32)))
        out = preprocess_mask(m, 32)
        assert np.array_equal(out[:, :, 0], np.ones((32, 32)))

    def test_wide_mask_scaled_and_centered(self):
        # 64 wide x 32 high -> 32x16 content with 8-row zero bands
        m = Mask.from_binary(np.ones((32, 64)))
        out = preprocess_mask(m, 32)
        rows = np.nonzero(out[:, :, 0].any(axis=1))[0]
        assert rows.min() == 8 and rows.max() == 23
        assert out[:, :, 0].sum() == 32 * 16

    def test_nonempty_always(self):
        g = np.zeros((50, 70))
        g[3, 5] = 1
        out = preprocess_mask(Mask.from_binary(g), 16)
        assert out.sum() >= 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            preprocess_mask(Mask.from_binary(np.zeros((4, 4))), 8)

    def test_rgb_support_and_range(self):
        rgb = np.zeros((8, 16, 3))
        rgb[2:6, 3:12] = (0.5, 0.25, 1.0)
        m = Mask(width=16, height=8, channels=3, data=rgb)
        out = preprocess_mask(m, 16)
        assert out.shape == (16, 16, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestForward:
    def test_output_shapes(self):
        p = glorot_init(TINY, seed=1)
        rng = np.random.default_rng(0)
        x_m = rng.random((3, 8, 8, 1))
        x_b = rng.random((3, 4))
        y_m, y_b, code = forward(p, x_m, x_b)
        assert y_m.shape == x_m.shape
        assert y_b.shape == x_b.shape
        assert code.z.shape == (3, 4)
        assert code.f.shape == (3, 8)

    def test_zero_params_give_neutral_outputs(self):
        p = glorot_init(TINY, seed=1)
        for k in p.arrays:
            p.arrays[k] = np.zeros_like(p.arrays[k])
        rng = np.random.default_rng(0)
        y_m, y_b, _ = forward(p, rng.random((2, 8, 8, 1)), rng.random((2, 4)))
        assert np.all(y_b == 0.0)
        assert np.all(y_m == 0.5)

    def test_deterministic(self):
        p = glorot_init(TINY, seed=7)
        rng = np.random.default_rng(1)
        x_m, x_b = rng.random((2, 8, 8, 1)), rng.random((2, 4))
        a = forward(p, x_m, x_b)
        b = forward(p, x_m, x_b)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[2].z, b[2].z)

    def test_mask_values_in_sigmoid_range(self):
        p = glorot_init(TINY, seed=3)
        rng = np.random.default_rng(2)
        y_m, _, _ = forward(p, rng.random((2, 8, 8, 1)), rng.random((2, 4)))
        assert np.all((y_m > 0.0) & (y_m < 1.0))

    def test_shape_mismatch_rejected(self):
        p = glorot_init(TINY, seed=1)
        with pytest.raises(ValueError):
            forward(p, np.zeros((1, 16, 16, 1)), np.zeros((1, 4)))


class TestLoss:
    def test_perfect_reconstruction_zero_s(self):
        p = glorot_init(TINY, seed=2)
        rng = np.random.default_rng(4)
        x_m, x_b = rng.random((2, 8, 8, 1)), rng.random((2, 4))
        y_m, y_b, _ = forward(p, x_m, x_b)
        p.arrays["s_m"] = np.array(0.0)
        p.arrays["s_b"] = np.array(0.0)
        assert loss(p, x_m, x_b, t_m=y_m, t_b=y_b) == pytest.approx(0.0, abs=1e-15)

    def test_perfect_reconstruction_regularizer_only(self):
        p = glorot_init(TINY, seed=2)
        rng = np.random.default_rng(4)
        x_m, x_b = rng.random((2, 8, 8, 1)), rng.random((2, 4))
        y_m, y_b, _ = forward(p, x_m, x_b)
        p.arrays["s_m"] = np.array(0.8)
        p.arrays["s_b"] = np.array(-0.6)
        assert loss(p, x_m, x_b, t_m=y_m, t_b=y_b) == pytest.approx((0.8 - 0.6) / 2)

    def test_s_gradient_at_zero_residual_is_half(self):
        p = glorot_init(TINY, seed=2)
        rng = np.random.default_rng(4)
        x_m, x_b = rng.random((2, 8, 8, 1)), rng.random((2, 4))
        y_m, y_b, _ = forward(p, x_m, x_b)
        _, grads = loss_and_grads(p, x_m, x_b, t_m=y_m, t_b=y_b)
        assert float(grads["s_m"]) == pytest.approx(0.5)
        assert float(grads["s_b"]) == pytest.approx(0.5)

    def test_equal_weight_degeneration(self):
        # frozen s = 0 reduces to the plain average of the two mean squared errors
        p = glorot_init(TINY, seed=5)
        p.arrays["s_m"] = np.array(0.0)
        p.arrays["s_b"] = np.array(0.0)
        rng = np.random.default_rng(6)
        x_m, x_b = rng.random((2, 8, 8, 1)), rng.random((2, 4))
        y_m, y_b, _ = forward(p, x_m, x_b)
        plain = 0.5 * (((y_m - x_m) ** 2).mean() + ((y_b - x_b) ** 2).mean())
        assert loss(p, x_m, x_b) == pytest.approx(plain, abs=1e-12)

    def test_batch_mean_linearity(self):
        p = glorot_init(TINY, seed=8)
        rng = np.random.default_rng(9)
        x_m, x_b = rng.random((2, 8, 8, 1)), rng.random((2, 4))
        doubled = (np.concatenate([x_m, x_m]), np.concatenate([x_b, x_b]))
        base = loss_and_grads(p, x_m, x_b)
        dup = loss_and_grads(p, *doubled)
        assert base[0] == pytest.approx(dup[0])
        for k in base[1]:
            np.testing.assert_allclose(base[1][k], dup[1][k], atol=1e-12)


class TestBackward:
    @pytest.mark.parametrize("branches", ["both", "loc", "shape"])
    def test_matches_finite_differences(self, branches):
        cfg = AutoencoderConfig(mask_size=8, channels=1, latent=4, conv_channels=(2, 3), branches=branches)
        rng = np.random.default_rng(42)
        for _ in range(3):
            p, x_m, x_b = draw_clear_of_kinks(cfg, rng)
            _, analytic = loss_and_grads(p, x_m, x_b)
            numeric = finite_difference_grads(p, x_m, x_b)
            assert max_relative_error(analytic, numeric) < 1e-4

    def test_rgb_channels(self):
        cfg = AutoencoderConfig(mask_size=8, channels=3, latent=4, conv_channels=(2, 3))
        rng = np.random.default_rng(17)
        p, x_m, x_b = draw_clear_of_kinks(cfg, rng)
        _, analytic = loss_and_grads(p, x_m, x_b)
        numeric = finite_difference_grads(p, x_m, x_b)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_zero_residual_weight_grads_vanish(self):
        p = glorot_init(TINY, seed=2)
        rng = np.random.default_rng(4)
        x_m, x_b = rng.random((2, 8, 8, 1)), rng.random((2, 4))
        y_m, y_b, _ = forward(p, x_m, x_b)
        grads = backward(p, x_m, x_b, t_m=y_m, t_b=y_b)
        for name, g in grads.items():
            if name not in ("s_m", "s_b"):
                np.testing.assert_allclose(g, 0.0, atol=1e-12)


class TestAdjointness:
    def test_conv_transpose_is_exact_adjoint(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 8, 8, 3))
        w = rng.standard_normal((3, 3, 3, 5))
        z = rng.standard_normal((2, 4, 4, 5))
        lhs = (conv2d(x, w, np.zeros(5), 2) * z).sum()
        rhs = (x * conv_transpose2d(z, w, np.zeros(3), 2, 8, 8)).sum()
        assert lhs == pytest.approx(rhs)


class TestAdadelta:
    def test_zero_gradient_keeps_params(self):
        p = glorot_init(TINY, seed=1)
        before = {k: v.copy() for k, v in p.arrays.items()}
        st = adadelta_init(p, rho=0.95, eps=1e-6)
        st.sq_grad["fuse_w"] += 0.5
        grads = {k: np.zeros_like(v) for k, v in p.arrays.items()}
        p, st = adadelta_step(st, p, grads)
        for k in before:
            np.testing.assert_array_equal(p.arrays[k], before[k])
        np.testing.assert_allclose(st.sq_grad["fuse_w"], 0.5 * 0.95)

    def test_first_step_closed_form(self):
        p = glorot_init(TINY, seed=1)
        st = adadelta_init(p, rho=0.95, eps=1e-6)
        g = 0.3
        grads = {k: np.full_like(v, g) for k, v in p.arrays.items()}
        before = p.arrays["enc_box_fc_w"].copy()
        p, st = adadelta_step(st, p, grads)
        expected = -math.sqrt(1e-6) / math.sqrt(0.05 * g * g + 1e-6) * g
        np.testing.assert_allclose(p.arrays["enc_box_fc_w"] - before, expected)

    def test_repeated_gradient_step_growth_flattens(self):
        # with a constant gradient the step magnitude rises monotonically
        # while its relative increment decays toward zero
        p = glorot_init(TINY, seed=1)
        st = adadelta_init(p, rho=0.95, eps=1e-6)
        grads = {k: np.full_like(v, 0.1) for k, v in p.arrays.items()}
        steps = []
        last = p.arrays["fuse_b"].copy()
        for _ in range(400):
            p, st = adadelta_step(st, p, grads)
            steps.append(abs(float((p.arrays["fuse_b"] - last)[0])))
            last = p.arrays["fuse_b"].copy()
        diffs = np.diff(steps)
        assert steps[-1] > steps[0]
        assert np.all(diffs > -1e-12)
        assert abs(diffs[-1]) / steps[-1] < 1e-3
        assert abs(diffs[-1]) < abs(diffs[10])

    def test_frozen_parameters_untouched(self):
        p = glorot_init(TINY, seed=1)
        st = adadelta_init(p)
        grads = {k: np.full_like(v, 0.2) for k, v in p.arrays.items()}
        s_before = p.s_m
        p, st = adadelta_step(st, p, grads, frozen=frozenset(("s_m", "s_b")))
        assert p.s_m == s_before


class TestGlorot:
    def test_log_variance_init(self):
        cfg = AutoencoderConfig(mask_size=32, channels=1, latent=32, conv_channels=(16, 16, 32, 32, 64))
        p = glorot_init(cfg, seed=0)
        assert p.s_b == pytest.approx(0.25)
        assert p.s_m == pytest.approx(1.0 / 1024)

    def test_weight_variance(self):
        cfg = AutoencoderConfig(mask_size=8, channels=1, latent=25, conv_channels=(2, 3), box_dim=40)
        p = glorot_init(cfg, seed=12)
        w = p.arrays["enc_box_fc_w"]  # 40 x 25 = 1000 samples
        target = 2.0 / (40 + 25)
        assert abs(w.var() - target) / target < 0.1

    def test_biases_zero(self):
        p = glorot_init(TINY, seed=4)
        for name, arr in p.arrays.items():
            if name.endswith("_b") and arr.shape != ():
                assert np.all(arr == 0.0)

    def test_mask_size_divisibility_enforced(self):
        with pytest.raises(ValueError):
            AutoencoderConfig(mask_size=24, conv_channels=(4, 4, 4, 4))


class TestTraining:
    def make_data(self, n=160, seed=0):
        rng = np.random.default_rng(seed)
        x_m = (rng.random((n, 8, 8, 1)) > 0.6).astype(float)
        x_b = rng.random((n, 4))
        return x_m, x_b

    def test_loss_decreases(self):
        x_m, x_b = self.make_data()
        params, hist = train(x_m, x_b, TINY, epochs=8, batch_size=32, seed=1)
        assert hist[-1] < hist[0]

    def test_determinism(self):
        x_m, x_b = self.make_data()
        p1, h1 = train(x_m, x_b, TINY, epochs=3, batch_size=32, seed=5)
        p2, h2 = train(x_m, x_b, TINY, epochs=3, batch_size=32, seed=5)
        assert h1 == h2
        for k in p1.arrays:
            np.testing.assert_array_equal(p1.arrays[k], p2.arrays[k])

    def test_mtl_off_freezes_s(self):
        x_m, x_b = self.make_data()
        params, _ = train(x_m, x_b, TINY, epochs=2, batch_size=32, seed=1, mtl=False)
        assert params.s_m == 0.0
        assert params.s_b == 0.0

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train(np.zeros((0, 8, 8, 1)), np.zeros((0, 4)), TINY, epochs=1)

    def test_divergence_aborts_with_diagnostic(self):
        x_m, x_b = self.make_data(n=32)
        x_b[3, 2] = np.inf
        with np.errstate(all="ignore"), pytest.raises(TrainingDiverged):
            train(x_m, x_b, TINY, epochs=1, batch_size=32, seed=0)


class TestEmbedding:
    def test_embed_deterministic_and_sized(self):
        seq = generate_sequence(SynthConfig(frame_w=64, frame_h=64, object_size=14, num_frames=10, seed=2))
        cfg = AutoencoderConfig(mask_size=16, latent=8, conv_channels=(4, 4, 8))
        x_m, x_b = build_training_set([seq], cfg)
        params, _ = train(x_m, x_b, cfg, epochs=2, batch_size=32, seed=0)
        det = seq.frames[0].detections[0]
        z1 = embed(params, det, (64, 64))
        z2 = embed(params, det, (64, 64))
        assert z1.shape == (8,)
        np.testing.assert_array_equal(z1, z2)

    def test_copy_has_same_embedding(self):
        seq = generate_sequence(SynthConfig(frame_w=64, frame_h=64, object_size=14, num_frames=5, seed=2))
        cfg = AutoencoderConfig(mask_size=16, latent=8, conv_channels=(4, 4, 8))
        x_m, x_b = build_training_set([seq], cfg)
        params, _ = train(x_m, x_b, cfg, epochs=1, batch_size=32, seed=0)
        det = seq.frames[0].detections[0]
        twin = Detection(
            frame=det.frame, box=det.box, mask=det.mask,
            confidence=det.confidence, class_id=det.class_id, label=None,
        )
        np.testing.assert_array_equal(embed(params, det, (64, 64)), embed(params, twin, (64, 64)))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        p = glorot_init(TINY, seed=9)
        meta = {"embed_dist_max": 0.375, "note": "tiny"}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, p, meta)
        loaded, meta2 = load_checkpoint(path)
        assert meta2 == meta
        assert loaded.config == p.config
        for k in p.arrays:
            np.testing.assert_array_equal(loaded.arrays[k], p.arrays[k])

    def test_magic_validated(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestEmbeddingSeparability:
    def test_intra_track_closer_than_inter_track(self, desk_models):
        # held-out sequence: same-object consecutive embeddings sit closer
        # together than different-object same-frame embeddings
        params, _ = desk_models["both"]
        seq = generate_sequence(SynthConfig(num_frames=80, seed=999))
        dims = (seq.config.frame_w, seq.config.frame_h)
        intra, inter = [], []
        prev = {}
        for fr in seq.frames:
            dets = [d for d in fr.detections if d.mask.area() > 0]
            if not dets:
                prev = {}
                continue
            codes = {d.label: z for d, z in zip(dets, embed_batch(params, dets, dims))}
            for label, z in codes.items():
                if label in prev:
                    intra.append(np.linalg.norm(z - prev[label]))
            labels = sorted(codes)
            for i, a in enumerate(labels):
                for b in labels[i + 1 :]:
                    inter.append(np.linalg.norm(codes[a] - codes[b]))
            prev = codes
        assert np.mean(intra) < np.mean(inter)
