import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segwithu.field import NonFiniteError
from segwithu.head import init_head_params
from segwithu.losses import LossWeights
from segwithu.synth import SynthConfig, _backbone_transforms, boundary_distance, generate_case, generate_split
from segwithu.trainer import (
    TrainConfig,
    adamw_step,
    clip_gradients,
    cosine_lr,
    global_norm,
    init_adam_state,
    collate,
    loss_and_grads,
    train_head,
)

SMALL = SynthConfig(shape=(16, 16), tap_channels=(6, 4))
ZERO = LossWeights(nll=0, ec=0, pair=0, tail=0, trust=0, anchor=0, res=0)


@pytest.fixture(scope="module")
def small_data():
    return generate_split(SMALL, 6, "train"), generate_split(SMALL, 3, "val")


class TestSchedule:
    def test_cosine_examples(self):
        cfg = TrainConfig(max_epochs=200)
        assert cosine_lr(0, cfg) == pytest.approx(1e-3)
        assert cosine_lr(200, cfg) == pytest.approx(3e-4)
        assert cosine_lr(100, cfg) == pytest.approx(6.5e-4)

    def test_monotone_decreasing(self):
        cfg = TrainConfig(max_epochs=50)
        lrs = [cosine_lr(t, cfg) for t in range(51)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_min=1.0, lr_max=0.1)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestClipping:
    def test_below_threshold_unchanged(self):
        g = {"a": np.array([6.0, 0.0])}
        out = clip_gradients(g, 12.0)
        np.testing.assert_array_equal(out["a"], g["a"])

    def test_halved(self):
        g = {"a": np.array([12.0, 0.0]), "b": np.array([[0.0, 12.0 * math.sqrt(3)]])}
        assert global_norm(g) == pytest.approx(24.0)
        out = clip_gradients(g, 12.0)
        for k in g:
            np.testing.assert_allclose(out[k], g[k] / 2)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 100_000), st.floats(0.01, 1e4))
    def test_post_clip_norm(self, seed, scale):
        rng = np.random.default_rng(seed)
        g = {"a": scale * rng.normal(size=5), "b": scale * rng.normal(size=(2, 3))}
        assert global_norm(clip_gradients(g, 12.0)) <= 12.0 + 1e-6


class TestAdamW:
    def test_zero_gradient_no_decay(self):
        cfg = TrainConfig(weight_decay=0.0)
        p, _ = adamw_step({"t": np.array([1.5])}, {"t": np.array([0.0])}, init_adam_state(), 0.1, cfg)
        np.testing.assert_array_equal(p["t"], [1.5])

    def test_first_step(self):
        cfg = TrainConfig(weight_decay=0.0)
        p, state = adamw_step({"t": np.array([1.0])}, {"t": np.array([1.0])}, init_adam_state(), 0.1, cfg)
        assert p["t"][0] == pytest.approx(0.9, abs=1e-7)
        assert state["step"] == 1

    def test_decay_only(self):
        cfg = TrainConfig(weight_decay=0.01)
        p, _ = adamw_step({"t": np.array([1.0])}, {"t": np.array([0.0])}, init_adam_state(), 0.1, cfg)
        assert p["t"][0] == pytest.approx(0.999)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adamw_step({"t": np.zeros(2)}, {"t": np.zeros(3)}, init_adam_state(), 0.1, TrainConfig())


class TestTraining:
    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train_head([], [], TrainConfig(max_epochs=1))

    def test_zero_weights_leave_parameters(self, small_data):
        train, val = small_data
        cfg = TrainConfig(max_epochs=3, weight_decay=0.0, weights=ZERO)
        init = init_head_params(cfg.head, [t.shape[1] for t in train[0].taps], 3, 11)
        params, history = train_head(train, val, cfg, params=init)
        for k in init:
            np.testing.assert_array_equal(params[k], np.asarray(init[k], dtype=np.float32))
        assert history.best_epoch == 0

    def test_deterministic(self, small_data):
        train, val = small_data
        cfg = TrainConfig(max_epochs=2, batch_size=3, seed=4)
        p1, h1 = train_head(train, val, cfg)
        p2, h2 = train_head(train, val, cfg)
        assert h1.records == h2.records and h1.best_epoch == h2.best_epoch
        for k in p1:
            np.testing.assert_array_equal(p1[k], p2[k])

    def test_history_shape(self, small_data):
        train, val = small_data
        _, h = train_head(train, val, TrainConfig(max_epochs=3, early_stop_tolerance=1))
        assert h.column("epoch") == list(range(len(h.records)))
        assert 0 <= h.best_epoch <= h.records[-1]["epoch"]
        assert all(np.isfinite(h.column("loss")))

    def test_frozen_parameters_untouched(self, small_data):
        train, val = small_data
        cfg = TrainConfig(max_epochs=2)
        cfg.head = replace(cfg.head, fixed_sigma=True)
        init = init_head_params(cfg.head, [t.shape[1] for t in train[0].taps], 3, 1)
        params, _ = train_head(train, val, cfg, params=init)
        for k in cfg.head.frozen():
            np.testing.assert_array_equal(params[k], np.asarray(init[k], dtype=np.float32))

    def test_non_finite_loss_aborts(self, small_data):
        train, _ = small_data
        cfg = TrainConfig()
        params = init_head_params(cfg.head, [t.shape[1] for t in train[0].taps], 3, 0)
        taps, z, y = collate(train[:2])
        z = z.astype(np.float64)
        z[0, 0, 0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            loss_and_grads(params, (taps, z, y), cfg, 0)

    def test_validation_improves_on_default_task(self):
        cfg = SynthConfig()
        train, val = generate_split(cfg, 20, "train"), generate_split(cfg, 8, "val")
        _, h = train_head(train, val, TrainConfig(max_epochs=15, early_stop_tolerance=15))
        scores = h.column("val_score")
        assert h.best_epoch > 0 and scores[h.best_epoch] < scores[0]
        assert h.column("loss")[h.best_epoch] <= h.column("loss")[0]


class TestSynth:
    def test_deterministic(self):
        a, b = generate_case(SMALL, 17), generate_case(SMALL, 17)
        assert a.case_id == b.case_id
        for x, y in zip(a.taps + [a.logits, a.labels], b.taps + [b.logits, b.labels]):
            assert x.tobytes() == y.tobytes()

    def test_shapes_and_dtypes(self):
        c = generate_case(SynthConfig(), 0)
        assert c.logits.shape == (1, 3, 32, 32) and c.logits.dtype == np.float32
        assert c.labels.shape == (1, 32, 32) and c.labels.dtype == np.int32
        assert [t.shape for t in c.taps] == [(1, 16, 32, 32), (1, 8, 16, 16)]
        assert c.labels.min() >= 0 and c.labels.max() < 3

    def test_noise_free_has_no_errors(self):
        cfg = SynthConfig(noise=0.0, artifact=0.0)
        for i in range(5):
            c = generate_case(cfg, i)
            np.testing.assert_array_equal(np.argmax(c.logits, axis=1), c.labels)

    def test_backbone_shared_across_cases(self):
        a, b = _backbone_transforms(SMALL), _backbone_transforms(replace(SMALL, noise=0.1))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_error_rate_and_boundary_enrichment(self):
        cfg = SynthConfig()
        near = far = near_n = far_n = 0
        rates = []
        for c in generate_split(cfg, 100, "train"):
            err = (np.argmax(c.logits, axis=1) != c.labels)[0]
            assert 0 < err.sum() < err.size
            rates.append(err.mean())
            d = boundary_distance(c.labels[0])
            near += err[d <= 2].sum()
            near_n += (d <= 2).sum()
            far += err[d > 2].sum()
            far_n += (d > 2).sum()
        assert 0.02 <= np.mean(rates) <= 0.25
        assert (near / near_n) >= 3 * (far / far_n)

    def test_splits(self):
        assert generate_split(SMALL, 0, "test") == []
        ids = [{c.case_id for c in generate_split(SMALL, 5, s)} for s in ("train", "val", "test")]
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
        with pytest.raises(ValueError):
            generate_split(SMALL, 1, "holdout")

    def test_bad_config(self):
        with pytest.raises(ValueError):
            SynthConfig(num_classes=1)
        with pytest.raises(ValueError):
            SynthConfig(shape=(3, 8))
        with pytest.raises(ValueError):
            SynthConfig(noise=-1)
