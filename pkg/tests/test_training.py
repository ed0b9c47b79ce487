"""Optimizer, schedule, streams, epoch loop, and checkpoint round-trips."""

import math

import numpy as np
import pytest

from randlab.data import BlobSpec, assign_rnd_labels, gen_blobs
from randlab.errors import ConfigError, TrainingDiverged
from randlab.heads import build_multihead
from randlab.network import build, toy_mlp
from randlab.tensor import Tensor
from randlab.training import (
    MetricsRecord,
    RngStreams,
    Schedule,
    SgdOptimizer,
    augment_flip,
    cosine_lr,
    load_checkpoint,
    make_optimizers,
    named_model_params,
    restore_checkpoint,
    save_checkpoint,
    train_epoch,
    TrainSettings,
    evaluate_class_accuracy,
)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestRngStreams:
    def test_streams_independent(self):
        streams = RngStreams(42)
        first = streams.stream("dropout").random(4).copy()
        streams.stream("data_order").random(1000)
        streams2 = RngStreams(42)
        streams2.stream("dropout").random(0)  # untouched
        np.testing.assert_array_equal(streams2.stream("dropout").random(4), first)

    def test_named_seed_map(self):
        seeds = {name: i for i, name in enumerate(("init_base", "init_heads", "data_order", "dropout", "rnd_labels", "augment"))}
        streams = RngStreams(seeds)
        assert streams.seeds["dropout"] == 3

    def test_unknown_stream_rejected(self):
        with pytest.raises(ConfigError):
            RngStreams({"init_base": 1})

    def test_derive_does_not_advance_parent(self):
        streams = RngStreams(7)
        before = streams.stream("init_heads").bit_generator.state["state"]["state"]
        streams.derive("init_heads", 3).random(100)
        after = streams.stream("init_heads").bit_generator.state["state"]["state"]
        assert before == after

    def test_state_round_trip(self):
        streams = RngStreams(1)
        streams.stream("data_order").random(17)
        state = streams.state()
        expected = streams.stream("data_order").random(5)
        streams.restore(state)
        np.testing.assert_array_equal(streams.stream("data_order").random(5), expected)


class TestSgd:
    def test_plain_gradient_descent(self):
        w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = SgdOptimizer({"x.w": w}, momentum=0.0, weight_decay=0.0)
        w.grad = np.array([0.5, 0.5])
        opt.step(0.1)
        np.testing.assert_allclose(w.data, [0.95, -2.05])

    def test_zero_gradient_no_motion(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        opt = SgdOptimizer({"x.w": w})
        w.grad = np.zeros(1)
        opt.step(0.5)
        assert w.data[0] == 1.0

    def test_quadratic_converges_like_recurrence(self):
        # f(w) = w^2; the 2-term momentum recurrence simulated independently.
        # Eigenvalue modulus of the (w, v) system is sqrt(0.9), so after 100
        # steps the envelope is ~5e-3; the recurrence itself is the oracle.
        w = Tensor(np.array([1.0]), requires_grad=True)
        opt = SgdOptimizer({"x.w": w}, momentum=0.9, weight_decay=0.0)
        w_ref, v_ref = 1.0, 0.0
        for _ in range(100):
            w.grad = 2.0 * w.data
            opt.step(0.1)
            v_ref = 0.9 * v_ref + 2.0 * w_ref
            w_ref = w_ref - 0.1 * v_ref
            assert abs(w.data[0] - w_ref) < 1e-15
        assert abs(w.data[0]) < 1e-2
        assert w.data[0] == pytest.approx(w_ref, abs=0)

    def test_weight_decay_skips_biases(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        b = Tensor(np.array([1.0]), requires_grad=True)
        opt = SgdOptimizer({"l.w": w, "l.b": b}, momentum=0.0, weight_decay=0.1)
        w.grad = np.zeros(1)
        b.grad = np.zeros(1)
        opt.step(1.0)
        assert w.data[0] == pytest.approx(0.9)
        assert b.data[0] == 1.0

    def test_non_finite_gradient_aborts(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        opt = SgdOptimizer({"x.w": w})
        w.grad = np.array([np.nan])
        with pytest.raises(TrainingDiverged):
            opt.step(0.1)


class TestCosineSchedule:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 0.5) == 0.5
        assert cosine_lr(100, 100, 0.5) == pytest.approx(0.0, abs=1e-16)
        assert cosine_lr(50, 100, 0.5) == pytest.approx(0.25)

    def test_monotone_non_increasing(self):
        lrs = [cosine_lr(t, 500, 0.1) for t in range(501)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            cosine_lr(101, 100, 0.5)


class TestAugmentFlip:
    def test_double_forced_flip_is_identity(self):
        x = rng(1).normal(size=(3, 1, 4, 4))
        np.testing.assert_array_equal(augment_flip(augment_flip(x, force=True), force=True), x)

    def test_force_off_is_identity(self):
        x = rng(2).normal(size=(2, 1, 4, 4))
        np.testing.assert_array_equal(augment_flip(x, force=False), x)

    def test_flip_rate_monte_carlo(self):
        x = np.zeros((10_000, 1, 1, 2))
        x[:, 0, 0, 0] = 1.0
        flipped = augment_flip(x, rng(3))
        rate = (flipped[:, 0, 0, 1] == 1.0).mean()
        assert abs(rate - 0.5) < 0.02


def blob_run(seed=0, n_classes=4, per_class=16, n_rnd=2):
    train, test = gen_blobs(BlobSpec(n_classes, per_class, 16, 8, std=0.5, seed=11))
    streams = RngStreams(seed)
    s = assign_rnd_labels(len(train), n_rnd, streams.stream("rnd_labels"))
    return train.with_rnd_labels(s), test, streams


def run_epochs(model, train, test, settings, streams, epochs):
    opts = make_optimizers(model, settings)
    steps_per_epoch = math.ceil(len(train) / settings.batch_size)
    schedule = Schedule(steps_per_epoch * settings.epochs, settings.base_lr)
    step = 0
    records = []
    for epoch in range(epochs):
        record, step = train_epoch(model, train, test, settings, opts, schedule, streams, epoch, step)
        records.append(record)
    return records, opts


class TestTrainEpoch:
    def test_step_count_per_epoch(self):
        train, test, streams = blob_run()
        spec = toy_mlp(8, 4, hidden=(16, 8))
        model = build_multihead(spec, 1, 4, 2, streams.stream("init_base"), streams.stream("init_heads"))
        settings = TrainSettings(variant="multihead", epochs=1, batch_size=16)
        records, _ = run_epochs(model, train, test, settings, streams, 1)
        # 64 samples / batch 16 -> 4 optimizer steps; schedule hits step 4 of 4
        assert records[0].lr == pytest.approx(cosine_lr(3, 4, 0.1))

    def test_determinism_bitwise(self):
        outs = []
        for _ in range(2):
            train, test, streams = blob_run(seed=5)
            spec = toy_mlp(8, 4, hidden=(16, 8))
            model = build_multihead(spec, 1, 4, 2, streams.stream("init_base"), streams.stream("init_heads"))
            settings = TrainSettings(variant="multihead", epochs=3)
            records, _ = run_epochs(model, train, test, settings, streams, 3)
            outs.append((records, named_model_params(model)))
        for ra, rb in zip(outs[0][0], outs[1][0]):
            assert ra == rb
        for pa, pb in zip(outs[0][1].values(), outs[1][1].values()):
            assert np.array_equal(pa.data, pb.data)

    def test_lambda_zero_isolation_bitwise(self):
        """Baseline path untouched by attached heads when the regularizer is off."""
        train, test, streams_a = blob_run(seed=9)
        spec = toy_mlp(8, 4, hidden=(16, 8))
        settings = TrainSettings(variant="multihead", reg_weight=0.0, epochs=5)

        multihead = build_multihead(spec, 1, 4, 2, streams_a.stream("init_base"), streams_a.stream("init_heads"))
        run_epochs(multihead, train, test, settings, streams_a, 5)

        train_b, test_b, streams_b = blob_run(seed=9)
        baseline = build(spec, streams_b.stream("init_base"))
        base_settings = TrainSettings(variant="baseline", epochs=5)
        run_epochs(baseline, train_b, test_b, base_settings, streams_b, 5)

        base_ordered = list(baseline.named_params().values())
        headed_ordered = list(multihead.feature_extractor.named_params().values()) + list(
            multihead.class_head.named_params().values()
        )
        assert len(base_ordered) == len(headed_ordered)
        for pa, pb in zip(headed_ordered, base_ordered):
            assert np.array_equal(pa.data, pb.data)

    def test_weight_decay_shrinks_norms(self):
        norms = {}
        for wd in (0.0, 1e-2):
            train, test, streams = blob_run(seed=3)
            spec = toy_mlp(8, 4, hidden=(16, 8))
            model = build_multihead(spec, 1, 4, 2, streams.stream("init_base"), streams.stream("init_heads"))
            settings = TrainSettings(variant="multihead", weight_decay=wd, epochs=10)
            run_epochs(model, train, test, settings, streams, 10)
            norms[wd] = sum(float((p.data**2).sum()) for p in named_model_params(model).values())
        assert norms[1e-2] < norms[0.0]

    def test_non_finite_loss_aborts_epoch(self):
        train, test, streams = blob_run(seed=4)
        spec = toy_mlp(8, 4, hidden=(16, 8))
        model = build_multihead(spec, 1, 4, 2, streams.stream("init_base"), streams.stream("init_heads"))
        model.feature_extractor.params[1]["w"].data[0, 0] = np.nan
        settings = TrainSettings(variant="multihead", epochs=1)
        with pytest.raises(TrainingDiverged):
            run_epochs(model, train, test, settings, streams, 1)

    def test_baseline_record_has_no_rnd_fields(self):
        train, test, streams = blob_run(seed=6)
        model = build(toy_mlp(8, 4, hidden=(16, 8)), streams.stream("init_base"))
        settings = TrainSettings(variant="baseline", epochs=1)
        records, _ = run_epochs(model, train, test, settings, streams, 1)
        assert records[0].rnd_label_acc is None
        assert records[0].rnd_loss is None and records[0].reg_loss is None

    def test_toy_mlp_learns_blobs(self):
        train, test, streams = blob_run(seed=8)
        model = build(toy_mlp(8, 4, hidden=(16, 8)), streams.stream("init_base"))
        settings = TrainSettings(variant="baseline", epochs=60)
        records, _ = run_epochs(model, train, test, settings, streams, 60)
        assert records[-1].train_class_acc >= 0.95


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        train, test, streams = blob_run(seed=12)
        spec = toy_mlp(8, 4, hidden=(16, 8))
        model = build_multihead(spec, 1, 4, 2, streams.stream("init_base"), streams.stream("init_heads"))
        settings = TrainSettings(variant="multihead", epochs=2)
        _, opts = run_epochs(model, train, test, settings, streams, 2)

        path = tmp_path / "checkpoint.bin"
        save_checkpoint(path, model, opts, streams, meta={"epoch": 2})
        snapshot = load_checkpoint(path)
        assert snapshot["meta"]["epoch"] == 2

        # perturb everything, then restore
        for p in named_model_params(model).values():
            p.data += 1.0
        streams.stream("data_order").random(99)
        restore_checkpoint(model, opts, streams, snapshot)

        reloaded = load_checkpoint(path)
        for name, arr in snapshot["arrays"].items():
            np.testing.assert_array_equal(reloaded["arrays"][name], arr)
        for name, p in named_model_params(model).items():
            np.testing.assert_array_equal(p.data, snapshot["arrays"][f"param/{name}"])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"nope")
        with pytest.raises(ConfigError):
            load_checkpoint(path)


class TestEvaluate:
    def test_matches_manual_argmax(self):
        train, test, streams = blob_run(seed=13)
        model = build(toy_mlp(8, 4, hidden=(16, 8)), streams.stream("init_base"))
        acc = evaluate_class_accuracy(model, test)
        x = Tensor(test.inputs)
        manual = (model.forward(x).data.argmax(axis=1) == test.labels).mean()
        assert acc == pytest.approx(manual)
