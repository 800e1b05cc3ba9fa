"""Inference engine tests: forward, logit division, evaluation, file I/O."""

import numpy as np
import pytest

from flipguard.faults import Protection
from flipguard.formats import FP16, FP32, QFIXED
from flipguard.network import (
    Dataset,
    EvalMode,
    FaultPlan,
    Layer,
    Model,
    evaluate_top1,
    forward,
    forward_logit_division,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    scale_for_storage,
    top1_accuracy,
)
from flipguard.rng import substream

# Frozen 2-layer golden model: logits computed once by straightforward
# per-element evaluation and pinned here.
GOLD_W1 = np.array(
    [[0.25, -0.5, 0.125, 0.75],
     [-0.375, 0.0625, 0.5, -0.25],
     [0.1, 0.2, -0.3, 0.4]],
    dtype=np.float32,
)
GOLD_B1 = np.array([0.05, -0.125, 0.2], dtype=np.float32)
GOLD_W2 = np.array([[0.5, -0.25, 0.6], [-0.15, 0.35, 0.45]], dtype=np.float32)
GOLD_B2 = np.array([0.01, -0.02], dtype=np.float32)
GOLD_X = np.array(
    [[1.0, -2.0, 0.5, 0.25], [-0.5, 0.75, -1.25, 2.0]], dtype=np.float32
)
GOLD_LOGITS = np.array(
    [[0.78499997, -0.2525], [1.3418751, 0.50968754]], dtype=np.float32
)


def _golden_model() -> Model:
    return Model([Layer(GOLD_W1, GOLD_B1, "relu"), Layer(GOLD_W2, GOLD_B2, "none")])


def _random_relu_model(rng, depth, width, classes=10, in_dim=8, bias=True) -> Model:
    dims = [in_dim] + [int(rng.integers(4, width + 1)) for _ in range(depth - 1)] + [classes]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        w = rng.normal(0, 1 / np.sqrt(d_in), size=(d_out, d_in)).astype(np.float32)
        b = rng.normal(0, 0.1, size=d_out).astype(np.float32) if bias else None
        layers.append(Layer(w, b, "relu" if i < len(dims) - 2 else "none"))
    return Model(layers)


class TestForward:
    def test_identity_single_layer(self):
        model = Model([Layer(np.eye(4, dtype=np.float32), None, "none")])
        x = np.array([[1.0, -2.0, 3.5, 0.0]], dtype=np.float32)
        assert np.array_equal(forward(model, x), x)

    def test_golden_logits(self):
        logits = forward(_golden_model(), GOLD_X)
        np.testing.assert_allclose(logits, GOLD_LOGITS, rtol=3e-7, atol=1e-7)

    def test_matches_naive_loop_oracle(self):
        logits = forward(_golden_model(), GOLD_X)
        for s, x in enumerate(GOLD_X):
            hidden = []
            for j in range(3):
                z = float(GOLD_B1[j])
                for k in range(4):
                    z += float(GOLD_W1[j][k]) * float(x[k])
                hidden.append(max(z, 0.0))
            for j in range(2):
                z = float(GOLD_B2[j])
                for k in range(3):
                    z += float(GOLD_W2[j][k]) * hidden[k]
                assert logits[s, j] == pytest.approx(z, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            forward(_golden_model(), np.ones((2, 3), dtype=np.float32))

    def test_model_validation(self):
        with pytest.raises(ValueError, match="compose"):
            Model([Layer(np.ones((3, 4), np.float32), None, "relu"),
                   Layer(np.ones((2, 5), np.float32), None, "none")])
        with pytest.raises(ValueError, match="final layer"):
            Model([Layer(np.ones((3, 4), np.float32), None, "relu")])

    def test_zero_mask_recovery_equals_baseline(self):
        from flipguard.guard import build_guard, protect, recover

        model = _golden_model()
        override = []
        for layer in model.layers:
            guard, exposed = build_guard(layer.weights, FP32, t=1.9999)
            stored = protect(exposed.reshape(layer.weights.shape), guard)
            override.append(recover(stored).astype(np.float32))
        logits = forward(model, GOLD_X, weight_override=override)
        np.testing.assert_allclose(logits, GOLD_LOGITS, rtol=5e-7, atol=5e-7)


class TestLogitDivision:
    def test_unit_constants_identical(self):
        model = _golden_model()
        scaled = scale_for_storage(model, [1.0, 1.0])
        logits, n_div = forward_logit_division(scaled, GOLD_X, [1.0, 1.0])
        assert np.array_equal(logits, forward(model, GOLD_X))
        assert n_div == GOLD_X.shape[0] * 2

    def test_two_layer_no_bias_equivalence(self):
        rng = substream(20, "nobias")
        model = _random_relu_model(rng, depth=2, width=16, bias=False)
        x = rng.normal(0, 1, size=(64, 8)).astype(np.float32)
        scaled = scale_for_storage(model, [2.0, 3.0])
        divided, _ = forward_logit_division(scaled, x, [2.0, 3.0])
        base = forward(model, x)
        scale = np.maximum(np.abs(base).max(axis=1, keepdims=True), 1e-12)
        assert np.max(np.abs(divided - base) / scale) < 1e-5

    def test_division_count_matches_classes_times_batch(self):
        rng = substream(21, "count")
        model = _random_relu_model(rng, depth=3, width=32, classes=10)
        x = rng.normal(0, 1, size=(4, 8)).astype(np.float32)
        scaled = scale_for_storage(model, [2.0, 2.0, 2.0])
        _, n_div = forward_logit_division(scaled, x, [2.0, 2.0, 2.0])
        assert n_div == 40

    def test_positive_homogeneity_of_relu(self):
        rng = substream(22, "homog")
        x = rng.normal(0, 1, size=1000)
        for alpha in (0.5, 2.0, 7.25):
            np.testing.assert_array_equal(
                np.maximum(alpha * x, 0.0), alpha * np.maximum(x, 0.0)
            )

    def test_rejects_non_relu_hidden(self):
        model = Model([Layer(np.ones((3, 4), np.float32), None, "none"),
                       Layer(np.ones((2, 3), np.float32), None, "none")])
        with pytest.raises(ValueError, match="not positively homogeneous"):
            forward_logit_division(model, np.ones((1, 4), np.float32), [2.0, 2.0])

    def test_rejects_nonpositive_constants(self):
        scaled = scale_for_storage(_golden_model(), [1.0, 1.0])
        with pytest.raises(ValueError, match="constants must be positive"):
            forward_logit_division(scaled, GOLD_X, [1.0, -2.0])

    def test_equivalence_ensemble(self):
        # fault-free divided logits track the baseline across random nets
        rng = substream(23, "ensemble")
        agree = 0
        total = 0
        for _ in range(25):
            depth = int(rng.integers(2, 5))
            model = _random_relu_model(rng, depth=depth, width=64)
            constants = rng.uniform(0.5, 6.0, size=depth)
            x = rng.normal(0, 1, size=(200, 8)).astype(np.float32)
            scaled = scale_for_storage(model, constants)
            divided, _ = forward_logit_division(scaled, x, constants)
            base = forward(model, x)
            scale = np.maximum(np.abs(base).max(axis=1, keepdims=True), 1e-12)
            assert np.max(np.abs(divided - base) / scale) < 1e-4
            agree += int(np.sum(np.argmax(divided, 1) == np.argmax(base, 1)))
            total += x.shape[0]
        assert agree / total >= 0.999


@pytest.fixture(scope="module")
def toy():
    rng = substream(30, "toy")
    dims = [6, 24, 24, 4]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        w = rng.normal(0, 1 / np.sqrt(d_in), size=(d_out, d_in)).astype(np.float32)
        b = rng.normal(0, 0.1, size=d_out).astype(np.float32)
        layers.append(Layer(w, b, "relu" if i < len(dims) - 2 else "none"))
    model = Model(layers)
    x = rng.normal(0, 1, size=(300, 6)).astype(np.float32)
    labels = np.argmax(forward(model, x), axis=1)
    return model, Dataset(x, labels)


class TestEvaluate:

    def test_ber_zero_equals_fault_free(self, toy):
        model, ds = toy
        plan = FaultPlan(spec=FP32, ber=0.0, protection=Protection.EXPONENT_MSB,
                         seed=0, mode=EvalMode.BASELINE, t=None)
        res = evaluate_top1(model, ds, plan, rounds=3)
        assert res.mean == top1_accuracy(forward(model, ds.features), ds.labels)
        assert res.std == 0.0
        assert res.mean == 100.0

    def test_single_sample_accuracy_binary(self, toy):
        model, ds = toy
        one = Dataset(ds.features[:1], ds.labels[:1])
        plan = FaultPlan(spec=QFIXED, ber=0.3, protection=Protection.NONE,
                         seed=4, mode=EvalMode.BASELINE, t=None)
        res = evaluate_top1(model, one, plan, rounds=1)
        assert res.mean in (0.0, 100.0)

    def test_determinism(self, toy):
        model, ds = toy
        plan = FaultPlan(spec=QFIXED, ber=1e-2, protection=Protection.NONE,
                         seed=11, mode=EvalMode.RESCALED, t=1.97)
        a = evaluate_top1(model, ds, plan, rounds=4)
        b = evaluate_top1(model, ds, plan, rounds=4)
        assert a == b

    def test_division_count_semantics(self, toy):
        model, ds = toy
        common = dict(spec=FP32, ber=0.0, protection=Protection.EXPONENT_MSB, seed=0)
        rescaled = evaluate_top1(
            model, ds, FaultPlan(mode=EvalMode.RESCALED, t=1.9999, **common), 1
        )
        divided = evaluate_top1(
            model, ds, FaultPlan(mode=EvalMode.LOGIT_DIVISION, t=1.9999,
                                 batch_size=50, **common), 1
        )
        assert rescaled.division_count == model.n_weights
        assert divided.division_count == model.n_classes * 50
        assert divided.division_count < rescaled.division_count

    def test_logit_division_under_faults_matches_rescaled_argmax_ber0(self, toy):
        model, ds = toy
        common = dict(spec=FP32, ber=0.0, protection=Protection.EXPONENT_MSB, seed=0)
        a = evaluate_top1(model, ds, FaultPlan(mode=EvalMode.RESCALED, t=1.9999, **common), 1)
        b = evaluate_top1(model, ds, FaultPlan(mode=EvalMode.LOGIT_DIVISION, t=1.9999, **common), 1)
        assert a.mean == pytest.approx(b.mean, abs=0.5)

    def test_guard_beats_baseline_on_toy(self, toy):
        model, ds = toy
        common = dict(spec=QFIXED, ber=1e-3, protection=Protection.NONE, seed=1)
        base = evaluate_top1(model, ds, FaultPlan(mode=EvalMode.RESCALED, t=None, **common), 10)
        guard = evaluate_top1(model, ds, FaultPlan(mode=EvalMode.RESCALED, t=1.97, **common), 10)
        assert guard.mean >= base.mean

    def test_bias_fault_flag(self, toy):
        model, ds = toy
        plan = FaultPlan(spec=QFIXED, ber=0.05, protection=Protection.NONE,
                         seed=2, mode=EvalMode.BASELINE, t=None, inject_bias=True)
        plain = FaultPlan(spec=QFIXED, ber=0.05, protection=Protection.NONE,
                          seed=2, mode=EvalMode.BASELINE, t=None)
        assert evaluate_top1(model, ds, plan, 2) != evaluate_top1(model, ds, plain, 2)


class TestModelIO:
    def test_roundtrip_bit_identical(self, tmp_path):
        model = _golden_model()
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        for a, b in zip(model.layers, back.layers):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)
            assert a.activation == b.activation

    def test_truncated_weights(self, tmp_path):
        save_model(_golden_model(), tmp_path / "m.json")
        blob = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "m.bin").write_bytes(blob[:-4])
        with pytest.raises(ValueError, match="shape mismatch"):
            load_model(tmp_path / "m.json")

    def test_corrupted_weights(self, tmp_path):
        save_model(_golden_model(), tmp_path / "m.json")
        blob = bytearray((tmp_path / "m.bin").read_bytes())
        blob[0] ^= 0xFF
        (tmp_path / "m.bin").write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="checksum failure"):
            load_model(tmp_path / "m.json")

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "m.json").write_text("not json at all")
        with pytest.raises(ValueError, match="malformed manifest"):
            load_model(tmp_path / "m.json")

    def test_dataset_roundtrip(self, tmp_path):
        rng = substream(31, "ds")
        ds = Dataset(rng.normal(0, 1, size=(40, 7)).astype(np.float32),
                     rng.integers(0, 10, size=40))
        save_dataset(ds, tmp_path / "d.ds")
        back = load_dataset(tmp_path / "d.ds")
        assert np.array_equal(ds.features, back.features)
        assert np.array_equal(ds.labels, back.labels)

    def test_dataset_truncated(self, tmp_path):
        rng = substream(32, "ds2")
        ds = Dataset(rng.normal(0, 1, size=(8, 3)).astype(np.float32),
                     rng.integers(0, 2, size=8))
        save_dataset(ds, tmp_path / "d.ds")
        blob = (tmp_path / "d.ds").read_bytes()
        (tmp_path / "d.ds").write_bytes(blob[:-2])
        with pytest.raises(ValueError, match="shape mismatch"):
            load_dataset(tmp_path / "d.ds")


def test_shipped_fixture_loads():
    from flipguard import assets

    model = load_model(assets.toy_model_path())
    ds = load_dataset(assets.toy_dataset_path())
    assert model.n_classes == 10
    assert len(ds) >= 1000
    acc = top1_accuracy(forward(model, ds.features), ds.labels)
    assert acc >= 90.0
