import math

import numpy as np
import pytest

from fedzip.model import (
    FULL_BATCH,
    Arch,
    LabeledDataset,
    ModelParams,
    forward_loss,
    gradient_check,
    init_random,
    loss_and_grads,
    train_local,
)


def scalar_loss(arrays, x, y):
    """Mean cross-entropy with plain Python floats, layer by layer."""
    arrays = [np.asarray(a, dtype=np.float64).tolist() for a in arrays]
    n_layers = len(arrays) // 2
    total = 0.0
    for row, label in zip(np.asarray(x, dtype=np.float64).tolist(), y):
        h = row
        for li in range(n_layers):
            w, b = arrays[2 * li], arrays[2 * li + 1]
            z = [b[j] + sum(h[i] * w[i][j] for i in range(len(h))) for j in range(len(b))]
            h = [max(v, 0.0) for v in z] if li < n_layers - 1 else z
        m = max(h)
        log_sum = m + math.log(sum(math.exp(v - m) for v in h))
        total += log_sum - h[int(label)]
    return total / len(y)


def fd_gradient(arrays, x, y, eps=1e-5):
    arrays = [a.astype(np.float64) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = scalar_loss(arrays, x, y)
            flat[i] = orig - eps
            minus = scalar_loss(arrays, x, y)
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * eps)
        grads.append(g)
    return grads


def random_batch(rng, n, d, c):
    return LabeledDataset(rng.normal(size=(n, d)).astype(np.float32), rng.integers(0, c, size=n))


class TestInit:
    def test_deterministic(self):
        a, b = init_random(Arch((4, 8, 3)), 5), init_random(Arch((4, 8, 3)), 5)
        assert a.equals(b)
        assert not a.equals(init_random(Arch((4, 8, 3)), 6))

    def test_shapes(self):
        p = init_random(Arch((4, 8, 3)), 0)
        assert [a.shape for a in p.arrays()] == [(4, 8), (8,), (8, 3), (3,)]
        assert [t.kind for t in p.tensors()] == ["weight", "bias", "weight", "bias"]
        assert [t.name for t in p.tensors()] == ["layer0.weight", "layer0.bias", "layer1.weight", "layer1.bias"]
        assert p.num_parameters == 4 * 8 + 8 + 8 * 3 + 3

    def test_weight_statistics(self):
        p = init_random(Arch((100, 100, 2)), 1)
        w = p.arrays()[0].astype(np.float64).reshape(-1)
        assert w.size == 10000
        assert abs(w.mean()) < 3 * w.std() / math.sqrt(w.size)
        assert w.std() == pytest.approx(math.sqrt(2 / 100), rel=0.05)
        assert not p.arrays()[1].any()

    @pytest.mark.parametrize("sizes", [(4,), (4, 0, 3), ()])
    def test_invalid_arch(self, sizes):
        with pytest.raises(ValueError):
            Arch(sizes)

    def test_two_hidden_layers(self):
        p = init_random(Arch.default(5, 3, hidden=(16, 8)), 0)
        assert len(list(p.tensors())) == 6


class TestForwardLoss:
    def test_uniform_logits(self):
        arch = Arch((3, 4, 5))
        p = ModelParams.from_arrays(arch, [np.zeros(a.shape) for a in init_random(arch, 0).arrays()])
        batch = random_batch(np.random.default_rng(0), 10, 3, 5)
        loss, _ = forward_loss(p, batch)
        assert loss == pytest.approx(math.log(5), rel=1e-6)

    def test_one_hot_forcing(self):
        arch = Arch((2, 3))
        w = np.zeros((2, 3), np.float32)
        b = np.array([0, 50, 0], np.float32)
        p = ModelParams.from_arrays(arch, [w, b])
        loss, acc = forward_loss(p, LabeledDataset(np.ones((1, 2), np.float32), np.array([1])))
        assert loss < 1e-20 and acc == 1.0

    def test_matches_scalar_math(self):
        rng = np.random.default_rng(1)
        p = init_random(Arch((4, 6, 3)), 2)
        batch = random_batch(rng, 3, 4, 3)
        loss, acc = forward_loss(p, batch)
        assert loss == pytest.approx(scalar_loss(p.arrays(), batch.features, batch.labels), rel=1e-5)
        assert acc in (0.0, 1 / 3, 2 / 3, 1.0)

    def test_dimension_mismatch(self):
        p = init_random(Arch((4, 3)), 0)
        with pytest.raises(ValueError):
            forward_loss(p, random_batch(np.random.default_rng(0), 5, 3, 3))
        with pytest.raises(ValueError):
            forward_loss(p, LabeledDataset(np.zeros((1, 4), np.float32), np.array([7])))

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2), np.float32), np.array([0, 1]))
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((0, 2), np.float32), np.zeros(0, dtype=int))


class TestTrainLocal:
    def test_zero_lr_is_identity(self):
        p = init_random(Arch((4, 8, 3)), 0)
        out = train_local(p, random_batch(np.random.default_rng(0), 50, 4, 3), 2, 8, 0.0, 1)
        assert out.equals(p)

    def test_input_not_mutated(self):
        p = init_random(Arch((4, 8, 3)), 0)
        before = [a.copy() for a in p.arrays()]
        train_local(p, random_batch(np.random.default_rng(0), 50, 4, 3), 1, 8, 0.5, 1)
        assert all(np.array_equal(a, b) for a, b in zip(before, p.arrays()))

    @pytest.mark.parametrize("seed", range(3))
    def test_full_batch_step_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p = init_random(Arch((3, 5, 3)), seed)
        data = random_batch(rng, 12, 3, 3)
        lr = 0.5
        out = train_local(p, data, 1, FULL_BATCH, lr, 0)
        grads = fd_gradient(p.arrays(), data.features, data.labels)
        delta = np.concatenate([(a.astype(np.float64) - b).ravel() for a, b in zip(p.arrays(), out.arrays())])
        expected = lr * np.concatenate([g.ravel() for g in grads])
        assert np.max(np.abs(delta - expected)) <= 1e-4 * np.max(np.abs(expected))

    def test_batch_larger_than_data_is_full_batch(self):
        rng = np.random.default_rng(3)
        p = init_random(Arch((3, 4, 2)), 0)
        data = random_batch(rng, 10, 3, 2)
        assert train_local(p, data, 1, 10, 0.1, 0).equals(train_local(p, data, 1, FULL_BATCH, 0.1, 5))

    def test_separable_toy_reduces_loss(self):
        rng = np.random.default_rng(4)
        x = np.concatenate([rng.normal(-2, 0.5, (50, 2)), rng.normal(2, 0.5, (50, 2))]).astype(np.float32)
        data = LabeledDataset(x, np.repeat([0, 1], 50))
        p = init_random(Arch((2, 8, 2)), 0)
        before, _ = forward_loss(p, data)
        after, acc = forward_loss(train_local(p, data, 5, 10, 0.1, 0), data)
        assert after < before
        assert acc > 0.95

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        p = init_random(Arch((4, 8, 3)), 0)
        data = random_batch(rng, 37, 4, 3)
        a = train_local(p, data, 2, 5, 0.1, 9)
        assert a.equals(train_local(p, data, 2, 5, 0.1, 9))
        assert not a.equals(train_local(p, data, 2, 5, 0.1, 10))

    def test_trailing_batch_kept(self):
        # with 11 points and B=10 the eleventh point still contributes
        rng = np.random.default_rng(6)
        p = init_random(Arch((2, 2)), 0)
        data = random_batch(rng, 11, 2, 2)
        arrays = [a.astype(np.float64) for a in p.arrays()]
        order = np.random.default_rng(3).permutation(11)
        for idx in (order[:10], order[10:]):
            _, g = loss_and_grads(arrays, data.features[idx].astype(np.float64), data.labels[idx])
            arrays = [a - 0.1 * gi for a, gi in zip(arrays, g)]
        out = train_local(p, data, 1, 10, 0.1, 3)
        assert all(np.allclose(a, b, atol=1e-6) for a, b in zip(out.arrays(), arrays))

    @pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(batch_size=0)])
    def test_invalid(self, kwargs):
        p = init_random(Arch((2, 2)), 0)
        args = dict(params=p, data=random_batch(np.random.default_rng(0), 4, 2, 2),
                    epochs=1, batch_size=2, lr=0.1, seed=0)
        args.update(kwargs)
        with pytest.raises(ValueError):
            train_local(**args)


class TestGradientCheck:
    def test_small_model(self):
        rng = np.random.default_rng(7)
        p = init_random(Arch((4, 6, 3)), 1)
        assert gradient_check(p, random_batch(rng, 5, 4, 3)) < 1e-4

    def test_backprop_matches_scalar_finite_differences(self):
        rng = np.random.default_rng(8)
        p = init_random(Arch((3, 4, 2)), 2)
        data = random_batch(rng, 4, 3, 2)
        arrays = [a.astype(np.float64) for a in p.arrays()]
        _, analytic = loss_and_grads(arrays, data.features.astype(np.float64), data.labels)
        for g, fd in zip(analytic, fd_gradient(p.arrays(), data.features, data.labels)):
            assert np.allclose(g, fd, rtol=1e-5, atol=1e-8)

    def test_zero_input_zero_weights(self):
        arch = Arch((3, 4, 2))
        p = ModelParams.from_arrays(arch, [np.zeros(a.shape) for a in init_random(arch, 0).arrays()])
        x = np.zeros((5, 3), np.float32)
        _, grads = loss_and_grads(p.arrays(), x, np.array([0, 1, 0, 1, 1]))
        assert not grads[0].any() and not grads[2].any()
        assert gradient_check(p, LabeledDataset(x, np.array([0, 1, 0, 1, 1]))) < 1e-4

    def test_epsilon_sweep_on_smooth_region(self):
        # positive inputs and weights keep every ReLU active, so the loss is smooth
        rng = np.random.default_rng(9)
        arch = Arch((3, 4, 3))
        arrays = [np.abs(rng.normal(size=s)).astype(np.float32) * 0.5
                  for s in [(3, 4), (4,), (4, 3), (3,)]]
        arrays[2] = rng.normal(size=(4, 3)).astype(np.float32)
        p = ModelParams.from_arrays(arch, arrays)
        batch = LabeledDataset(np.abs(rng.normal(size=(6, 3))).astype(np.float32), rng.integers(0, 3, 6))
        errs = [gradient_check(p, batch, eps) for eps in (1e-2, 1e-3, 1e-4)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-6

    def test_rejects_bad_epsilon(self):
        p = init_random(Arch((2, 2)), 0)
        with pytest.raises(ValueError):
            gradient_check(p, random_batch(np.random.default_rng(0), 2, 2, 2), 0)
