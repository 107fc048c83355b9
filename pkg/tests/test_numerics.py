import math

import numpy as np
import pytest

from sasvfuse import AdamState, ConfigError, Rng, adam_step, cross_entropy, matmul, softmax

from conftest import finite_diff, max_rel_err


# reference recurrence, written out independently of the implementation
def _splitmix64_ref(seed: int, count: int) -> list[int]:
    mask = (1 << 64) - 1
    state = seed & mask
    out = []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), m), m)

    def test_hand_product(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0], [1.0]])
        np.testing.assert_array_equal(matmul(a, b), [[2.0], [4.0]])

    def test_zeros(self):
        m = np.arange(3.0).reshape(3, 1)
        np.testing.assert_array_equal(matmul(np.zeros((2, 3)), m), np.zeros((2, 1)))

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_associative_on_random_triples(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p, q, r, s = rng.integers(1, 7, size=4)
            a = rng.normal(size=(p, q))
            b = rng.normal(size=(q, r))
            c = rng.normal(size=(r, s))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            scale = max(1.0, float(np.abs(left).max()))
            assert float(np.abs(left - right).max()) / scale < 1e-9


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_constant_input(self):
        for c in (-3.0, 0.0, 17.5):
            np.testing.assert_allclose(softmax(np.full(3, c)), np.full(3, 1 / 3),
                                       atol=1e-15)

    def test_exact_ratio(self):
        out = softmax(np.array([math.log(1.0), math.log(3.0)]))
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            softmax(np.array([]))

    def test_sum_and_shift_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            v = rng.normal(size=rng.integers(1, 9)) * 10.0
            out = softmax(v)
            assert abs(out.sum() - 1.0) < 1e-12
            assert (out > 0).all()
            shifted = softmax(v + rng.normal() * 5.0)
            assert float(np.abs(out - shifted).max()) < 1e-12


class TestCrossEntropy:
    def test_uniform(self):
        loss, grad = cross_entropy(np.array([0.0, 0.0]), 0)
        assert abs(loss - math.log(2.0)) < 1e-15
        np.testing.assert_allclose(grad, [-0.5, 0.5])

    def test_saturated(self):
        loss, grad = cross_entropy(np.array([30.0, -30.0]), 0)
        assert loss < 1e-12
        assert float(np.abs(grad).max()) < 1e-12

    def test_exact_value(self):
        loss, _ = cross_entropy(np.array([1.0, 0.0]), 1)
        assert abs(loss - math.log(1.0 + math.e)) < 1e-12

    def test_bad_label(self):
        with pytest.raises(ConfigError):
            cross_entropy(np.array([0.0, 0.0]), 2)

    def test_bad_shape(self):
        with pytest.raises(ConfigError):
            cross_entropy(np.array([0.0, 0.0, 0.0]), 0)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            logits = rng.uniform(-5.0, 5.0, size=2)
            label = int(rng.integers(2))
            _, grad = cross_entropy(logits, label)
            fd = finite_diff(lambda: cross_entropy(logits, label)[0], [logits], h=1e-6)
            assert max_rel_err([grad], fd) < 1e-6


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = [np.array([1.0, -2.0]), np.array([[0.5]])]
        state = AdamState.for_params(p)
        adam_step(state, p, [np.zeros(2), np.zeros((1, 1))])
        np.testing.assert_array_equal(p[0], [1.0, -2.0])
        np.testing.assert_array_equal(p[1], [[0.5]])
        assert state.step == 1

    def test_single_step_hand_computed(self):
        # fresh state, unit gradient: m-hat = v-hat = 1 exactly, so the
        # update is exactly lr / (1 + epsilon)
        p = [np.array([0.0])]
        state = AdamState.for_params(p, lr=1e-4)
        adam_step(state, p, [np.array([1.0])])
        expected = -(1e-4) / (1.0 + 1e-8)
        assert p[0][0] == pytest.approx(expected, rel=1e-14)

    def test_two_zero_steps(self):
        p = [np.array([3.0])]
        state = AdamState.for_params(p)
        adam_step(state, p, [np.array([0.0])])
        adam_step(state, p, [np.array([0.0])])
        assert state.step == 2
        assert p[0][0] == 3.0

    def test_shape_mismatch(self):
        p = [np.zeros(2)]
        state = AdamState.for_params(p)
        with pytest.raises(ConfigError):
            adam_step(state, p, [np.zeros(3)])
        with pytest.raises(ConfigError):
            adam_step(state, p, [np.zeros(2), np.zeros(1)])


class TestRng:
    def test_matches_reference_recurrence(self):
        for seed in (0, 1, 42, 2**63 + 11):
            rng = Rng(seed)
            got = [rng.next_u64() for _ in range(8)]
            assert got == _splitmix64_ref(seed, 8)

    def test_same_seed_same_sequence(self):
        a, b = Rng(1234), Rng(1234)
        for _ in range(200):
            assert a.next_u64() == b.next_u64()
        a, b = Rng(99), Rng(99)
        assert [a.random() for _ in range(50)] == [b.random() for _ in range(50)]
        assert [a.normal() for _ in range(50)] == [b.normal() for _ in range(50)]

    def test_unit_interval(self):
        rng = Rng(5)
        draws = [rng.random() for _ in range(2000)]
        assert all(0.0 <= d < 1.0 for d in draws)
        assert abs(sum(draws) / len(draws) - 0.5) < 0.05

    def test_randint_range(self):
        rng = Rng(6)
        draws = [rng.randint(7) for _ in range(1000)]
        assert set(draws) == set(range(7))
        with pytest.raises(ConfigError):
            rng.randint(0)

    def test_shuffle_is_permutation_and_deterministic(self):
        items = list(range(20))
        a = items.copy()
        Rng(77).shuffle(a)
        b = items.copy()
        Rng(77).shuffle(b)
        assert a == b
        assert sorted(a) == items
        assert a != items  # astronomically unlikely to be identity

    def test_normal_moments(self):
        rng = Rng(8)
        draws = rng.normal_array(4000, mu=2.0, sigma=3.0)
        assert abs(draws.mean() - 2.0) < 0.2
        assert abs(draws.std() - 3.0) < 0.2
