import numpy as np
import pytest

from resshift.rng import RandomStream


class TestDeterminism:
    def test_same_path_same_stream(self):
        a = RandomStream(7, "x").normal((100,))
        b = RandomStream(7, "x").normal((100,))
        np.testing.assert_array_equal(a, b)

    def test_different_paths_differ(self):
        a = RandomStream(7, "x").uniform((64,))
        b = RandomStream(7, "y").uniform((64,))
        c = RandomStream(8, "x").uniform((64,))
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_child_is_pure(self):
        root = RandomStream(3)
        before = root.child("sub").uniform((8,))
        root.uniform((1000,))  # consuming the parent must not affect children
        after = root.child("sub").uniform((8,))
        np.testing.assert_array_equal(before, after)

    def test_path_items_typed(self):
        with pytest.raises(TypeError):
            RandomStream(1, 2.5)
        with pytest.raises(TypeError):
            RandomStream(1, True)
        with pytest.raises(ValueError):
            RandomStream()


class TestUniform:
    def test_range_and_shape(self):
        u = RandomStream(0, "u").uniform((1000,))
        assert u.shape == (1000,)
        assert np.all(u >= 0.0) and np.all(u < 1.0)

    def test_scalar_form(self):
        v = RandomStream(0, "u").uniform()
        assert isinstance(v, float)

    def test_bit_construction(self):
        # documented mapping: top 53 bits of the raw word over 2^53
        s = RandomStream(11, "bits")
        raw = s.raw(4)
        expect = (raw >> np.uint64(11)) * 2.0 ** -53
        np.testing.assert_array_equal(RandomStream(11, "bits").uniform((4,)), expect)


class TestNormal:
    def test_box_muller_layout(self):
        # documented construction from consecutive uniform pairs
        u = RandomStream(5, "n").uniform((6,))
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        expect = np.empty(6)
        expect[0::2] = r * np.cos(theta)
        expect[1::2] = r * np.sin(theta)
        got = RandomStream(5, "n").normal((6,))
        np.testing.assert_allclose(got, expect, rtol=0, atol=0)

    def test_odd_count(self):
        z = RandomStream(5, "n").normal((7,))
        assert z.shape == (7,)

    def test_moments(self):
        z = RandomStream(9, "mc").normal((200000,))
        assert abs(z.mean()) < 4.0 / np.sqrt(z.size)
        assert abs(z.std() - 1.0) < 0.01

    def test_multidimensional_row_major_fill(self):
        flat = RandomStream(2, "m").normal((12,))
        grid = RandomStream(2, "m").normal((3, 4))
        np.testing.assert_array_equal(grid.reshape(-1), flat)


class TestIntegers:
    def test_bounds(self):
        k = RandomStream(1, "i").integers(3, 9, (5000,))
        assert k.min() >= 3 and k.max() <= 8

    def test_all_values_hit(self):
        k = RandomStream(1, "i").integers(0, 4, (4000,))
        assert set(np.unique(k)) == {0, 1, 2, 3}

    def test_bad_range(self):
        with pytest.raises(ValueError):
            RandomStream(1).integers(5, 5)


class TestPoisson:
    def test_zero_rate_degenerate(self):
        counts = RandomStream(4, "p").poisson(np.zeros(64))
        assert np.all(counts == 0)

    def test_moments(self):
        lam = 5.0
        k = RandomStream(4, "p").poisson(np.full(100000, lam))
        assert k.mean() == pytest.approx(lam, rel=0.01)
        assert k.var() == pytest.approx(lam, rel=0.05)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            RandomStream(4).poisson(np.array([-0.1]))

    def test_shape_preserved(self):
        k = RandomStream(4, "p").poisson(np.full((3, 5), 2.0))
        assert k.shape == (3, 5)


def test_shuffle_order_is_permutation():
    order = RandomStream(6, "s").shuffle_order(500)
    assert sorted(order.tolist()) == list(range(500))
    again = RandomStream(6, "s").shuffle_order(500)
    np.testing.assert_array_equal(order, again)
