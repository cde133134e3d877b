import numpy as np
import pytest

from mcm import ssm, tensor as T
from mcm.errors import ShapeError
from mcm.ssm import (ContinuousSSM, DiscreteSSM, SSMLayer, apply_kernel,
                     build_kernel, discretize, scan_recurrent)
from mcm.tensor import Tensor, finite_diff_check


def random_discrete(seed, channels=8, state_dim=16):
    """A random stable DiscreteSSM (|a_bar| < 1 guaranteed by construction)."""
    rng = np.random.default_rng(seed)
    cont = ContinuousSSM(
        a=-np.exp(rng.normal(0.0, 1.0, (channels, state_dim))),
        b=rng.normal(0.0, 1.0, (channels, state_dim)),
        c=rng.normal(0.0, 1.0, (channels, state_dim)),
        d=rng.normal(0.0, 1.0, channels))
    delta = np.exp(rng.uniform(np.log(1e-2), np.log(1.0), channels))
    return discretize(cont, delta)


def scalar_discrete(a, b, c, d):
    return DiscreteSSM(a_bar=np.array([[a]]), b_bar=np.array([[b]]),
                       c_bar=np.array([[c]]), d_bar=np.array([d]),
                       delta=np.array([1.0]))


class TestDiscretize:
    def test_continuity_limit(self):
        cont = ContinuousSSM(a=np.array([[-1.0]]), b=np.array([[1.0]]),
                             c=np.array([[1.0]]), d=np.array([0.0]))
        d = discretize(cont, np.array([1e-12]))
        assert d.a_bar.data[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert d.b_bar.data[0, 0] == pytest.approx(0.0, abs=1e-9)

    def test_closed_form_log2(self):
        cont = ContinuousSSM(a=np.array([[-1.0]]), b=np.array([[1.0]]),
                             c=np.array([[1.0]]), d=np.array([0.0]))
        d = discretize(cont, np.array([np.log(2.0)]))
        assert d.a_bar.data[0, 0] == pytest.approx(0.5, rel=1e-12)
        assert d.b_bar.data[0, 0] == pytest.approx(0.5, rel=1e-12)

    def test_zero_entry_uses_analytic_limit(self):
        cont = ContinuousSSM(a=np.array([[0.0, -2.0]]), b=np.array([[3.0, 1.0]]),
                             c=np.array([[1.0, 1.0]]), d=np.array([0.0]))
        d = discretize(cont, np.array([0.25]))
        assert d.a_bar.data[0, 0] == pytest.approx(1.0)
        assert d.b_bar.data[0, 0] == pytest.approx(0.25 * 3.0)

    def test_against_ode_integrator(self):
        # oracle: forward-Euler integration of x' = a x + b u with constant u
        rng = np.random.default_rng(11)
        a = -np.exp(rng.normal(size=(1, 4)))
        b = rng.normal(size=(1, 4))
        delta = 0.3
        x0 = rng.normal(size=4)
        u = 0.7

        steps = 200_000
        h = delta / steps
        x = x0.copy()
        for _ in range(steps):
            x = x + h * (a[0] * x + b[0] * u)

        cont = ContinuousSSM(a=a, b=b, c=np.ones((1, 4)), d=np.zeros(1))
        d = discretize(cont, np.array([delta]))
        x1 = d.a_bar.data[0] * x0 + d.b_bar.data[0] * u
        np.testing.assert_allclose(x1, x, rtol=1e-3)

    def test_discrete_stability_invariant(self):
        d = random_discrete(3)
        assert np.all(np.abs(d.a_bar.data) < 1.0)
        assert np.all(d.delta.data > 0.0)


class TestScanRecurrent:
    def test_zero_input(self):
        d = random_discrete(4)
        y = scan_recurrent(d, Tensor(np.zeros((5, 8))))
        np.testing.assert_array_equal(y.data, np.zeros((5, 8)))

    def test_memoryless_when_a_zero(self):
        d = random_discrete(5)
        d = DiscreteSSM(a_bar=np.zeros_like(d.a_bar.data), b_bar=d.b_bar,
                        c_bar=d.c_bar, d_bar=d.d_bar, delta=d.delta)
        u = np.random.default_rng(6).normal(size=(7, 8))
        y = scan_recurrent(d, Tensor(u)).data
        cb = (d.c_bar.data * d.b_bar.data).sum(axis=1)
        np.testing.assert_allclose(y, u * cb + u * d.d_bar.data, rtol=1e-12)

    def test_geometric_impulse_response(self):
        d = scalar_discrete(0.5, 1.0, 1.0, 0.0)
        u = np.array([[1.0], [0.0], [0.0]])
        y = scan_recurrent(d, Tensor(u)).data
        np.testing.assert_allclose(y[:, 0], [1.0, 0.5, 0.25], rtol=1e-15)

    def test_channel_count_checked(self):
        with pytest.raises(ShapeError):
            scan_recurrent(random_discrete(7), Tensor(np.zeros((3, 5))))


class TestKernel:
    def test_nilpotent_taps(self):
        d = random_discrete(8)
        d = DiscreteSSM(a_bar=np.zeros_like(d.a_bar.data), b_bar=d.b_bar,
                        c_bar=d.c_bar, d_bar=d.d_bar, delta=d.delta)
        k = build_kernel(d, 6)
        cb = (d.c_bar.data * d.b_bar.data).sum(axis=1)
        np.testing.assert_allclose(k.taps.data[0], cb, rtol=1e-12)
        np.testing.assert_array_equal(k.taps.data[1:], np.zeros((5, 8)))

    def test_geometric_taps(self):
        k = build_kernel(scalar_discrete(0.5, 1.0, 1.0, 0.0), 5)
        np.testing.assert_allclose(k.taps.data[:, 0],
                                   [1.0, 0.5, 0.25, 0.125, 0.0625], rtol=1e-15)

    def test_taps_equal_impulse_response(self):
        d = random_discrete(9)
        k = build_kernel(d, 12)
        impulse = np.zeros((12, 8))
        impulse[0] = 1.0
        y = scan_recurrent(d, Tensor(impulse)).data
        # the scan includes the passthrough at t=0; taps exclude it
        y[0] -= d.d_bar.data
        np.testing.assert_allclose(k.taps.data, y, atol=1e-12)

    def test_identity_kernel_application(self):
        taps = np.zeros((4, 3))
        taps[0] = 1.0
        k = ssm.SSMKernel(taps=Tensor(taps), passthrough=Tensor(np.zeros(3)))
        u = np.random.default_rng(10).normal(size=(4, 3))
        np.testing.assert_allclose(apply_kernel(k, Tensor(u)).data, u, rtol=1e-15)

    def test_impulse_recovers_taps(self):
        d = random_discrete(12)
        k = build_kernel(d, 9)
        impulse = np.zeros((9, 8))
        impulse[0] = 1.0
        y = apply_kernel(k, Tensor(impulse)).data
        expected = k.taps.data.copy()
        expected[0] += k.passthrough.data
        np.testing.assert_allclose(y, expected, rtol=1e-12)

    def test_length_mismatch(self):
        k = build_kernel(random_discrete(13), 5)
        with pytest.raises(ShapeError):
            apply_kernel(k, Tensor(np.zeros((7, 8))))


class TestDualForm:
    @pytest.mark.parametrize("seed", range(5))
    def test_scan_equals_convolution(self, seed):
        d = random_discrete(100 + seed)
        u = np.random.default_rng(200 + seed).normal(size=(21, 8))
        y_scan = scan_recurrent(d, Tensor(u)).data
        y_conv = apply_kernel(build_kernel(d, 21), Tensor(u)).data
        assert np.max(np.abs(y_scan - y_conv)) < 1e-9

    def test_causality(self):
        d = random_discrete(14)
        u = np.random.default_rng(15).normal(size=(10, 8))
        base = scan_recurrent(d, Tensor(u)).data
        bumped = u.copy()
        bumped[6, 2] += 1.0
        out = scan_recurrent(d, Tensor(bumped)).data
        np.testing.assert_array_equal(out[:6], base[:6])
        assert np.any(out[6:] != base[6:])

    def test_linearity(self):
        d = random_discrete(16)
        rng = np.random.default_rng(17)
        u1, u2 = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
        alpha, beta = 1.3, -0.7
        lhs = scan_recurrent(d, Tensor(alpha * u1 + beta * u2)).data
        rhs = (alpha * scan_recurrent(d, Tensor(u1)).data
               + beta * scan_recurrent(d, Tensor(u2)).data)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_scalar_state_taps_decay_monotonically(self):
        for seed in range(5):
            rng = np.random.default_rng(300 + seed)
            a = float(rng.uniform(-0.95, 0.95))
            k = build_kernel(scalar_discrete(a, 1.3, -0.8, 0.0), 10)
            mags = np.abs(k.taps.data[:, 0])
            assert np.all(np.diff(mags) <= 1e-15)


class TestSSMLayer:
    def test_single_token(self):
        layer = SSMLayer("s", channels=4, state_dim=3, seed=1)
        d = layer.discrete()
        u = np.random.default_rng(18).normal(size=(1, 4))
        y = layer(Tensor(u)).data
        cb = (d.c_bar.data * d.b_bar.data).sum(axis=1)
        np.testing.assert_allclose(y[0], u[0] * cb + u[0] * d.d_bar.data, rtol=1e-12)

    def test_zero_input(self):
        layer = SSMLayer("s", channels=4, seed=2)
        y = layer(Tensor(np.zeros((6, 4)))).data
        np.testing.assert_array_equal(y, np.zeros((6, 4)))

    def test_modes_agree(self):
        u = np.random.default_rng(19).normal(size=(9, 5))
        scan = SSMLayer("s", channels=5, seed=3, mode="scan")(Tensor(u)).data
        conv = SSMLayer("s", channels=5, seed=3, mode="conv")(Tensor(u)).data
        assert np.max(np.abs(scan - conv)) < 1e-9

    @pytest.mark.parametrize("mode", ["scan", "conv"])
    def test_gradients_through_all_parameters(self, mode):
        layer = SSMLayer("s", channels=3, state_dim=4, seed=4, mode=mode)
        u = Tensor(np.random.default_rng(20).normal(size=(5, 3)), requires_grad=True)
        params = layer.parameters() + [u]
        err = finite_diff_check(lambda: T.tsum(layer(u)), params)
        assert err < 1e-4

    def test_seed_reproducibility(self):
        a = SSMLayer("s", channels=4, seed=7)
        b = SSMLayer("s", channels=4, seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.value.data, pb.value.data)
