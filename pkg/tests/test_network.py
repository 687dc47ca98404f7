import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semiflat.errors import DimMismatch, KinkHit, KinkNeighborhood, LogisticRange
from semiflat.network import (
    Activation,
    Dataset,
    LossKind,
    NetworkParams,
    backprop,
    fd_gradient,
    fd_hessian,
    forward,
    hessian,
    loss_total,
    output_jacobian,
    sample_losses,
)

from .conftest import random_data, random_net

# reference net and data shared with tools/oracle_values.py
REF_W = [[0.3, -0.7, 0.2], [1.1, 0.4, -0.5]]
REF_V = [[0.8], [-1.3]]
REF_X = [[0.5, -0.25], [-0.9, 0.6], [0.1, 0.2]]
REF_Y = [[0.4], [-0.2], [0.05]]
REF_LOSS = 1.3679253097727685601
REF_GRAD = [
    -0.55675737634310863469, 0.081102319041523064708, 1.7912955110210847488,
    0.40482324216083011821, 0.029811609039497902905, -1.6965583744878118201,
    0.19990420750237250348, -1.5598391218429229097,
]


def ref():
    return NetworkParams("tanh", REF_W, REF_V), Dataset(REF_X, REF_Y)


class TestParams:
    def test_flat_round_trip(self, rng):
        net = random_net(rng, 3, 4, 2)
        again = net.with_flat(net.flat())
        np.testing.assert_array_equal(again.w, net.w)
        np.testing.assert_array_equal(again.v, net.v)
        assert net.n_params == 4 * 4 + 4 * 2

    def test_slices(self, rng):
        net = random_net(rng, 2, 3, 2)
        theta = net.flat()
        np.testing.assert_array_equal(theta[net.w_slice(1)], net.w[1])
        np.testing.assert_array_equal(theta[net.v_slice(2)], net.v[2])

    def test_bad_shapes(self):
        with pytest.raises(DimMismatch):
            NetworkParams("tanh", np.zeros((2, 3)), np.zeros((3, 1)))
        with pytest.raises(DimMismatch):
            NetworkParams("tanh", np.zeros((2, 1)), np.zeros((2, 1)))
        with pytest.raises(DimMismatch):
            NetworkParams("tanh", [[np.inf, 0.0]], [[1.0]])

    def test_frozen_arrays(self, rng):
        net = random_net(rng, 1, 2, 1)
        with pytest.raises(ValueError):
            net.w[0, 0] = 1.0

    def test_logistic_targets(self):
        with pytest.raises(LogisticRange):
            Dataset([[0.0]], [[0.5]], LossKind.LOGISTIC)


class TestForward:
    def test_zero_params(self, rng):
        net = NetworkParams("tanh", np.zeros((3, 3)), np.zeros((3, 2)))
        np.testing.assert_array_equal(forward(net, rng.normal(size=(5, 2))), 0.0)

    def test_tanh_origin(self):
        net = NetworkParams("tanh", [[1.0, 0.0]], [[1.0]])
        assert forward(net, [0.0])[0] == 0.0

    def test_relu_values(self):
        net = NetworkParams("relu", [[1.0, 0.0]], [[2.0]])
        assert forward(net, [3.0])[0] == 6.0
        assert forward(net, [-3.0])[0] == 0.0

    def test_bias_enters_with_minus_one(self):
        net = NetworkParams("relu", [[0.0, -2.0]], [[1.0]])
        assert forward(net, [5.0])[0] == 2.0

    def test_dim_mismatch(self, rng):
        net = random_net(rng, 2, 2, 1)
        with pytest.raises(DimMismatch):
            forward(net, [1.0, 2.0, 3.0])


class TestLoss:
    def test_interpolant_zero(self, rng):
        net = random_net(rng, 2, 3, 2)
        x = rng.normal(size=(4, 2))
        assert loss_total(net, Dataset(x, forward(net, x))) == 0.0

    def test_single_sample(self):
        net = NetworkParams("tanh", np.zeros((1, 2)), np.zeros((1, 1)))
        assert loss_total(net, Dataset([[0.3]], [[2.0]])) == 2.0

    def test_frozen_reference(self):
        net, data = ref()
        assert loss_total(net, data) == pytest.approx(REF_LOSS, rel=1e-14)

    def test_per_sample_loop(self, rng):
        net = random_net(rng, 2, 3, 2)
        data = random_data(rng, 7, 2, 2)
        total = 0.0
        for x, y in zip(data.inputs, data.targets):
            h = np.tanh(net.w[:, :-1] @ x - net.w[:, -1])
            total += 0.5 * float(np.sum((h @ net.v - y) ** 2))
        assert loss_total(net, data) == pytest.approx(total, rel=1e-13)

    def test_logistic(self):
        net = NetworkParams("tanh", [[1.0, 0.0]], [[2.0]])
        data = Dataset([[0.5]], [[1.0]], LossKind.LOGISTIC)
        z = 2.0 * np.tanh(0.5)
        assert loss_total(net, data) == pytest.approx(np.log1p(np.exp(-z)), rel=1e-14)
        assert sample_losses(np.array([[800.0]]), data)[0] == 0.0


class TestGradient:
    def test_frozen_reference(self):
        net, data = ref()
        np.testing.assert_allclose(backprop(net, data).grad, REF_GRAD, rtol=1e-13)

    def test_interpolant(self, rng):
        net = random_net(rng, 2, 3, 1)
        x = rng.normal(size=(6, 2))
        assert np.abs(backprop(net, Dataset(x, forward(net, x))).grad).max() <= 1e-10

    @pytest.mark.parametrize("loss", ["squared", "logistic"])
    def test_matches_fd(self, rng, loss):
        net = random_net(rng, 2, 3, 1)
        x = rng.uniform(-1, 1, size=(8, 2))
        y = (rng.uniform(size=(8, 1)) > 0.5).astype(float)
        data = Dataset(x, y, loss)
        assert np.abs(backprop(net, data).grad - fd_gradient(net, data)).max() <= 1e-6

    def test_fd_second_order(self, rng):
        net = random_net(rng, 1, 2, 1)
        data = random_data(rng, 5, 1, 1)
        exact = backprop(net, data).grad
        e1 = np.abs(fd_gradient(net, data, h=1e-2) - exact).max()
        e2 = np.abs(fd_gradient(net, data, h=5e-3) - exact).max()
        assert 3.5 < e1 / e2 < 4.5

    def test_fd_tiny_weights_linear(self, rng):
        # tanh is nearly the identity here, so the loss is nearly quadratic
        net = random_net(rng, 2, 2, 1, scale=1e-3)
        data = random_data(rng, 5, 2, 1)
        exact = backprop(net, data).grad
        assert np.abs(fd_gradient(net, data) - exact).max() <= 1e-9

    def test_relu_kink(self):
        net = NetworkParams("relu", [[1.0, 0.0]], [[1.0]])
        data = Dataset([[0.0]], [[1.0]])
        with pytest.raises(KinkHit):
            backprop(net, data)
        assert backprop(net, data, allow_kinks=True).grad[0] == 0.0

    def test_relu_scale_invariant_direction(self, rng):
        net = random_net(rng, 2, 3, 1, activation="relu")
        data = random_data(rng, 6, 2, 1)
        jac = output_jacobian(net, data.inputs)
        scaled = output_jacobian(net.replace(w=2.5 * net.w), data.inputs)
        nw = net.w.size
        np.testing.assert_allclose(scaled[:, :, :nw], jac[:, :, :nw], rtol=1e-14)

    @given(st.integers(0, 10**6))
    def test_jacobian_matches_fd(self, seed):
        rng = np.random.default_rng(seed)
        net = random_net(rng, 2, 2, 2)
        x = rng.uniform(-1, 1, size=(3, 2))
        jac = output_jacobian(net, x)
        theta = net.flat()
        h = 1e-6
        for p in range(theta.size):
            e = np.zeros_like(theta)
            e[p] = h
            col = (forward(net.with_flat(theta + e), x) - forward(net.with_flat(theta - e), x)) / (2 * h)
            np.testing.assert_allclose(jac[:, :, p], col, atol=1e-8)


class TestHessian:
    def test_quadratic_surface(self):
        # the loss is quadratic in v, with Hessian sum_nu h h^T for one output
        net = NetworkParams("relu", [[1.0, -5.0], [-2.0, -4.0]], [[1.0], [0.5]])
        data = Dataset([[0.1], [0.2], [0.7]], [[0.0], [1.0], [-1.0]])
        h = np.maximum(np.array([[0.1, 0.2, 0.7]]).T * [1.0, -2.0] + [5.0, 4.0], 0.0)
        nw = net.w.size
        np.testing.assert_allclose(fd_hessian(net, data)[nw:, nw:], h.T @ h, atol=1e-8)
        np.testing.assert_allclose(hessian(net, data)[nw:, nw:], h.T @ h, atol=1e-13)

    def test_analytic_vs_fd(self, rng):
        for _ in range(3):
            net = random_net(rng, 2, 3, 2)
            data = random_data(rng, 6, 2, 2)
            exact = hessian(net, data)
            assert np.abs(fd_hessian(net, data) - exact).max() <= 1e-4 * (1 + np.abs(exact).max())

    def test_logistic_vs_fd(self, rng):
        net = random_net(rng, 1, 2, 1)
        data = Dataset(rng.uniform(-1, 1, (6, 1)), (rng.uniform(size=(6, 1)) > 0.5) * 1.0, "logistic")
        exact = hessian(net, data)
        assert np.abs(fd_hessian(net, data) - exact).max() <= 1e-5 * (1 + np.abs(exact).max())

    def test_dead_relu_block_zero(self):
        net = NetworkParams("relu", [[1.0, 0.5], [0.0, 10.0]], [[1.0], [3.0]])
        data = Dataset([[0.9], [1.0], [-0.2]], [[0.0], [1.0], [2.0]])
        h = fd_hessian(net, data)
        np.testing.assert_array_equal(h[net.w_slice(1), :], 0.0)

    def test_fd_refuses_kink_neighborhood(self):
        net = NetworkParams("relu", [[1.0, 1e-6]], [[1.0]])
        with pytest.raises(KinkNeighborhood):
            fd_hessian(net, Dataset([[0.0]], [[1.0]]))

    def test_symmetric(self, rng):
        h = hessian(random_net(rng, 3, 2, 2), random_data(rng, 4, 3, 2))
        np.testing.assert_array_equal(h, h.T)

    def test_activation_enum(self):
        assert Activation("relu").ddphi(np.array([1.0]))[0] == 0.0
        assert not Activation.RELU.smooth
