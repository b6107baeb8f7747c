import numpy as np
import pytest

from icenet import autodiff as ad


def grad_check(build, params, samples=6, seed=1, **kwargs):
    """FD-verify a scalar graph built from named leaf tensors."""

    def compute():
        tensors = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
        loss = build(tensors)
        loss.backward()
        grads = {
            k: t.grad if t.grad is not None else np.zeros_like(t.data)
            for k, t in tensors.items()
        }
        return loss.item(), grads

    return ad.finite_diff_check(
        compute, params, samples_per_param=samples, rng=np.random.default_rng(seed), **kwargs
    )


class TestElementwise:
    def test_relu_forward(self):
        out = ad.relu(ad.Tensor(np.array([-2.0, 0.0, 3.0])))
        assert out.data.tolist() == [0.0, 0.0, 3.0]

    def test_relu_blocks_gradient_at_negative_input(self):
        x = ad.Tensor(np.array([-2.0, 3.0]), requires_grad=True)
        ad.reduce_sum(ad.relu(x)).backward()
        assert x.grad.tolist() == [0.0, 1.0]

    def test_sigmoid_at_zero(self):
        x = ad.Tensor(np.array([0.0]), requires_grad=True)
        out = ad.sigmoid(x)
        assert out.data[0] == 0.5
        ad.reduce_sum(out).backward()
        assert x.grad[0] == 0.25

    def test_xlogx_zero_convention(self):
        x = ad.Tensor(np.array([0.0, 1.0, np.e]), requires_grad=True)
        out = ad.xlogx(x)
        assert out.data[0] == 0.0
        assert out.data[1] == 0.0
        assert out.data[2] == pytest.approx(np.e, rel=1e-15)
        ad.reduce_sum(out).backward()
        assert x.grad[0] == 0.0  # underflow plateau convention
        assert x.grad[2] == pytest.approx(2.0, rel=1e-12)


class TestConv2d:
    def test_all_ones_hand_oracle(self):
        x = ad.Tensor(np.ones((1, 3, 3)))
        w = ad.Tensor(np.ones((1, 1, 3, 3)))
        b = ad.Tensor(np.zeros(1))
        out = ad.conv2d(x, w, b).data[0]
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=float)
        assert np.array_equal(out, expected)

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(3, 6, 7))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(np.zeros(3)))
        assert np.array_equal(out.data, x)

    def test_matches_naive_loops(self, rng):
        x = rng.normal(size=(2, 4, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=(3,))
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        expected = np.zeros((3, 4, 5))
        for o in range(3):
            for r in range(4):
                for col in range(5):
                    acc = b[o]
                    for ci in range(2):
                        for ky in range(3):
                            for kx in range(3):
                                acc += w[o, ci, ky, kx] * padded[ci, r + ky, col + kx]
                    expected[o, r, col] = acc
        got = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
        assert got == pytest.approx(expected, rel=1e-12)

    def test_shape_validation(self):
        x, w, b = ad.Tensor(np.zeros((2, 4, 4))), ad.Tensor(np.zeros((3, 2, 5, 5))), ad.Tensor(np.zeros(3))
        with pytest.raises(ValueError):
            ad.conv2d(x, w, b)
        with pytest.raises(ValueError):
            ad.conv2d(x, ad.Tensor(np.zeros((3, 9, 3, 3))), b)
        with pytest.raises(ValueError):
            ad.conv2d(x, ad.Tensor(np.zeros((3, 2, 3, 3))), ad.Tensor(np.zeros(4)))


class TestGradients:
    """Every primitive passes the finite-difference check."""

    def test_conv2d(self, rng):
        mult = ad.Tensor(rng.normal(size=(4, 5, 5)))
        params = {
            "x": rng.normal(size=(3, 5, 5)),
            "w": rng.normal(size=(4, 3, 3, 3)),
            "b": rng.normal(size=(4,)),
        }
        err = grad_check(
            lambda t: ad.reduce_sum(ad.mul(ad.conv2d(t["x"], t["w"], t["b"]), mult)),
            params,
        )
        assert err < 1e-4

    def test_linear(self, rng):
        params = {"x": rng.normal(size=(3,)), "w": rng.normal(size=(2, 3)), "b": rng.normal(size=(2,))}
        err = grad_check(lambda t: ad.reduce_sum(ad.square(ad.linear(t["x"], t["w"], t["b"]))), params)
        assert err < 1e-4

    def test_sigmoid_affine_square_mean(self, rng):
        params = {"x": rng.normal(size=(9,))}
        err = grad_check(
            lambda t: ad.reduce_mean(ad.square(ad.affine(ad.sigmoid(t["x"]), 3.0, -1.0))),
            params,
        )
        assert err < 1e-4

    def test_relu_excluding_kink(self):
        # A coordinate sitting exactly on the kink is excluded by policy.
        params = {"x": np.array([-1.5, 0.0, 2.0])}
        err = grad_check(
            lambda t: ad.reduce_sum(ad.square(ad.relu(t["x"]))),
            params,
            exclude=lambda name, idx: abs(params[name].reshape(-1)[idx]) < 1e-4,
        )
        assert err < 1e-4

    def test_channel_dot(self, rng):
        params = {"f": rng.normal(size=(6, 4, 4)), "v": rng.normal(size=(6,))}
        err = grad_check(lambda t: ad.reduce_sum(ad.square(ad.channel_dot(t["f"], t["v"]))), params)
        assert err < 1e-4

    def test_pow_fixed_base(self, rng):
        base = rng.uniform(0.05, 1.0, size=(4, 4))
        params = {"e": rng.uniform(0.3, 6.0, size=(4, 4))}
        err = grad_check(lambda t: ad.reduce_sum(ad.square(ad.pow_fixed_base(base, t["e"]))), params)
        assert err < 1e-4

    def test_concat_add_mul(self, rng):
        params = {"a": rng.normal(size=(2, 3, 3)), "b": rng.normal(size=(3, 3, 3))}
        err = grad_check(
            lambda t: ad.reduce_sum(ad.square(ad.concat_channels([t["a"], t["b"]]))),
            params,
        )
        assert err < 1e-4

    def test_reciprocal_xlogx(self, rng):
        params = {"p": rng.uniform(0.05, 1.0, size=(9,))}
        err = grad_check(
            lambda t: ad.reciprocal(ad.affine(ad.reduce_sum(ad.xlogx(t["p"])), -1.0, 1e-6)),
            params,
        )
        assert err < 1e-4

    def test_tensor_reuse_accumulates(self):
        # x used twice: d(x*x + x)/dx = 2x + 1, accumulated across both uses
        x = ad.Tensor(np.array([3.0, -2.0]), requires_grad=True)
        ad.reduce_sum(ad.add(ad.mul(x, x), x)).backward()
        assert x.grad.tolist() == [7.0, -3.0]


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = ad.AdamState()
        ad.adam_step(params, {"w": np.zeros(2)}, state, lr=1e-3)
        assert params["w"].tolist() == [1.0, -2.0]
        assert state.step == 1

    def test_first_step_bias_corrected(self):
        params = {"w": np.array([1.0])}
        ad.adam_step(params, {"w": np.array([1.0])}, ad.AdamState(), lr=1e-3)
        assert params["w"][0] - 1.0 == pytest.approx(-1e-3, rel=1e-6)

    def test_constant_gradient_reaches_lr_magnitude(self):
        params = {"w": np.array([0.0])}
        state = ad.AdamState()
        grads = {"w": np.array([3.0])}
        prev = 0.0
        for _ in range(2000):
            prev = params["w"][0]
            ad.adam_step(params, grads, state, lr=1e-3)
        delta = params["w"][0] - prev
        assert delta == pytest.approx(-1e-3, rel=0.02)

    def test_rejects_non_finite_gradient_and_names_it(self):
        params = {"good": np.array([1.0]), "bad": np.array([2.0])}
        state = ad.AdamState()
        grads = {"good": np.array([0.1]), "bad": np.array([np.nan])}
        with pytest.raises(ad.GradientError, match="bad"):
            ad.adam_step(params, grads, state, lr=1e-3)
        assert params["good"][0] == 1.0  # whole step rejected
        assert state.step == 0

    def test_rejects_non_positive_lr(self):
        with pytest.raises(ValueError):
            ad.adam_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, ad.AdamState(), lr=0.0)


class TestFiniteDiffCheck:
    def test_quadratic_oracle(self):
        params = {"theta": np.array([3.0])}

        def compute():
            return float(params["theta"][0] ** 2), {"theta": 2.0 * params["theta"]}

        err = ad.finite_diff_check(compute, params, samples_per_param=1)
        assert err < 1e-9

    def test_detects_nondeterminism(self):
        params = {"theta": np.array([1.0])}
        rng = np.random.default_rng()

        def compute():
            return float(params["theta"][0] + rng.normal()), {"theta": np.ones(1)}

        with pytest.raises(ad.NondeterministicComputation):
            ad.finite_diff_check(compute, params)

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            ad.finite_diff_check(lambda: (0.0, {}), {}, h=0.0)


class TestDeterminism:
    def test_forward_backward_bit_reproducible(self, rng):
        x = rng.normal(size=(2, 6, 6))
        w = rng.normal(size=(4, 2, 3, 3))
        b = rng.normal(size=(4,))
        runs = []
        for _ in range(2):
            tx = ad.Tensor(x.copy(), requires_grad=True)
            tw = ad.Tensor(w.copy(), requires_grad=True)
            tb = ad.Tensor(b.copy(), requires_grad=True)
            loss = ad.reduce_mean(ad.square(ad.relu(ad.conv2d(tx, tw, tb))))
            loss.backward()
            runs.append((loss.item(), tx.grad.copy(), tw.grad.copy(), tb.grad.copy()))
        assert runs[0][0] == runs[1][0]
        for a, b_ in zip(runs[0][1:], runs[1][1:]):
            assert np.array_equal(a, b_)

    def test_inference_is_graph_free(self, rng):
        x = ad.Tensor(rng.normal(size=(2, 4, 4)))
        w = ad.Tensor(rng.normal(size=(3, 2, 3, 3)))
        b = ad.Tensor(rng.normal(size=(3,)))
        out = ad.relu(ad.conv2d(x, w, b))
        assert out._parents == ()
        assert out._backward is None
        assert not out.requires_grad
