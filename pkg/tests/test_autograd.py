import numpy as np
import pytest

from ct3vae.autograd import Tensor, grad_check, tensor
from ct3vae.errors import NumericError
from ct3vae.nn import AdamW, Mlp, mlp_init


def test_identity_layer_forward():
    mlp = mlp_init((2, 2), ("identity",), np.random.default_rng(0))
    mlp.layers[0].weight.data[:] = np.eye(2)
    mlp.layers[0].bias.data[:] = 0.0
    out = mlp.forward(Tensor([[1.0, 2.0]]))
    assert np.allclose(out.data, [[1.0, 2.0]])


def test_relu_layer_forward():
    mlp = mlp_init((2, 2), ("relu",), np.random.default_rng(0))
    mlp.layers[0].weight.data[:] = np.eye(2)
    mlp.layers[0].bias.data[:] = 0.0
    out = mlp.forward(Tensor([[-1.0, 3.0]]))
    assert np.allclose(out.data, [[0.0, 3.0]])


def test_two_layer_net_matches_hand_unrolled_chain():
    rng = np.random.default_rng(0)
    mlp = mlp_init((3, 4, 2), ("relu", "identity"), rng)
    x = np.random.default_rng(1).standard_normal((5, 3))
    out = mlp.forward(Tensor(x)).data

    w0, b0 = mlp.layers[0].weight.data, mlp.layers[0].bias.data
    w1, b1 = mlp.layers[1].weight.data, mlp.layers[1].bias.data
    by_hand = np.maximum(x @ w0 + b0, 0.0) @ w1 + b1
    assert np.array_equal(out, by_hand)


def test_forward_deterministic():
    mlp = mlp_init((3, 4, 2), ("softplus", "sigmoid"), np.random.default_rng(3))
    x = Tensor(np.random.default_rng(4).standard_normal((7, 3)))
    assert np.array_equal(mlp.forward(x).data, mlp.forward(x).data)


def test_dimension_mismatch_raises():
    mlp = mlp_init((3, 2), ("identity",), np.random.default_rng(0))
    with pytest.raises(ValueError, match="feature dimension"):
        mlp.forward(Tensor(np.zeros((4, 5))))


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_quadratic():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * x).backward()


def test_backward_of_rebuilt_graph_matches():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((4, 3))
    x = rng.standard_normal((2, 4))

    def run():
        wt = Tensor(w, requires_grad=True)
        loss = ((Tensor(x) @ wt).sigmoid() ** 2).sum()
        loss.backward()
        return wt.grad.copy()

    assert np.array_equal(run(), run())


def test_gather_rows_gradient_scatters():
    x = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    picked = x.gather_rows([0, 2, 2])
    (picked * picked).sum().backward()
    expected = np.zeros((4, 3))
    expected[0] = 2.0 * x.data[0]
    expected[2] = 2.0 * 2.0 * x.data[2]
    assert np.allclose(x.grad, expected)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    mlp = mlp_init((3, 5, 2), ("softplus", "identity"), rng)
    x = rng.uniform(-2.0, 2.0, size=(4, 3))
    params = mlp.parameters()
    acts = [layer.activation for layer in mlp.layers]

    def loss_given(substituted):
        h = Tensor(x)
        it = iter(substituted)
        for w, b, act in zip(it, it, acts):
            h = h @ w + b
            if act == "softplus":
                h = h.softplus()
        return (h * h).sum()

    for i, target in enumerate(params):
        def f(t, i=i):
            subbed = [t if j == i else Tensor(p.data) for j, p in enumerate(params)]
            return loss_given(subbed)

        assert grad_check(f, target, step=1e-5) < 1e-4


def test_grad_check_quadratic_is_exact():
    err = grad_check(lambda t: (t * t).sum(), Tensor(np.array([3.0])), step=1e-5)
    assert err < 1e-8


def test_grad_check_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        grad_check(lambda t: (t * t).sum(), Tensor(np.array([1.0])), step=0.0)


def test_adamw_zero_grad_zero_decay_is_fixed_point():
    p = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    opt = AdamW([p], lr=1e-3, weight_decay=0.0)
    p.grad = np.zeros(2)
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)


def test_adamw_first_step_magnitude_is_lr():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = AdamW([p], lr=1e-3, weight_decay=0.0, eps=1e-12)
    p.grad = np.array([1.0])
    opt.step()
    assert np.isclose(p.data[0], -1e-3, rtol=1e-9)


def test_adamw_pure_decay():
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW([p], lr=1e-3, weight_decay=0.1)
    p.grad = np.array([0.0])
    opt.step()
    assert np.isclose(p.data[0], 2.0 * (1.0 - 1e-3 * 0.1), rtol=1e-12)


def test_adamw_rejects_nan_gradient():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([p])
    p.grad = np.array([np.nan])
    with pytest.raises(NumericError, match="non-finite gradient"):
        opt.step()
