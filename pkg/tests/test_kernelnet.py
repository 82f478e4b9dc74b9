import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glocalk.kernelnet import (
    KernelNet,
    LayerSpec,
    LocalKernelLayer,
    effective_weights,
    init_params,
    layer_forward,
    layer_specs,
    load_checkpoint,
    loss_and_gradient,
    masked_loss,
    regularizer,
    net_forward,
    rbf_kernel_matrix,
    save_checkpoint,
)
from glocalk.numkit import ConfigurationError, ShapeError, finite_diff_gradient, make_rng
from glocalk.pipeline import check_gradient, kink_distance


def small_net(n=4, hidden=3, num_hidden=1, d=2, **kw):
    return KernelNet(layer_specs(n, hidden, num_hidden, **kw), d)


def random_problem(seed, m=6, n=4, hidden=3, num_hidden=1, d=2, kernel_reg="kernel", **kw):
    rng = make_rng(seed)
    net = small_net(n, hidden, num_hidden, d, **kw)
    # spread-out positions so a share of kernel entries sit on the hinge's flat part
    theta = init_params(net, rng, position_std=0.35)
    for l, s in enumerate(net.specs):
        net.layout.view(theta, f"layer{l}.b")[...] = rng.normal(0, 0.1, s.n_out)
    R = rng.integers(1, 6, size=(m, n)).astype(float)
    mask = (rng.random((m, n)) < 0.6).astype(float)
    R *= mask
    lam2, lams = rng.uniform(0.1, 1.0, size=2)

    def f(x):
        return loss_and_gradient(net, x, R, mask, lam2, lams, kernel_reg=kernel_reg)

    return net, theta, R, mask, f


def test_kernel_identical_is_one():
    u = np.array([[0.3, -0.2, 0.1, 0.0, 0.5]])
    assert rbf_kernel_matrix(u, u)[0, 0] == 1.0


def test_kernel_far_is_zero():
    assert rbf_kernel_matrix([[0.0, 0.0]], [[1.0, 0.0]])[0, 0] == 0.0
    assert rbf_kernel_matrix([[0.0, 0.0]], [[3.0, 1.0]])[0, 0] == 0.0


def test_kernel_scalar_value():
    k = rbf_kernel_matrix([[0.6, 0, 0, 0, 0]], [[0.0] * 5])
    assert k[0, 0] == pytest.approx(0.64, abs=1e-15)


def test_kernel_orientation_and_dim_check():
    U = np.zeros((4, 3))
    V = np.ones((2, 3)) * 0.1
    assert rbf_kernel_matrix(U, V).shape == (2, 4)
    with pytest.raises(ShapeError):
        rbf_kernel_matrix(np.zeros((4, 3)), np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-2, 2)),
       arrays(np.float64, (4, 3), elements=st.floats(-2, 2)))
def test_kernel_range_and_sparsity(U, V):
    K = rbf_kernel_matrix(U, V)
    assert np.all((K >= 0) & (K <= 1))
    layer = LocalKernelLayer(np.ones((4, 5)), U, V, np.zeros(4))
    We = effective_weights(layer)
    assert np.all(We[K == 0] == 0)


def test_effective_weights_examples():
    W = np.array([[2.0, -1.0]])
    same = np.zeros((2, 1))
    layer = LocalKernelLayer(W, same, np.zeros((1, 1)), np.zeros(1))
    assert np.array_equal(effective_weights(layer), W)
    far = LocalKernelLayer(W, np.array([[0.0], [5.0]]), np.zeros((1, 1)), np.zeros(1))
    assert effective_weights(far)[0, 1] == 0.0
    half = LocalKernelLayer(np.array([[2.0]]), np.array([[np.sqrt(0.5)]]), np.zeros((1, 1)), np.zeros(1))
    assert effective_weights(half)[0, 0] == pytest.approx(1.0)


def test_layer_forward_zero_params():
    z = LocalKernelLayer(np.zeros((3, 4)), np.zeros((4, 2)), np.zeros((3, 2)), np.zeros(3), "sigmoid")
    assert np.array_equal(layer_forward(z, np.ones(4)), np.full(3, 0.5))
    z.activation = "identity"
    assert np.array_equal(layer_forward(z, np.ones(4)), np.zeros(3))


def test_layer_forward_equals_composition():
    net = small_net(5, 3, 1, 2)
    theta = init_params(net, make_rng(1))
    layer = net.layers(theta)[0]
    x = make_rng(2).normal(size=5)
    K = rbf_kernel_matrix(layer.U, layer.V)
    expected = 1.0 / (1.0 + np.exp(-((layer.W * K) @ x + layer.b)))
    np.testing.assert_allclose(layer_forward(layer, x), expected, rtol=1e-14)
    with pytest.raises(ShapeError):
        layer_forward(layer, np.ones(4))


def test_net_forward_rowwise_and_shape():
    net = small_net(4, 3, 2, 2)
    theta = init_params(net, make_rng(0))
    R = make_rng(1).integers(0, 6, size=(6, 4)).astype(float)
    out = net.forward(theta, R)
    assert out.shape == R.shape
    layers = net.layers(theta)
    for i in range(R.shape[0]):
        x = R[i]
        for layer in layers:
            x = layer_forward(layer, x)
        np.testing.assert_allclose(out[i], x, rtol=1e-12, atol=1e-14)


def test_zero_net_reconstructs_zero():
    net = small_net(4, 3, 1, 2)
    out = net.forward(np.zeros(net.layout.size), np.ones((5, 4)))
    assert np.array_equal(out, np.zeros((5, 4)))


def test_masked_loss_examples():
    net = small_net()
    layers = net.layers(np.zeros(net.layout.size))
    R = np.array([[3.0, 0.0]])
    mask = np.array([[1.0, 0.0]])
    assert masked_loss(R, R, mask, layers, 0, 0) == 0.0
    assert masked_loss(R + 2.0, R, mask, layers, 0, 0) == 4.0
    messy = R.copy()
    messy[0, 1] = 99.0
    assert masked_loss(messy, R, mask, layers, 0, 0) == 0.0
    with pytest.raises(ConfigurationError):
        masked_loss(R, R, mask, layers, -1.0, 0)


def test_loss_matches_masked_loss():
    net, theta, R, mask, f = random_problem(0)
    loss, _ = loss_and_gradient(net, theta, R, mask, 0.3, 0.2)
    ref = masked_loss(net.forward(theta, R), R, mask, net.layers(theta), 0.3, 0.2)
    assert loss == pytest.approx(ref, rel=1e-13)


def test_zero_error_zero_gradient():
    net = small_net(4, 3, 1, 2)
    theta = np.zeros(net.layout.size)
    R = np.zeros((3, 4))
    loss, grad = loss_and_gradient(net, theta, R, np.ones((3, 4)), 0.0, 0.0)
    assert loss == 0.0 and not grad.any()


def test_weight_penalty_gradient_alone():
    # all-zero data term: with positions far apart K is 0 and only lambda2*W remains
    net = small_net(3, 2, 1, 1)
    rng = make_rng(4)
    theta = np.zeros(net.layout.size)
    for l in range(2):
        net.layout.view(theta, f"layer{l}.W")[...] = rng.normal(size=net.layout.offsets[f"layer{l}.W"][2])
        net.layout.view(theta, f"layer{l}.U")[:, 0] = 10.0 * np.arange(1, net.specs[l].n_in + 1)
        net.layout.view(theta, f"layer{l}.V")[:, 0] = -10.0 * np.arange(1, net.specs[l].n_out + 1)
    _, grad = loss_and_gradient(net, theta, np.zeros((2, 3)), np.zeros((2, 3)), 1.5, 0.7)
    for l in range(2):
        W = net.layout.view(theta, f"layer{l}.W")
        np.testing.assert_allclose(net.layout.view(grad, f"layer{l}.W"), 1.5 * W)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("kernel_reg", ["kernel", "positions"])
def test_gradient_matches_finite_differences(seed, kernel_reg):
    net, theta, R, mask, f = random_problem(seed, kernel_reg=kernel_reg)
    skip = kink_distance(net, theta, net.layout, 1e-5)
    rep = check_gradient(f, theta, net.layout, 1e-5, 1e-4, skip)
    assert rep.passed, rep.lines()


def test_gradient_two_hidden_layers_and_plain_output():
    net, theta, R, mask, f = random_problem(11, num_hidden=2, kernelize_output=False)
    assert "layer2.U" not in net.layout
    rep = check_gradient(f, theta, net.layout, 1e-5, 1e-4, kink_distance(net, theta, net.layout, 1e-5))
    assert rep.passed, rep.lines()


def test_unobserved_targets_do_not_matter():
    net, theta, R, mask, f = random_problem(2)
    loss, grad = f(theta)
    R2 = R + (1 - mask) * 7.0
    loss2, grad2 = loss_and_gradient(net, theta, R2, mask, 0.0, 0.0, X=R)
    loss0, grad0 = loss_and_gradient(net, theta, R, mask, 0.0, 0.0, X=R)
    assert loss2 == loss0
    assert np.array_equal(grad2, grad0)


def test_input_gradient():
    net, theta, R, mask, _ = random_problem(5)
    X = make_rng(9).normal(size=R.shape)
    _, _, dX = loss_and_gradient(net, theta, R, mask, 0.2, 0.1, X=X, input_grad=True)
    num = finite_diff_gradient(
        lambda v: loss_and_gradient(net, theta, R, mask, 0.2, 0.1, X=v.reshape(R.shape))[0],
        X.ravel())
    np.testing.assert_allclose(dX.ravel(), num, rtol=1e-5, atol=1e-6)


def test_hinge_kink_subgradient_is_zero():
    # one input, one output, positions exactly unit distance apart
    net = KernelNet([LayerSpec(1, 1, "identity")], 1)
    theta = net.layout.flatten({"layer0.W": np.array([[2.0]]), "layer0.U": np.array([[0.0]]),
                                "layer0.V": np.array([[1.0]]), "layer0.b": np.array([0.5])})
    _, grad = loss_and_gradient(net, theta, np.array([[3.0]]), np.ones((1, 1)), 0.0, 0.0)
    assert net.layout.view(grad, "layer0.U")[0, 0] == 0.0
    assert net.layout.view(grad, "layer0.V")[0, 0] == 0.0


def test_init_params_contract():
    net = small_net(7, 5, 2, 3)
    a = init_params(net, make_rng(3))
    b = init_params(net, make_rng(3))
    assert np.array_equal(a, b)
    for l, s in enumerate(net.specs):
        assert not net.layout.view(a, f"layer{l}.b").any()
        bound = np.sqrt(6.0 / (s.n_in + s.n_out))
        assert np.abs(net.layout.view(a, f"layer{l}.W")).max() <= bound
    # clustered positions: the initial kernel is dense and near 1
    first = net.layers(a)[0]
    K = rbf_kernel_matrix(first.U, first.V)
    assert K.min() > 0.999


def test_regularizer_uses_half_lambda():
    net = small_net(3, 2, 1, 1)
    theta = init_params(net, make_rng(0))
    layers = net.layers(theta)
    w2 = sum(np.sum(l.W ** 2) for l in layers)
    assert regularizer(layers, 2.0, 0.0) == pytest.approx(w2)


def test_flatten_unflatten_round_trip():
    net = small_net(4, 3, 2, 2)
    theta = make_rng(0).normal(size=net.layout.size)
    blocks = net.layout.unflatten(theta)
    assert np.array_equal(net.layout.flatten(blocks), theta)
    with pytest.raises(ShapeError):
        net.layout.unflatten(theta[:-1])


def test_layer_dims_must_compose():
    with pytest.raises(ShapeError):
        KernelNet([LayerSpec(4, 3), LayerSpec(2, 4, "identity")])


def test_checkpoint_round_trip(tmp_path):
    net = small_net(4, 3, 1, 2)
    theta = make_rng(0).normal(size=net.layout.size)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, net.layout, theta, "abc123", "pretrain", extra={"mu": [1.0, 2.0]})
    layout, back, meta = load_checkpoint(path)
    assert layout == net.layout
    assert np.array_equal(back, theta)
    assert meta["config_hash"] == "abc123" and meta["extra"]["mu"] == [1.0, 2.0]
    raw = path.read_bytes()
    assert raw.startswith(b"GLOCALK-CKPT 1\n")
    # payload is little-endian float64 in block order
    assert np.array_equal(np.frombuffer(raw[-8 * theta.size:], "<f8"), theta)
