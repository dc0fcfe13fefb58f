import numpy as np
import pytest

from aftcap import autograd as ag
from aftcap.autograd import Graph, Tensor
from aftcap.checks import check_gradients


def test_exp_sigmoid_mul_values():
    assert np.allclose(ag.exp(Tensor([0.0, 0.0])).data, [1.0, 1.0])
    assert np.allclose(ag.sigmoid(Tensor([0.0])).data, [0.5])
    assert np.allclose(ag.mul(Tensor([1, 2, 3]), Tensor([4, 5, 6])).data, [4, 10, 18])


def test_div_by_zero_tensor_raises():
    with pytest.raises(ZeroDivisionError):
        ag.div(Tensor([1.0]), Tensor([0.0]))


def test_matmul_identity_and_small():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ag.matmul(Tensor(np.eye(2)), m).data, m.data)
    out = ag.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert np.allclose(out.data, [[11.0]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    want = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                want[i, j] += a[i, k] * b[k, j]
    got = ag.matmul(Tensor(a), Tensor(b)).data
    assert np.max(np.abs(got - want)) < 1e-12


def test_matmul_dim_mismatch():
    with pytest.raises(ValueError):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_reductions():
    assert np.allclose(ag.tsum(Tensor([[1.0, 2.0], [3.0, 4.0]]), axis=0).data, [4, 6])
    assert np.allclose(ag.tmean(Tensor([2.0, 4.0])).data, 3.0)
    m, idx = ag.tmax(Tensor([-1.0, 5.0, 2.0]), return_index=True)
    assert m.item() == 5.0 and idx == 1
    with pytest.raises(ValueError):
        ag.tsum(Tensor([1.0]), axis=3)


def test_layer_norm_values():
    gain, bias = Tensor(np.ones(4)), Tensor(np.zeros(4))
    out = ag.layer_norm(Tensor([5.0, 5.0, 5.0, 5.0]), gain, bias)
    assert np.allclose(out.data, 0.0)

    g2, b2 = Tensor(np.ones(2)), Tensor(np.zeros(2))
    out = ag.layer_norm(Tensor([1.0, -1.0]), g2, b2, eps=1e-12)
    assert np.allclose(out.data, [1.0, -1.0], atol=1e-6)


def test_layer_norm_against_direct_formula():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 8))
    gain = rng.standard_normal(8)
    bias = rng.standard_normal(8)
    eps = 1e-5
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    want = (x - mu) / np.sqrt(var + eps) * gain + bias
    got = ag.layer_norm(Tensor(x), Tensor(gain), Tensor(bias), eps).data
    assert np.max(np.abs(got - want)) < 1e-12


def test_conv_and_pool_values():
    x = Tensor(np.ones((1, 1, 5, 5)))
    w = Tensor(np.zeros((2, 1, 3, 3)))
    b = Tensor(np.array([0.5, -0.5]))
    out = ag.conv2d(x, w, b, pad=1)
    assert np.allclose(out.data[0, 0], 0.5) and np.allclose(out.data[0, 1], -0.5)

    out = ag.avgpool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), k=2)
    assert np.allclose(out.data, [[[[2.5]]]])


def test_conv_ones_kernel_hand_oracle():
    # 3x3 kernel of ones over a 5x5 field of ones, pad 1: center 9, corners 4.
    x = np.ones((1, 1, 5, 5))
    w = np.ones((1, 1, 3, 3))
    xp = np.pad(x[0, 0], 1)
    want = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            want[i, j] = xp[i:i + 3, j:j + 3].sum()
    got = ag.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), pad=1).data[0, 0]
    assert np.array_equal(got, want)
    assert got[2, 2] == 9.0 and got[0, 0] == 4.0


def test_backward_sum_and_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Graph() as g:
        loss = ag.tsum(x)
    g.backward(loss)
    assert np.array_equal(x.grad, [1.0, 1.0, 1.0])

    y = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        loss = ag.tsum(ag.mul(y, y))
    g.backward(loss)
    assert np.allclose(y.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        out = ag.mul(x, x)
    with pytest.raises(ValueError):
        g.backward(out)


def test_backward_disconnected_param_warns():
    x = Tensor([1.0], requires_grad=True, name="used")
    z = Tensor([1.0], requires_grad=True, name="unused")
    with Graph() as g:
        loss = ag.tsum(ag.mul(x, x))
    with pytest.warns(UserWarning):
        g.backward(loss, params=[x, z])
    assert np.array_equal(z.grad, [0.0])


def test_fanout_accumulates():
    x = Tensor([3.0], requires_grad=True)
    with Graph() as g:
        loss = ag.tsum(ag.add(ag.mul(x, x), x))  # x^2 + x -> 2x + 1
    g.backward(loss)
    assert np.allclose(x.grad, [7.0])


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_elementwise_chain(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.uniform(-2, 2, size=(3, 4)), requires_grad=True, name="a")
    b = Tensor(rng.uniform(0.5, 2, size=(3, 4)), requires_grad=True, name="b")

    def make_loss(want_grad):
        a.grad = b.grad = None
        with Graph() as g:
            h = ag.sigmoid(ag.div(ag.mul(a, b), ag.add(ag.exp(b), Tensor(1.0))))
            loss = ag.tsum(ag.mul(h, ag.sub(a, b)))
        if want_grad:
            g.backward(loss)
        return loss.item()

    check_gradients(make_loss, [a, b])


def test_gradcheck_matmul_broadcast_norm():
    rng = np.random.default_rng(7)
    x = Tensor(rng.uniform(-2, 2, size=(2, 3, 4)), requires_grad=True, name="x")
    w = Tensor(rng.uniform(-1, 1, size=(4, 5)), requires_grad=True, name="w")
    gain = Tensor(rng.uniform(0.5, 1.5, size=5), requires_grad=True, name="gain")
    bias = Tensor(rng.uniform(-1, 1, size=5), requires_grad=True, name="bias")

    def make_loss(want_grad):
        with Graph() as g:
            y = ag.layer_norm(ag.matmul(x, w), gain, bias)
            loss = ag.tsum(ag.mul(y, y))
        if want_grad:
            g.backward(loss)
        return loss.item()

    check_gradients(make_loss, [x, w, gain, bias])


def test_gradcheck_conv_pool():
    rng = np.random.default_rng(11)
    x = Tensor(rng.uniform(-1, 1, size=(2, 2, 6, 6)), requires_grad=True, name="x")
    w = Tensor(rng.uniform(-1, 1, size=(3, 2, 3, 3)), requires_grad=True, name="w")
    b = Tensor(rng.uniform(-1, 1, size=3), requires_grad=True, name="b")

    def make_loss(want_grad):
        with Graph() as g:
            y = ag.avgpool2d(ag.relu(ag.conv2d(x, w, b, pad=1)), k=2)
            loss = ag.tsum(ag.mul(y, y))
        if want_grad:
            g.backward(loss)
        return loss.item()

    check_gradients(make_loss, [x, w, b])


def test_gradcheck_reductions_and_max():
    rng = np.random.default_rng(13)
    x = Tensor(rng.uniform(-2, 2, size=(4, 5)), requires_grad=True, name="x")

    def make_loss(want_grad):
        with Graph() as g:
            loss = ag.add(
                ag.tsum(ag.tmax(x, axis=1)),
                ag.tmean(ag.log_softmax(x)),
            )
            loss = ag.tsum(loss)
        if want_grad:
            g.backward(loss)
        return loss.item()

    check_gradients(make_loss, [x])


def test_gradcheck_embed_crop():
    rng = np.random.default_rng(17)
    table = Tensor(rng.uniform(-1, 1, size=(6, 3)), requires_grad=True, name="table")
    m = Tensor(rng.uniform(-1, 1, size=(5, 5)), requires_grad=True, name="m")
    ids = np.array([[1, 2, 2], [5, 0, 3]])

    def make_loss(want_grad):
        with Graph() as g:
            e = ag.embed(table, ids, freeze_row0=False)
            c = ag.crop2d(m, 3, 3)
            loss = ag.add(ag.tsum(ag.mul(e, e)), ag.tsum(ag.exp(c)))
        if want_grad:
            g.backward(loss)
        return loss.item()

    check_gradients(make_loss, [table, m])


def test_embed_freeze_row0():
    table = Tensor(np.ones((4, 2)), requires_grad=True)
    with Graph() as g:
        loss = ag.tsum(ag.embed(table, np.array([0, 1, 0])))
    g.backward(loss)
    assert np.array_equal(table.grad[0], [0.0, 0.0])
    assert np.array_equal(table.grad[1], [1.0, 1.0])


def test_broadcast_leaves_operands_untouched():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal(4)
    a0, b0 = a.copy(), b.copy()
    out = ag.add(Tensor(a), Tensor(b))
    assert np.array_equal(out.data, a0 + b0)
    assert np.array_equal(a, a0) and np.array_equal(b, b0)


def test_broadcast_gradient_shapes():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    with Graph() as g:
        loss = ag.tsum(ag.mul(a, b))
    g.backward(loss)
    assert a.grad.shape == (3, 4) and b.grad.shape == (4,)
    assert np.allclose(b.grad, 3.0)


def test_forward_backward_bitwise_deterministic():
    rng = np.random.default_rng(5)
    xdata = rng.standard_normal((4, 6))
    wdata = rng.standard_normal((6, 6))

    def run():
        x = Tensor(xdata.copy(), requires_grad=True)
        w = Tensor(wdata.copy(), requires_grad=True)
        with Graph() as g:
            y = ag.layer_norm(ag.matmul(ag.sigmoid(x), w), Tensor(np.ones(6)), Tensor(np.zeros(6)))
            loss = ag.tsum(ag.mul(y, y))
        g.backward(loss)
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_no_graph_means_no_recording():
    x = Tensor([1.0], requires_grad=True)
    y = ag.mul(x, x)
    assert y.requires_grad  # flag propagates even without a graph
    assert ag.active_graph() is None
