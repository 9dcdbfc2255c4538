import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsl.dists import DistributionSpec, parse_scheme
from lsl.forward import (
    InputSpec, LengthTrace, empirical_variance, forward, load_image_csv, make_input,
)
from lsl.netgen import ConvArch, ConvLayer, FCArch, NetInstance, ResidualArch, sample_net
from lsl.rng import stream

HE = parse_scheme("he-normal")


def test_hand_example_fc():
    # one hidden layer of 2 units, bias pushes the second unit through zero
    net = NetInstance(FCArch((2, 2, 1)),
                      weights=[np.array([[1.0, -1.0], [2.0, 0.0]]), np.array([[1.0], [1.0]])],
                      biases=[np.array([0.0, 0.5]), np.array([-1.0])])
    tr = forward(net, [1.0, 1.0])
    # layer 1: z = (3, -0.5) -> a = (3, 0); layer 2: z = 2 -> a = 2
    np.testing.assert_allclose(tr.m, [1.0, 4.5, 4.0])
    assert tr.emp_var == pytest.approx(0.5 * (0.25**2 + 0.25**2))


def test_empirical_variance():
    assert empirical_variance([1.0, 3.0]) == 1.0
    assert empirical_variance(np.array([[2.0, 2.0], [0.0, 4.0]])).tolist() == [0.0, 4.0]
    assert empirical_variance(LengthTrace.from_lengths([9.0, 1.0, 3.0])) == 1.0
    with pytest.raises(ValueError):
        empirical_variance([])


def test_emp_var_recompute():
    arch = FCArch((10,) * 12)
    net = sample_net(arch, HE, stream(2))
    tr = forward(net, make_input(InputSpec("sphere"), (10,), stream(2, 1)))
    assert np.var(tr.m[1:]) == pytest.approx(tr.emp_var, rel=1e-12)


def _direct_conv(img, kern, bias):
    h, w, _ = img.shape
    k = kern.shape[0]
    r = k // 2
    out = np.zeros((h, w, kern.shape[3]))
    for y in range(h):
        for x in range(w):
            for dy in range(k):
                for dx in range(k):
                    out[y, x] += img[(y + dy - r) % h, (x + dx - r) % w] @ kern[dy, dx]
    return np.maximum(out + bias, 0)


def test_conv_matches_direct_loop():
    arch = ConvArch((5, 4, 2), (ConvLayer(3), ConvLayer(2)))
    net = sample_net(arch, parse_scheme("he-normal", DistributionSpec("normal", 0.1)), stream(3))
    img = stream(3, 1).standard_normal((5, 4, 2))
    a, ms = img, [np.mean(img**2)]
    for kern, b in zip(net.weights, net.biases):
        a = _direct_conv(a, kern, b)
        ms.append(np.mean(a**2))
    np.testing.assert_allclose(forward(net, img).m, ms, rtol=1e-12)


def test_zero_padding_edges():
    arch = ConvArch((3, 3, 1), (ConvLayer(1, padding="zero"),))
    kern = np.ones((3, 3, 1, 1))
    net = NetInstance(arch, weights=[kern], biases=[np.zeros(1)])
    tr = forward(net, np.ones((3, 3, 1)))
    counts = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]])
    assert tr.m[1] == pytest.approx(np.mean(counts**2.0))


def test_conv_1x1_equals_fc():
    widths = (4, 6, 3)
    fc = FCArch(widths)
    conv = ConvArch((1, 1, 4), (ConvLayer(6, 1), ConvLayer(3, 1)))
    fnet = sample_net(fc, HE, stream(4))
    cnet = NetInstance(conv, [w.reshape(1, 1, *w.shape) for w in fnet.weights], list(fnet.biases))
    x = stream(4, 1).standard_normal(4)
    a, b = forward(fnet, x), forward(cnet, x.reshape(1, 1, 4))
    np.testing.assert_array_equal(a.m, b.m)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), lam=st.floats(1e-3, 1e3))
def test_positive_homogeneity(seed, lam):
    arch = FCArch((6, 8, 8, 8))
    net = sample_net(arch, HE, stream(seed))
    x = stream(seed, 1).standard_normal(6)
    a, b = forward(net, x).m, forward(net, lam * x).m
    np.testing.assert_allclose(b, lam**2 * a, rtol=1e-12, atol=0)
    assert np.all(a >= 0)


def test_f32_overflow():
    arch = FCArch((10,) * 201)
    net = sample_net(arch, parse_scheme("scaled:2"), stream(6))
    x = np.ones(10)
    m32 = forward(net, x, "f32").m
    m64 = forward(net, x, "f64").m
    assert np.isinf(m32[-1])
    assert np.all(np.isfinite(m64))


def test_residual_monotone_nonnegative():
    arch = ResidualArch(5, (0.7,) * 12)
    net = sample_net(arch, HE, stream(8))
    x = make_input(InputSpec("sphere", nonnegative=True), (5,), stream(8, 1))
    m = forward(net, x).m
    # with x >= 0 every skip adds a nonnegative vector, so lengths never drop
    assert np.all(np.diff(m) >= 0)
    assert m[0] == pytest.approx(1.0)


def test_residual_prefix():
    long = ResidualArch(5, (0.5,) * 10)
    short = ResidualArch(5, (0.5,) * 4)
    x = np.ones(5)
    a = forward(sample_net(long, HE, stream(1)), x).m
    b = forward(sample_net(short, HE, stream(1)), x).m
    np.testing.assert_array_equal(a[:5], b)


def test_inputs(tmp_path):
    x = make_input(InputSpec("sphere"), (7,), stream(0))
    assert np.sum(x**2) == pytest.approx(7)
    u = make_input(InputSpec("sphere", "unit"), (7,), stream(0))
    assert np.sum(u**2) == pytest.approx(1)
    board = make_input(InputSpec("checkerboard"), (2, 2, 1))
    assert board[0, 0, 0] == -board[0, 1, 0]
    with pytest.raises(ValueError):
        make_input(InputSpec("sphere"), (3,))
    with pytest.raises(ValueError):
        make_input(InputSpec("explicit", values=(1.0, 2.0)), (3,))
    p = tmp_path / "img.csv"
    p.write_text("1,2\n3,4\n\n5,6\n7,8\n")
    img = load_image_csv(p)
    assert img.shape == (2, 2, 2) and img[1, 0, 1] == 7


def test_shape_errors():
    net = sample_net(FCArch((3, 2)), HE, stream(0))
    with pytest.raises(ValueError):
        forward(net, np.ones(4))
    with pytest.raises(ValueError):
        forward(net, np.ones(3), "f16")
