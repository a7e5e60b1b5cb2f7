import numpy as np
import pytest

from amtl.autograd import (
    Tensor,
    apply_primitive,
    backward,
    check_gradients,
    concat,
    graph_nodes,
    no_grad,
    primitive_names,
    read_tensors,
    stack,
    write_tensors,
)
from amtl.errors import CheckpointError, ShapeError, UnknownPrimitiveError


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def away_from_kinks(rng, shape, margin=1e-3):
    x = rng.standard_normal(shape)
    bad = np.abs(x) < margin
    while bad.any():
        x[bad] = rng.standard_normal(bad.sum())
        bad = np.abs(x) < margin
    return x


# (name, input shapes, attrs, positive-only inputs)
SMOOTH_CASES = [
    ("add", [(3, 4), (4,)], {}, False),
    ("sub", [(3, 1), (1, 4)], {}, False),
    ("mul", [(2, 3), (2, 3)], {}, False),
    ("scale", [(5,)], {"factor": -2.5}, False),
    ("matmul", [(3, 4), (4, 2)], {}, False),
    ("matmul", [(2, 3, 4), (2, 4, 5)], {}, False),
    ("conv1d", [(10, 3), (4, 3, 3), (4,)], {"stride": 2}, False),
    ("sigmoid", [(6,)], {}, False),
    ("tanh", [(6,)], {}, False),
    ("glu", [(3, 8)], {"axis": -1}, False),
    ("exp", [(4,)], {}, False),
    ("log", [(4,)], {}, True),
    ("softmax", [(3, 5)], {"axis": -1}, False),
    ("log_softmax", [(3, 5)], {"axis": 0}, False),
    ("layer_norm", [(3, 6), (6,), (6,)], {}, False),
    ("sum", [(3, 4)], {"axis": 1}, False),
    ("mean", [(3, 4)], {"axis": 0, "keepdims": True}, False),
    ("reshape", [(3, 4)], {"shape": (2, 6)}, False),
    ("transpose", [(2, 3, 4)], {"axes": (2, 0, 1)}, False),
    ("take", [(5, 3)], {"indices": np.array([4, 0, 4, 2]), "axis": 0}, False),
    ("pick", [(3, 4)], {"indices": np.array([1, 3, 1])}, False),
    ("slice", [(5, 4)], {"key": (slice(1, 4), 2)}, False),
    ("concat", [(2, 3), (4, 3)], {"axis": 0}, False),
    ("stack", [(2, 3), (2, 3)], {"axis": 1}, False),
    ("dropout", [(3, 3)], {"mask": np.array([[2.0, 0, 2], [0, 2, 2], [2, 2, 0]])}, False),
    ("l2_normalize", [(4, 5)], {}, False),
]


@pytest.mark.parametrize("name,shapes,attrs,positive", SMOOTH_CASES, ids=[c[0] + str(i) for i, c in enumerate(SMOOTH_CASES)])
def test_primitive_gradients_match_finite_differences(name, shapes, attrs, positive, rng):
    xs = [Tensor(rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s)) for s in shapes]
    weights = Tensor(rng.standard_normal(apply_primitive(name, xs, attrs).shape), requires_grad=False)

    def f():
        return (apply_primitive(name, xs, attrs) * weights).sum()

    report = check_gradients(f, xs, eps=1e-6, tol=1e-6)
    assert report.passed, report.message


def test_relu_gradient_away_from_kink(rng):
    x = Tensor(away_from_kinks(rng, (20,)))
    report = check_gradients(lambda t: (t.relu() * t).sum(), x, tol=1e-4)
    assert report.passed


def test_ctc_primitive_gradient(rng):
    lp = Tensor(rng.standard_normal((6, 4)))
    report = check_gradients(
        lambda t: apply_primitive("ctc_loss", [t.log_softmax(axis=-1)], {"target": [1, 2, 2], "blank": 0}), lp, tol=1e-6
    )
    assert report.passed, report.message


def test_glu_example():
    out = apply_primitive("glu", [T([2.0, 4.0, 0.0, 0.0])], {"axis": -1})
    assert np.array_equal(out.data, [1.0, 2.0])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 4))
    ref = np.zeros((2, 4))
    for i in range(2):
        for j in range(4):
            for k in range(3):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.allclose((T(a) @ T(b)).data, ref, rtol=0, atol=1e-14)


def test_conv1d_output_length_and_positions(rng):
    x = rng.standard_normal((10, 2))
    w = rng.standard_normal((3, 2, 7))
    out = apply_primitive("conv1d", [T(x), T(w), T(np.zeros(3))], {"stride": 3})
    assert out.shape == (2, 3)
    for row, start in enumerate((0, 3)):
        expect = np.einsum("kc,ock->o", x[start : start + 7], w)
        assert np.allclose(out.data[row], expect)


def test_conv1d_rejects_bad_stride(rng):
    with pytest.raises(Exception, match="stride"):
        apply_primitive("conv1d", [T(np.ones((10, 2))), T(np.ones((3, 2, 7))), T(np.zeros(3))], {"stride": 0})


def test_square_gradient():
    x = T(3.0)
    (x * x).backward()
    assert x.grad == 6.0


def test_sum_of_softmax_has_zero_gradient(rng):
    z = T(rng.standard_normal(7))
    z.softmax().sum().backward()
    assert np.allclose(z.grad, 0.0, atol=1e-15)


def test_layer_norm_gradient_example(rng):
    x = T(rng.standard_normal(4))
    g, b = Tensor(np.ones(4), requires_grad=False), Tensor(np.zeros(4), requires_grad=False)
    w = Tensor(rng.standard_normal(4), requires_grad=False)
    report = check_gradients(lambda t: (apply_primitive("layer_norm", [t, g, b]) * w).sum(), x, eps=1e-5, tol=1e-6)
    assert report.passed


def test_gradcheck_sum_of_squares():
    x = T([1.0, 2.0])
    report = check_gradients(lambda t: (t * t).sum(), x, eps=1e-5)
    assert report.passed and report.num_checked == 2
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_gradcheck_reports_non_finite_probe():
    x = T([1e-6, 1.0])
    report = check_gradients(lambda t: apply_primitive("log", [t]).sum(), x, eps=1e-5)
    assert not report.passed
    assert "0" in report.message and report.worst == (0, 0)


def test_gradcheck_detects_wrong_gradient(rng):
    x = T(rng.standard_normal(3))
    report = check_gradients(lambda t: (t.detach() * t).sum(), x)
    assert not report.passed


def test_non_scalar_root_rejected():
    with pytest.raises(ShapeError, match="scalar"):
        backward(T([1.0, 2.0]) * 2.0)


def test_unknown_primitive_rejected():
    with pytest.raises(UnknownPrimitiveError, match="frobnicate"):
        apply_primitive("frobnicate", [T(1.0)])


def test_shape_mismatch_names_primitive_and_shapes():
    with pytest.raises(ShapeError) as err:
        T(np.ones((2, 3))) @ T(np.ones((4, 5)))
    msg = str(err.value)
    assert "matmul" in msg and "(2, 3)" in msg and "(4, 5)" in msg


def test_unreachable_leaf_has_no_gradient():
    x, y = T(2.0), T(5.0)
    (x * x).backward()
    assert y.grad is None


def test_constants_receive_no_gradient():
    x = T([1.0, 2.0])
    c = Tensor([3.0, 4.0], requires_grad=False)
    (x * c).sum().backward()
    assert c.grad is None and np.array_equal(x.grad, [3.0, 4.0])


def test_backward_accumulates(rng):
    x = T(rng.standard_normal((3, 3)))

    def f():
        return (x @ x).softmax().log().sum()

    f().backward()
    once = x.grad.copy()
    x.grad = None
    f().backward()
    f().backward()
    assert np.array_equal(x.grad, 2 * once)


def test_forward_backward_bitwise_deterministic(rng):
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
    results = []
    for _ in range(2):
        x, y = T(a), T(b)
        out = (x @ y).log_softmax().sum()
        out.backward()
        results.append((out.data.tobytes(), x.grad.tobytes(), y.grad.tobytes()))
    assert results[0] == results[1]


def test_graph_is_topologically_ordered():
    x = T(2.0)
    y = x * x
    z = y + x
    order = graph_nodes(z)
    pos = {id(t): i for i, t in enumerate(order)}
    for t in order:
        if t.node is not None:
            for inp in t.node.inputs:
                if id(inp) in pos:
                    assert pos[id(inp)] < pos[id(t)]


def test_no_grad_records_nothing():
    x = T(3.0)
    with no_grad():
        y = x * x
    assert y.node is None


def test_concat_and_stack_helpers():
    a, b = T(np.ones((2, 2))), T(np.zeros((1, 2)))
    assert concat([a, b]).shape == (3, 2)
    assert stack([a, a]).shape == (2, 2, 2)


def test_zero_extent_tensor_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))


def test_primitive_inventory():
    names = set(primitive_names())
    for required in ("add", "mul", "matmul", "conv1d", "relu", "sigmoid", "glu", "softmax", "log_softmax",
                     "layer_norm", "mean", "take", "slice", "concat", "scale"):
        assert required in names


# -- checkpoint container -------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path, rng):
    tensors = {"a/w": rng.standard_normal((3, 4)).astype(np.float32), "b": np.float32([1.5]), "é": np.ones((1, 2, 1), np.float32)}
    path = tmp_path / "x.ckpt"
    write_tensors(path, tensors)
    back = read_tensors(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].dtype == np.float32 and back[k].tobytes() == tensors[k].tobytes()


def test_checkpoint_header_layout(tmp_path):
    path = tmp_path / "x.ckpt"
    write_tensors(path, {"ab": np.float32([[1.0, 2.0]])})
    raw = path.read_bytes()
    assert raw[:4] == b"AMTL"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 1
    assert int.from_bytes(raw[12:14], "little") == 2 and raw[14:16] == b"ab"
    assert raw[16] == 2
    assert int.from_bytes(raw[17:25], "little") == 1 and int.from_bytes(raw[25:33], "little") == 2
    assert np.frombuffer(raw[33:], "<f4").tolist() == [1.0, 2.0]


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "x.ckpt"
    write_tensors(path, {"w": np.ones((4,), np.float32)})
    raw = path.read_bytes()
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        read_tensors(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        read_tensors(path)
