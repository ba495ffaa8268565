import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenehash import numcore as nc


def test_matmul_identity():
    m = np.array([[2.0, 5.0], [7.0, -1.0]])
    out = nc.matmul(nc.Tensor(np.eye(2)), nc.Tensor(m))
    assert np.array_equal(out.data, m)


def test_matmul_forced_arithmetic():
    out = nc.matmul(nc.Tensor([[1.0, 2.0], [3.0, 4.0]]), nc.Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((4, 3))
    expect = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(4):
                expect[i, j] += a[i, k] * b[k, j]
    got = nc.matmul(nc.Tensor(a), nc.Tensor(b)).data
    assert np.max(np.abs(got - expect)) < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(nc.ShapeError):
        nc.matmul(nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((2, 3))))


def test_matmul_backward_rules():
    rng = np.random.default_rng(0)
    a = nc.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = nc.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    out = nc.matmul(a, b)
    seed = rng.standard_normal(out.shape)
    out.backward(seed)
    assert np.allclose(a.grad, seed @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ seed)


def test_softmax_symmetry():
    out = nc.softmax_rows(nc.Tensor([[0.0, 0.0, 0.0]]))
    assert np.allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]])


def test_softmax_large_values_stable():
    out = nc.softmax_rows(nc.Tensor([[1000.0, 0.0]]))
    assert np.all(np.isfinite(out.data))
    assert out.data[0, 0] == pytest.approx(1.0)
    assert out.data[0, 1] < 1e-300


def test_softmax_masked_hand_arithmetic():
    mask = np.array([[True, True, False]])
    out = nc.softmax_rows(nc.Tensor([[1.0, 2.0, 3.0]]), mask).data
    e1, e2 = np.exp(1.0), np.exp(2.0)
    assert np.allclose(out, [[e1 / (e1 + e2), e2 / (e1 + e2), 0.0]])
    assert out[0, 2] == 0.0


def test_softmax_fully_masked_row_raises():
    with pytest.raises(nc.DegenerateMaskError):
        nc.softmax_rows(nc.Tensor([[1.0, 2.0]]), np.array([[False, False]]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-50, 50), min_size=4, max_size=4), min_size=1, max_size=6))
def test_softmax_rows_sum_to_one(rows):
    out = nc.softmax_rows(nc.Tensor(np.array(rows))).data
    assert np.all(np.abs(out.sum(axis=1) - 1.0) <= 1e-12)


def test_layer_norm_constant_vector():
    x = nc.Tensor(np.full((1, 5), 3.7))
    out = nc.layer_norm(x, nc.Tensor(np.ones(5)), nc.Tensor(np.zeros(5)), eps=1e-5)
    assert np.allclose(out.data, 0.0)


def test_layer_norm_already_normalized():
    x = nc.Tensor([[1.0, -1.0]])
    out = nc.layer_norm(x, nc.Tensor(np.ones(2)), nc.Tensor(np.zeros(2)), eps=1e-12)
    assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-6)


def test_layer_norm_moments():
    rng = np.random.default_rng(3)
    x = nc.Tensor(rng.standard_normal((4, 16)) * 2.5 + 1.0)
    eps = 1e-8
    out = nc.layer_norm(x, nc.Tensor(np.ones(16)), nc.Tensor(np.zeros(16)), eps=eps).data
    assert np.max(np.abs(out.mean(axis=1))) < 1e-12
    assert np.max(np.abs(out.var(axis=1) - 1.0)) < 1e-6


def test_backward_identity():
    x = nc.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    y = nc.add(x, nc.Tensor(np.zeros(3)))
    seed = np.array([5.0, -1.0, 2.0])
    y.backward(seed)
    assert np.array_equal(x.grad, seed)


def test_backward_sum_of_squares():
    x = nc.Tensor([1.0, 2.0], requires_grad=True)
    nc.sum_all(nc.mul(x, x)).backward()
    assert np.allclose(x.grad, [2.0, 4.0])


def test_backward_shared_input_accumulates():
    x = nc.Tensor([3.0], requires_grad=True)
    y = nc.add(nc.mul(x, x), x)  # x^2 + x -> dy/dx = 2x + 1
    y.backward(np.array([1.0]))
    assert np.allclose(x.grad, [7.0])


def test_backward_seed_shape_mismatch():
    x = nc.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(nc.ShapeError):
        nc.mul(x, x).backward(np.zeros(3))


def test_compute_graph_visits_once():
    x = nc.Tensor([2.0], requires_grad=True)
    shared = nc.mul(x, x)
    out = nc.sum_all(nc.add(shared, shared))
    g = nc.ComputeGraph(out)
    assert len(g.nodes) == len({id(n) for n in g.nodes})
    g.backward()
    assert np.allclose(x.grad, [8.0])


def test_grad_check_constant_gradient():
    # at the origin the central difference is exact in floating point
    err = nc.grad_check(nc.sum_all, nc.Tensor(np.zeros(6)))
    assert err == 0.0
    err = nc.grad_check(nc.sum_all, nc.Tensor(np.random.default_rng(0).standard_normal(6)))
    assert err < 1e-9


def test_grad_check_layer_norm_composite():
    rng = np.random.default_rng(11)
    gain = nc.Tensor(rng.uniform(0.5, 1.5, 8))
    bias = nc.Tensor(rng.standard_normal(8))

    def f(x):
        return nc.sum_all(nc.tanh(nc.layer_norm(x, gain, bias, 1e-5)))

    err = nc.grad_check(f, nc.Tensor(rng.standard_normal((3, 8))), eps=1e-5)
    assert err < 1e-4


def test_grad_check_eps_range():
    with pytest.raises(ValueError):
        nc.grad_check(nc.sum_all, nc.Tensor(np.ones(3)), eps=1e-2)


def test_check_all_ops_suite():
    max_err, per_op = nc.check_all_ops(seed=0, points_per_op=3)
    assert max_err < 1e-4, per_op


def test_forward_determinism():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 6))
    w = rng.standard_normal((6, 6))

    def run():
        return nc.tanh(nc.matmul(nc.Tensor(x), nc.Tensor(w))).data.tobytes()

    assert run() == run()


def test_nonfinite_forward_rejected():
    with pytest.raises(ValueError):
        nc.log(nc.Tensor([0.0]))
    with pytest.raises(ValueError):
        nc.Tensor([np.inf])


def test_l2_normalize_rows_unit_norm():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((5, 8))
    out = nc.l2_normalize_rows(nc.Tensor(x)).data
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0)


def test_im2col_against_naive_conv():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 7, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    cols = nc.im2col(nc.Tensor(x), 3, 2, 1)
    out = nc.matmul(cols, nc.Tensor(w.reshape(4, -1).T)).data.reshape(2, 4, 4, 4).transpose(0, 3, 1, 2)
    # hand conv oracle
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expect = np.zeros((2, 4, 4, 4))
    for b in range(2):
        for f in range(4):
            for i in range(4):
                for j in range(4):
                    patch = xp[b, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    expect[b, f, i, j] = np.sum(patch * w[f])
    assert np.max(np.abs(out.transpose(0, 2, 3, 1).transpose(0, 3, 1, 2) - expect)) < 1e-12


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    params = {"enc.w": rng.standard_normal((3, 4)), "enc.b": rng.standard_normal(4), "s": np.array(2.0)}
    path = tmp_path / "model.fgpt"
    nc.save_params(params, path)
    loaded = nc.load_params(path)
    assert list(loaded) == list(params)
    for k in params:
        assert np.array_equal(loaded[k], np.asarray(params[k]))


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.fgpt"
    path.write_bytes(b"NOPE" + b"\x00" * 10)
    with pytest.raises(nc.CheckpointError, match="magic"):
        nc.load_params(path)


def test_checkpoint_truncated(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "trunc.fgpt"
    nc.save_params({"w": rng.standard_normal((8, 8))}, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 17])
    with pytest.raises(nc.CheckpointError, match="truncated"):
        nc.load_params(path)
