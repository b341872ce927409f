import math

import numpy as np
import pytest

from coclr import encoder as enc
from coclr.numerics import finite_difference_grad, l2_normalize_rows, make_rng, relative_error


def reference_forward(params, x):
    """Layer-by-layer re-implementation in plain Python lists."""
    rows = []
    for sample in x.tolist():
        h = sample
        for w, b, act in zip(params.weights, params.biases, params.relu):
            w = w.tolist()
            out = []
            for j in range(len(b)):
                s = float(b[j])
                for i in range(len(h)):
                    s += h[i] * w[i][j]
                out.append(max(s, 0.0) if act else s)
            h = out
        norm = math.sqrt(sum(v * v for v in h))
        rows.append([v / max(norm, 1e-12) for v in h])
    return np.array(rows)


def test_init_deterministic_and_shaped():
    a = enc.init_params([4, 8, 3], make_rng(0))
    b = enc.init_params([4, 8, 3], make_rng(0))
    assert a.equals(b)
    assert [w.shape for w in a.weights] == [(4, 8), (8, 3)]
    assert [bb.shape for bb in a.biases] == [(8,), (3,)]
    assert all(not bb.any() for bb in a.biases)
    assert a.relu == [True, False]


def test_init_rejects_bad_dims():
    for dims in ([], [4], [4, 0, 3]):
        with pytest.raises(enc.EncoderError):
            enc.init_params(dims, make_rng(0))


def test_init_weight_statistics():
    p = enc.init_params([200, 500], make_rng(3))
    w = p.weights[0].ravel()
    s = math.sqrt(6.0 / 700)
    assert np.all(np.abs(w) <= s)
    sigma = s / math.sqrt(3.0)
    assert abs(w.mean()) < 3 * sigma / math.sqrt(w.size)
    assert abs(w.std() - sigma) < 0.01 * sigma


def test_forward_degenerate_and_identity(rng):
    zero = enc.MlpParams([np.zeros((3, 4))], [np.zeros(4)], [False])
    z, _ = enc.forward(zero, rng.standard_normal((5, 3)))
    assert np.array_equal(z, np.zeros((5, 4)))
    ident = enc.MlpParams([np.eye(3)], [np.zeros(3)], [False])
    x = rng.standard_normal((5, 3))
    z, tape = enc.forward(ident, x)
    assert tape is None
    np.testing.assert_array_equal(z, l2_normalize_rows(x))


def test_forward_matches_reference(rng):
    p = enc.init_params([6, 9, 7, 5, 4], rng, n_backbone=2)
    p.biases[1][:] = rng.standard_normal(7)
    x = rng.standard_normal((5, 6))
    z, tape = enc.forward(p, x, record=True)
    np.testing.assert_allclose(z, reference_forward(p, x), atol=1e-12, rtol=0)
    assert tape is not None and len(tape.inputs) == 4
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-10)
    assert enc.features(p, x).shape == (5, 7)


def test_forward_dimension_mismatch(rng):
    p = enc.init_params([4, 3], rng)
    with pytest.raises(enc.EncoderError):
        enc.forward(p, np.ones((2, 5)))


def test_backward_zero_upstream(rng):
    p = enc.init_params([4, 6, 3], rng)
    z, tape = enc.forward(p, rng.standard_normal((5, 4)), record=True)
    g = enc.backward(p, tape, np.zeros_like(z))
    assert all(not a.any() for a in g.arrays())


def test_backward_linear_chain_rule(rng):
    p = enc.init_params([4, 3], rng)
    x = rng.standard_normal((5, 4))
    z, tape = enc.forward(p, x, record=True, normalize=False)
    g = enc.backward(p, tape, np.ones_like(z))
    np.testing.assert_allclose(g.weights[0], x.T @ np.ones((5, 3)), atol=1e-12)
    np.testing.assert_allclose(g.biases[0], np.full(3, 5.0), atol=1e-12)


def test_backward_requires_tape(rng):
    p = enc.init_params([4, 3], rng)
    with pytest.raises(enc.EncoderError, match="tape"):
        enc.backward(p, None, np.zeros((1, 3)))


def _param_fd_check(params, x, weights, h=1e-5):
    """Loss = sum(weights * embeddings); compare every parameter against central differences."""
    z, tape = enc.forward(params, x, record=True)
    g = enc.backward(params, tape, weights)
    worst = 0.0
    for arr, grad in zip(params.arrays(), g.arrays()):
        def f(v, arr=arr):
            saved = arr.copy()
            arr[...] = v
            out = float(np.sum(weights * enc.forward(params, x)[0]))
            arr[...] = saved
            return out
        fd = finite_difference_grad(f, arr.copy(), h)
        worst = max(worst, relative_error(grad, fd))
    return worst


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    rng = make_rng(100 + seed)
    params = enc.init_params([5, 7, 6, 4], rng, n_backbone=2)
    for b in params.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((4, 5))
    assert _param_fd_check(params, x, rng.standard_normal((4, 4))) < 1e-4


def test_momentum_update_cases(rng):
    q = enc.init_params([3, 2], rng)
    k = enc.init_params([3, 2], make_rng(99))
    assert enc.momentum_update(enc.EncoderPair(q, k, 1.0)).key.equals(k)
    assert enc.momentum_update(enc.EncoderPair(q, k, 0.0)).key.equals(q)
    ones = enc.MlpParams([np.ones((1, 1))], [np.ones(1)], [False])
    zeros = enc.MlpParams([np.zeros((1, 1))], [np.zeros(1)], [False])
    out = enc.momentum_update(enc.EncoderPair(zeros, ones, 0.999)).key
    assert out.weights[0][0, 0] == 0.999 and out.biases[0][0] == 0.999


def test_momentum_contraction(rng):
    q = enc.init_params([4, 5, 3], rng)
    k = enc.init_params([4, 5, 3], make_rng(5))
    pair = enc.EncoderPair(q, k, 0.9)

    def dist(p):
        return math.sqrt(sum(float(np.sum((a - b) ** 2)) for a, b in zip(p.key.arrays(), p.query.arrays())))

    d0 = dist(pair)
    for _ in range(50):
        pair = enc.momentum_update(pair)
    assert abs(dist(pair) - 0.9 ** 50 * d0) < 1e-10
    assert pair.query is q


def test_pair_initialises_key_from_query(rng):
    q = enc.init_params([4, 3], rng)
    pair = enc.EncoderPair.from_query(q)
    assert pair.key.equals(q) and pair.key is not q


def test_pair_shape_mismatch(rng):
    with pytest.raises(enc.EncoderError):
        enc.EncoderPair(enc.init_params([4, 3], rng), enc.init_params([4, 2], rng))


def test_sgd_step_cases(rng):
    p = enc.MlpParams([np.ones((1, 1))], [np.ones(1)], [False])
    g = enc.Grads([np.ones((1, 1))], [np.ones(1)])
    assert enc.sgd_step(p, enc.zero_grads(p), 0.1, 0.0).equals(p)
    out = enc.sgd_step(p, g, 0.1, 0.0)
    assert out.weights[0][0, 0] == pytest.approx(0.9, abs=1e-15)
    with pytest.raises(enc.EncoderError):
        enc.sgd_step(p, enc.Grads([np.ones((2, 1))], [np.ones(1)]), 0.1)


def test_sgd_quadratic_bowl_decay(rng):
    p = enc.init_params([3, 4, 2], rng)
    n0 = math.sqrt(sum(float(np.sum(a * a)) for a in p.arrays()))
    for _ in range(100):
        p = enc.sgd_step(p, enc.Grads([w.copy() for w in p.weights], [b.copy() for b in p.biases]), 0.1)
    n = math.sqrt(sum(float(np.sum(a * a)) for a in p.arrays()))
    assert abs(n - 0.9 ** 100 * n0) < 1e-10
