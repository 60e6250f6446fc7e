import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnrbm.errors import MaterializationTooLarge, RankShapeError, ShapeError
from tnrbm.mpo import Mpo, check_ranks, gradient_environment, max_useful_ranks, mpo_times_layer, random_mpo, scalar


def _loop_materialize(w):
    I, J = w.in_dims, w.out_dims
    out = np.zeros(I + J)
    for i in itertools.product(*map(range, I)):
        for j in itertools.product(*map(range, J)):
            m = np.ones((1, 1))
            for k, c in enumerate(w.cores):
                m = m @ c[:, i[k], j[k], :]
            out[i + j] = m[0, 0]
    return out


def test_random_mpo_shapes_and_determinism():
    w = random_mpo((3, 4), (2, 3), (1, 5, 1), seed=7)
    assert [c.shape for c in w.cores] == [(1, 3, 2, 5), (5, 4, 3, 1)]
    w2 = random_mpo((3, 4), (2, 3), (1, 5, 1), seed=7)
    assert all(np.array_equal(a, b) for a, b in zip(w.cores, w2.cores))


def test_random_mpo_scale():
    w = random_mpo((20, 20), (20, 20), (1, 10, 1), scale=0.01, seed=0)
    entries = np.concatenate([c.ravel() for c in w.cores])
    assert abs(entries.std() - 0.01) < 5e-4
    assert not np.any(random_mpo((2, 2), (2, 2), (1, 1, 1), scale=0.0, seed=0).materialize())


@pytest.mark.parametrize("ranks", [(2, 3, 1), (1, 3, 2), (1, 0, 1), (1, 1)])
def test_invalid_ranks(ranks):
    with pytest.raises(RankShapeError):
        random_mpo((2, 2), (2, 2), ranks)


def test_rank_adjacency_is_checked():
    with pytest.raises(RankShapeError):
        Mpo([np.ones((1, 2, 2, 3)), np.ones((2, 2, 2, 1))])


def test_excess_rank_warns():
    assert max_useful_ranks((2, 2), (2, 2)) == (1, 4, 1)
    with pytest.warns(UserWarning):
        random_mpo((2, 2), (2, 2), (1, 5, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        random_mpo((2, 2), (2, 2), (1, 4, 1))


def test_materialize_matches_loop_oracle():
    w = random_mpo((2, 2, 2), (2, 2, 2), (1, 2, 2, 1), scale=1.0, seed=3)
    assert np.allclose(w.materialize(), _loop_materialize(w), atol=1e-14)


def test_rank_one_materializes_to_kronecker(rng):
    w1, w2 = rng.normal(size=(3, 2)), rng.normal(size=(4, 3))
    w = Mpo([w1.reshape(1, 3, 2, 1), w2.reshape(1, 4, 3, 1)])
    assert np.allclose(w.as_matrix(), np.kron(w2, w1), atol=1e-15)


def test_materialize_cap():
    w = random_mpo((4, 4), (4, 4), (1, 2, 1), seed=0)
    with pytest.raises(MaterializationTooLarge):
        w.materialize(cap=100)


def test_parameter_count():
    w = random_mpo((28, 28), (10, 10), (1, 40, 1), seed=0)
    assert w.n_params == 22400 == sum(r * i * j * rn for r, i, j, rn in (c.shape for c in w.cores))


def _dense_in(w, x):
    return np.tensordot(x, w.materialize(), axes=(list(range(w.d)), list(range(w.d))))


def _dense_out(w, h):
    d = w.d
    return np.tensordot(w.materialize(), h, axes=(list(range(d, 2 * d)), list(range(d))))


def test_times_layer_matches_dense(rng):
    w = random_mpo((3, 4), (2, 3), (1, 4, 1), scale=1.0, seed=1)
    v = rng.integers(0, 2, size=(3, 4)).astype(float)
    h = rng.integers(0, 2, size=(2, 3)).astype(float)
    assert np.max(np.abs(mpo_times_layer(w, v, "contract-in-modes") - _dense_in(w, v))) <= 1e-12
    assert np.max(np.abs(mpo_times_layer(w, h, "contract-out-modes") - _dense_out(w, h))) <= 1e-12


@given(
    d=st.integers(1, 3),
    data=st.data(),
)
@settings(max_examples=40, deadline=None)
def test_times_layer_property(d, data):
    I = tuple(data.draw(st.integers(1, 4)) for _ in range(d))
    J = tuple(data.draw(st.integers(1, 4)) for _ in range(d))
    ranks = (1,) + tuple(data.draw(st.integers(1, 4)) for _ in range(d - 1)) + (1,)
    seed = data.draw(st.integers(0, 2**16))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w = random_mpo(I, J, ranks, scale=1.0, seed=seed)
    r = np.random.default_rng(seed)
    v = r.integers(0, 2, size=(3,) + I).astype(float)
    h = r.integers(0, 2, size=(3,) + J).astype(float)
    for b in range(3):
        assert np.max(np.abs(mpo_times_layer(w, v, "in")[b] - _dense_in(w, v[b]))) <= 1e-12
        assert np.max(np.abs(mpo_times_layer(w, h, "out")[b] - _dense_out(w, h[b]))) <= 1e-12


def test_times_layer_zero_cases(rng):
    w = random_mpo((3, 4), (2, 3), (1, 4, 1), scale=1.0, seed=1)
    assert not np.any(mpo_times_layer(w, np.zeros((3, 4))))
    zero = random_mpo((3, 4), (2, 3), (1, 4, 1), scale=0.0, seed=1)
    assert not np.any(mpo_times_layer(zero, np.ones((3, 4))))
    with pytest.raises(ShapeError):
        mpo_times_layer(w, np.ones((4, 3)))
    with pytest.raises(ValueError):
        mpo_times_layer(w, np.ones((3, 4)), side="sideways")


def test_environment_single_core(rng):
    w = random_mpo((3,), (2,), (1, 1), scale=1.0, seed=0)
    v, h = rng.normal(size=3), rng.normal(size=2)
    assert np.allclose(gradient_environment(w, v, h, 1), np.outer(v, h).reshape(1, 3, 2, 1))


def test_environment_zero_layers():
    w = random_mpo((2, 3), (2, 2), (1, 3, 1), scale=1.0, seed=0)
    assert not np.any(gradient_environment(w, np.zeros((2, 3)), np.ones((2, 2)), 2))
    assert not np.any(gradient_environment(w, np.ones((2, 3)), np.zeros((2, 2)), 1))
    with pytest.raises(ValueError):
        gradient_environment(w, np.ones((2, 3)), np.ones((2, 2)), 3)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_environment_matches_finite_differences(rng, k):
    w = random_mpo((2, 2, 2), (2, 2, 2), (1, 2, 2, 1), scale=1.0, seed=5)
    v = rng.integers(0, 2, size=(2, 2, 2)).astype(float)
    h = rng.random((2, 2, 2))
    env = gradient_environment(w, v, h, k)
    core = w.cores[k - 1]
    step = 1e-5
    for idx in np.ndindex(core.shape):
        old = core[idx]
        core[idx] = old + step
        up = scalar(w, v, h)
        core[idx] = old - step
        down = scalar(w, v, h)
        core[idx] = old
        fd = (up - down) / (2 * step)
        assert abs(env[idx] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_environment_multilinearity(rng):
    w = random_mpo((3, 2, 2), (2, 3, 2), (1, 3, 2, 1), scale=1.0, seed=2)
    v = rng.integers(0, 2, size=(4, 3, 2, 2)).astype(float)
    h = rng.random((4, 2, 3, 2))
    total = scalar(w, v, h).sum()
    for k in range(1, 4):
        env = gradient_environment(w, v, h, k)
        assert np.vdot(env, w.cores[k - 1]) == pytest.approx(total, rel=1e-12)


def test_check_ranks_returns_tuple():
    assert check_ranks([1, 3, 1], 2) == (1, 3, 1)
