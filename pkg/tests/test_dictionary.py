import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from mrh.dictionary import (
    TrainConfig, VisualDictionary, fit, load_dict, log_likelihood, posterior_histogram,
    posterior_histograms, save_dict, train,
)
from mrh.errors import ConfigError, FormatError, InvariantError

from conftest import two_cluster_dictionary


def posterior_oracle(d, f):
    dens = np.array([
        w * multivariate_normal(mean=m, cov=np.diag(v)).pdf(f)
        for w, m, v in zip(d.weights, d.means, d.variances)
    ])
    return dens / dens.sum()


def test_single_component_closed_form(rng):
    x = rng.standard_normal((300, 15)) * 3 + 1
    d = train(x, TrainConfig(G=1, seed=0))
    np.testing.assert_array_equal(d.weights, [1.0])
    np.testing.assert_allclose(d.means[0], x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(d.variances[0], x.var(axis=0), rtol=1e-10)


def test_single_component_variance_floor():
    x = np.zeros((50, 15))
    x[:, 0] = np.arange(50)
    d = train(x, TrainConfig(G=1, seed=0))
    # zero-variance dimensions floored at scale * 1e-12
    np.testing.assert_allclose(d.variances[0, 1:], 1e-4 * 1e-12)


def test_two_separated_clusters():
    rng = np.random.default_rng(77)
    a = rng.standard_normal((500, 15))
    b = rng.standard_normal((500, 15))
    a[:, 0] += 10
    b[:, 0] -= 10
    d = train(np.vstack([a, b]), TrainConfig(G=2, seed=3))
    centers = sorted(d.means[:, 0])
    assert abs(centers[0] + 10) < 0.5 and abs(centers[1] - 10) < 0.5
    assert np.all((d.weights >= 0.4) & (d.weights <= 0.6))


def test_training_is_deterministic(rng):
    x = rng.standard_normal((800, 15))
    cfg = TrainConfig(G=8, seed=5, max_em_iters=20)
    assert save_dict(train(x, cfg)) == save_dict(train(x, cfg))
    assert save_dict(train(x, cfg, threads=4)) == save_dict(train(x, cfg, threads=1))


def test_training_thread_count_independent_multi_chunk(rng):
    x = rng.standard_normal((9000, 15))
    cfg = TrainConfig(G=4, seed=2, max_em_iters=5)
    assert save_dict(train(x, cfg, threads=1)) == save_dict(train(x, cfg, threads=3))


def test_training_rejects_bad_input(rng):
    with pytest.raises(ConfigError, match="insufficient"):
        train(rng.standard_normal((3, 15)), TrainConfig(G=4))
    x = rng.standard_normal((20, 15))
    x[3, 2] = np.nan
    with pytest.raises(ConfigError, match="non-finite"):
        train(x, TrainConfig(G=2))


def test_em_log_likelihood_monotone(rng):
    x = np.vstack([rng.standard_normal((400, 15)) + k for k in range(4)])
    d, history = fit(x, TrainConfig(G=6, seed=0, max_em_iters=60, rel_tol=1e-9))
    assert len(history) > 2
    assert np.all(np.diff(history) >= -1e-8)
    assert history[-1] == pytest.approx(log_likelihood(d, x), rel=1e-9)


def test_posterior_single_component():
    d = VisualDictionary(np.array([1.0]), np.zeros((1, 15)), np.ones((1, 15)))
    np.testing.assert_array_equal(posterior_histogram(d, np.full(15, 3.0)), [1.0])


def test_posterior_at_component_mean():
    d = two_cluster_dictionary()
    f = d.means[0]
    h = posterior_histogram(d, f)
    assert h[0] >= 1 - 1e-6
    np.testing.assert_allclose(h, posterior_oracle(d, f), atol=1e-12)


def test_posterior_symmetric_midpoint():
    h = posterior_histogram(two_cluster_dictionary(), np.zeros(15))
    np.testing.assert_allclose(h, [0.5, 0.5], atol=1e-12)


def test_posterior_matches_density_oracle(small_dict, rng):
    for f in rng.standard_normal((20, 15)):
        np.testing.assert_allclose(posterior_histogram(small_dict, f), posterior_oracle(small_dict, f), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=15, max_size=15))
def test_posterior_simplex_extreme_inputs(values):
    d = two_cluster_dictionary()
    h = posterior_histogram(d, np.array(values))
    assert np.all(h >= 0) and abs(h.sum() - 1) <= 1e-9


def test_responsibilities_sum_to_one(small_dict, rng):
    r = posterior_histograms(small_dict, rng.standard_normal((500, 15)) * 5)
    np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-9)


def test_log_likelihood_standard_normal_at_zero():
    d = VisualDictionary(np.array([1.0]), np.zeros((1, 15)), np.ones((1, 15)))
    assert log_likelihood(d, np.zeros((1, 15))) == pytest.approx(-7.5 * np.log(2 * np.pi), abs=1e-12)


def test_log_likelihood_additive_and_finite(small_dict, rng):
    x = rng.standard_normal((50, 15))
    ll = log_likelihood(small_dict, x)
    assert log_likelihood(small_dict, np.vstack([x, x])) == pytest.approx(2 * ll, abs=1e-9)
    assert np.isfinite(log_likelihood(small_dict, np.full((1, 15), 1e6)))
    with pytest.raises(ConfigError):
        log_likelihood(small_dict, np.zeros((0, 15)))


def test_dict_round_trip_bitwise(small_dict):
    back = load_dict(save_dict(small_dict))
    for name in ("weights", "means", "variances"):
        assert getattr(back, name).tobytes() == getattr(small_dict, name).tobytes()


def test_dict_layout(small_dict):
    data = save_dict(small_dict)
    assert data[:8] == b"MRHDICT1"
    assert int.from_bytes(data[8:12], "little") == 16
    assert int.from_bytes(data[12:16], "little") == 15
    assert len(data) == 16 + 8 * (16 + 2 * 16 * 15)


def test_dict_bad_magic(small_dict):
    data = bytearray(save_dict(small_dict))
    data[:8] = b"NOTADICT"
    with pytest.raises(FormatError, match="bad magic"):
        load_dict(bytes(data))


def test_dict_truncated_and_dimension(small_dict):
    data = save_dict(small_dict)
    with pytest.raises(FormatError, match="truncated"):
        load_dict(data[:-8])
    bad = bytearray(data)
    bad[12:16] = (14).to_bytes(4, "little")
    with pytest.raises(FormatError, match="dimension"):
        load_dict(bytes(bad))


def test_dict_weight_invariant_on_load(small_dict):
    data = bytearray(save_dict(small_dict))
    w = np.frombuffer(bytes(data[16:16 + 8 * 16]), dtype="<f8") * 0.5
    data[16:16 + 8 * 16] = w.astype("<f8").tobytes()
    with pytest.raises(InvariantError):
        load_dict(bytes(data))


def test_dictionary_invariants():
    with pytest.raises(InvariantError):
        VisualDictionary(np.array([0.5, 0.5]), np.zeros((2, 15)), np.zeros((2, 15)))
    with pytest.raises(InvariantError):
        VisualDictionary(np.array([1.0]), np.zeros((1, 14)), np.ones((1, 14)))
