from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from tvmpo.ansatz import MpoAnsatz, all_amplitudes, amplitude, left_products, random_ansatz, right_products
from tvmpo.errors import DegenerateDistributionError, InvalidInputError
from tvmpo.sampler import SamplerConfig, draw_batch, initial_sample, metropolis_sweep, sample_from, sweep


def flat_ansatz(n):
    return MpoAnsatz(n, np.full((1, 4, 1, 1), 0.5, dtype=complex))


def flat_index(x):
    return np.ravel_multi_index(tuple(np.asarray(x).T), (4,) * x.shape[1])


def test_config_validation():
    with pytest.raises(InvalidInputError):
        SamplerConfig(n_samples=0)
    with pytest.raises(InvalidInputError):
        SamplerConfig(sweeps_between=0)
    assert SamplerConfig(n_samples=250, n_chains=100).rounds == 3


def test_flat_target_accepts_everything_and_is_uniform():
    a = flat_ansatz(2)
    rng = np.random.default_rng(1)
    state = initial_sample(a, 10, rng)
    counts = np.zeros(16)
    for _ in range(1000):
        state = sweep(a, state, rng)
        np.add.at(counts, flat_index(state.x), 1)
    assert state.n_accepted == state.n_proposals
    total = counts.sum()
    p = 1 / 16
    sigma = np.sqrt(total * p * (1 - p))
    assert np.all(np.abs(counts - total * p) <= 4 * sigma)


def test_sampler_matches_exact_distribution():
    rng = np.random.default_rng(7)
    a = random_ansatz(3, 1, 2, rng)
    p = np.abs(all_amplitudes(a)) ** 2
    p /= p.sum()
    cfg = SamplerConfig(n_samples=100_000, n_chains=200, seed=3)
    counts = np.zeros(64)
    gen = np.random.default_rng(cfg.seed)
    for s in draw_batch(a, cfg, initial_sample(a, cfg.n_chains, gen), gen):
        np.add.at(counts, flat_index(s.x), 1)
    assert stats.chisquare(counts, counts.sum() * p).pvalue > 1e-3


@pytest.mark.parametrize("direction", ["right", "left"])
def test_sweep_caches_are_consistent(direction, rng):
    a = random_ansatz(5, 5, 3, rng)
    state = sample_from(a, rng.integers(0, 4, size=(4, 5)))
    if direction == "left":
        state = metropolis_sweep(a, state, rng, "right")
    out = metropolis_sweep(a, state, rng, direction)
    assert out.n_proposals - state.n_proposals == 5 * 4
    fresh = amplitude(a, out.x)
    assert np.allclose(out.amp, fresh, rtol=1e-10, atol=0)
    if direction == "right":
        assert np.allclose(out.pp.left, left_products(a, out.x), rtol=1e-12, atol=1e-14)
        assert out.pp.right is None
    else:
        assert np.allclose(out.pp.right, right_products(a, out.x), rtol=1e-12, atol=1e-14)
        assert out.pp.left is None


def test_sweep_needs_matching_products(rng):
    a = random_ansatz(3, 1, 2, rng)
    state = sample_from(a, [[0, 1, 2]])
    with pytest.raises(InvalidInputError):
        metropolis_sweep(a, state, rng, "left")
    with pytest.raises(InvalidInputError):
        metropolis_sweep(a, state, rng, "up")


def test_degenerate_distribution():
    t = np.zeros((1, 4, 1, 1), dtype=complex)
    t[0, 0] = 1.0
    a = MpoAnsatz(3, t)
    rng = np.random.default_rng(0)
    state = sample_from(a, [[1, 1, 1]])
    with pytest.raises(DegenerateDistributionError):
        for _ in range(20):
            state = sweep(a, state, rng)


def test_draw_batch_counts_sweeps(rng):
    a = random_ansatz(3, 1, 2, rng)
    cfg = SamplerConfig(n_samples=1, sweeps_between=1, burn_in=5, n_chains=1)
    out = list(draw_batch(a, cfg, sample_from(a, [[0, 0, 0]]), rng))
    assert len(out) == 1
    assert out[0].sweeps == 6
    assert out[0].pp.left is not None and out[0].pp.right is not None


def test_draw_batch_is_deterministic():
    a = random_ansatz(4, 2, 2, np.random.default_rng(5))
    cfg = SamplerConfig(n_samples=50, n_chains=5)

    def run():
        g = np.random.default_rng(11)
        return np.concatenate([s.x for s in draw_batch(a, cfg, initial_sample(a, 5, g), g)])

    assert np.array_equal(run(), run())


def test_flat_target_decorrelates():
    a = flat_ansatz(4)
    rng = np.random.default_rng(2)
    cfg = SamplerConfig(n_samples=10_000, n_chains=1)
    values = [float(s.x[0].sum()) for s in draw_batch(a, cfg, initial_sample(a, 1, rng), rng)]
    v = np.asarray(values) - np.mean(values)
    corr = np.dot(v[:-1], v[1:]) / np.dot(v, v)
    assert abs(corr) < 0.05


def test_initial_sample_avoids_zero_amplitudes():
    t = np.zeros((1, 4, 1, 1), dtype=complex)
    t[0, 0] = t[0, 3] = 1.0
    a = MpoAnsatz(2, t)
    s = initial_sample(a, 8, np.random.default_rng(0))
    assert np.all(s.amp != 0)
