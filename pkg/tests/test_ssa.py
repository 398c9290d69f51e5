import math

import numpy as np
import pytest
from scipy import stats

from tauleap.cme import TruncationSpec, cme_solve
from tauleap.metrics import tv_distance
from tauleap.network import binding_birth_death_network, decay_network, pure_birth_network
from tauleap.pmf import SparsePmf
from tauleap.rng import chunk_generator, chunk_sizes
from tauleap.ssa import (
    ExplosionError,
    empirical_pmf,
    moment_summary,
    ssa_endpoints,
    ssa_ensemble,
    ssa_simulate,
)
from tauleap.network import superlinear_birth_network


def test_absorbing_state_path(binding):
    path = ssa_simulate(binding, (0, 0, 0), 3.0, 1)
    assert len(path.jump_times) == 0
    assert path.states.tolist() == [[0, 0, 0]]
    assert path.state_at(2.0).tolist() == [0, 0, 0]


def test_path_invariants(binding):
    path = ssa_simulate(binding, (5, 5, 5), 2.0, 4)
    cols = {tuple(binding.nu[:, j]) for j in range(4)}
    for a, b in zip(path.states, path.states[1:]):
        assert tuple(b - a) in cols
    assert np.all(np.diff(path.jump_times) > 0)
    assert path.jump_times.size == 0 or path.jump_times[-1] <= 2.0
    assert path.reaction_counts.sum() == len(path.jump_times)
    assert np.array_equal(path.final_state, path.states[0] + binding.nu @ path.reaction_counts)


def test_state_at_right_continuous():
    path = ssa_simulate(decay_network(2.0), (3,), 10.0, 0)
    t1 = path.jump_times[0]
    assert path.state_at(t1).tolist() == [2]
    assert path.state_at(np.nextafter(t1, 0)).tolist() == [3]


def test_decay_jump_time_mean():
    rng = np.random.default_rng(11)
    net = decay_network(2.0)
    n = 20000
    times = np.array([ssa_simulate(net, (1,), 50.0, rng).jump_times[0] for _ in range(n)])
    sigma = 0.5 / math.sqrt(n)
    assert abs(times.mean() - 0.5) <= 3 * sigma


def test_pure_birth_poisson_chi_square():
    n = 20000
    samples = ssa_ensemble(pure_birth_network(1.0), (0,), 1.0, n, seed=5)[:, 0]
    counts = np.bincount(samples, minlength=6)
    k = np.arange(6)
    probs = stats.poisson.pmf(k[:5], 1.0)
    expected = np.append(probs, 1 - probs.sum()) * n
    observed = np.append(counts[:5], counts[5:].sum())
    _, pvalue = stats.chisquare(observed, expected)
    assert pvalue > 0.001


def test_ensemble_schedule_independent(binding):
    a = ssa_ensemble(binding, (5, 5, 5), 0.5, 250, seed=9, workers=1, chunk=100)
    b = ssa_ensemble(binding, (5, 5, 5), 0.5, 250, seed=9, workers=2, chunk=100)
    assert np.array_equal(a, b)
    c = ssa_ensemble(binding, (5, 5, 5), 0.5, 250, seed=10, workers=1, chunk=100)
    assert not np.array_equal(a, c)


def test_endpoints_match_path_simulation(binding):
    # both samplers consume the generator identically
    e = ssa_endpoints(binding, (4, 4, 4), 0.7, 5, chunk_generator(3, 0))
    rng = chunk_generator(3, 0)
    p = np.array([ssa_simulate(binding, (4, 4, 4), 0.7, rng).final_state for _ in range(5)])
    assert np.array_equal(e, p)


def test_ensemble_agrees_with_cme(binding):
    n = 5000
    samples = ssa_ensemble(binding, (5, 5, 5), 0.5, n, seed=2)
    sol = cme_solve(binding, SparsePmf.delta((5, 5, 5)), 0.5, TruncationSpec.box((10, 40, 10)))
    emp = empirical_pmf(samples)
    support = len(emp)
    assert tv_distance(emp, sol.pmf) <= 2 * math.sqrt(support / n) + sol.truncation_loss


def test_explosion_guard():
    with pytest.raises(ExplosionError):
        ssa_simulate(superlinear_birth_network(1.0), (2,), 10.0, 0, jump_cap=1000)


def test_chunks_and_summary():
    assert chunk_sizes(2500, 1000) == [1000, 1000, 500]
    assert chunk_sizes(0, 10) == []
    with pytest.raises(ValueError):
        chunk_sizes(-1, 10)
    s = moment_summary(np.array([[1.0], [3.0]]))
    assert s["mean"] == [2.0] and s["n"] == 2
    assert moment_summary(np.zeros((0, 2)))["mean"] is None
    assert len(ssa_ensemble(binding_birth_death_network(), (1, 1, 1), 1.0, 0, seed=1)) == 0
