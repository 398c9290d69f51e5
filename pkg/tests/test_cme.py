import math

import numpy as np
import pytest
from scipy import linalg, stats

from tauleap.cme import TruncationError, TruncationSpec, cme_moment, cme_solve, truncated_generator
from tauleap.metrics import tv_distance
from tauleap.network import decay_network, pure_birth_network
from tauleap.pmf import NormSpec, SparsePmf


def _dense_reference(net, p0, t, upper):
    """exp(Q t) on the box by dense expm; the sink is an extra absorbing state."""
    trunc = TruncationSpec.box(upper)
    states = [tuple(s) for s in trunc.states().tolist()]
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    Q = np.zeros((n + 1, n + 1))
    for s, i in index.items():
        x = np.array(s)
        for j in range(net.n_reactions):
            rate = net.propensity_specs[j].evaluate(x)
            if rate == 0:
                continue
            tgt = tuple((x + net.nu[:, j]).tolist())
            Q[i, index.get(tgt, n)] += rate
            Q[i, i] -= rate
    v0 = np.zeros(n + 1)
    for s, w in p0.items():
        v0[index[s]] = w
    v = v0 @ linalg.expm(Q * t)
    return {s: v[i] for s, i in index.items()}, v[n]


def test_t_zero_is_identity(binding):
    p0 = SparsePmf({(2, 3, 1): 0.4, (0, 1, 0): 0.6})
    sol = cme_solve(binding, p0, 0.0, TruncationSpec.box((5, 5, 5)))
    assert sol.pmf.entries == p0.entries and sol.truncation_loss == 0.0


@pytest.mark.parametrize("t", [0.1, 0.7, 2.0, 5.0])
def test_decay_closed_form(t):
    sol = cme_solve(decay_network(1.0), SparsePmf.delta((1,)), t, TruncationSpec.box((1,), mass_tolerance=1e-12))
    assert sol.pmf[(1,)] == pytest.approx(math.exp(-t), abs=1e-10)
    assert sol.pmf[(0,)] == pytest.approx(1 - math.exp(-t), abs=1e-10)


def test_pure_birth_poisson():
    sol = cme_solve(pure_birth_network(1.0), SparsePmf.delta((0,)), 1.0, TruncationSpec.box((30,)))
    ref = SparsePmf({(k,): float(stats.poisson.pmf(k, 1.0)) for k in range(31)})
    assert tv_distance(sol.pmf, ref) <= 1e-8


def test_matches_dense_expm(binding):
    p0 = SparsePmf.delta((2, 2, 2))
    upper = (4, 12, 4)
    sol = cme_solve(binding, p0, 0.6, TruncationSpec.box(upper, mass_tolerance=1e-10), check=False)
    ref, sink = _dense_reference(binding, p0, 0.6, upper)
    for s, w in ref.items():
        assert sol.pmf[s] == pytest.approx(w, abs=1e-9)
    # the reported loss is box exits plus a series-tail bound
    assert sink - 1e-12 <= sol.truncation_loss <= sink + 1e-10


def test_mass_and_loss(binding):
    sol = cme_solve(binding, SparsePmf.delta((3, 3, 3)), 1.0, TruncationSpec.box((6, 30, 6), mass_tolerance=1e-6))
    total = sol.pmf.total()
    assert 1 - sol.truncation_loss - 1e-12 <= total <= 1 + 1e-12
    assert all(w >= 0 for _, w in sol.pmf.items())


def test_box_too_small_raises(binding):
    with pytest.raises(TruncationError):
        cme_solve(binding, SparsePmf.delta((3, 3, 3)), 2.0, TruncationSpec.box((4, 5, 4), mass_tolerance=1e-10))


def test_unchecked_solve_reports_loss(binding):
    sol = cme_solve(binding, SparsePmf.delta((3, 3, 3)), 2.0, TruncationSpec.box((4, 5, 4), mass_tolerance=1e-10),
                    check=False)
    assert sol.truncation_loss > 1e-10


def test_p0_outside_box_rejected(binding):
    with pytest.raises(ValueError):
        cme_solve(binding, SparsePmf.delta((9, 0, 0)), 1.0, TruncationSpec.box((5, 5, 5)))


def test_semigroup(binding):
    trunc = TruncationSpec.box((6, 30, 6), mass_tolerance=1e-6)
    p0 = SparsePmf.delta((3, 3, 3))
    a = cme_solve(binding, p0, 0.4, trunc)
    b = cme_solve(binding, a.pmf, 0.5, trunc)
    c = cme_solve(binding, p0, 0.9, trunc)
    assert tv_distance(b.pmf, c.pmf) <= 2 * (a.truncation_loss + b.truncation_loss + c.truncation_loss) + 1e-12


def test_enlarging_box_never_increases_loss(binding):
    p0 = SparsePmf.delta((3, 3, 3))
    losses = [cme_solve(binding, p0, 1.0, TruncationSpec.box((6, u, 6), mass_tolerance=1e-14),
                        check=False).truncation_loss
              for u in (8, 12, 18, 26)]
    assert all(b <= a + 1e-13 for a, b in zip(losses, losses[1:]))
    assert losses[0] > losses[-1]


def test_truncated_generator_columns(binding):
    Q, states, a0 = truncated_generator(binding, TruncationSpec.box((3, 4, 3)))
    dense = Q.toarray()
    # rows sum to minus the rate of leaving the box
    assert np.all(dense.sum(axis=1) <= 1e-12)
    assert np.allclose(-np.diag(dense), a0)


def test_truncation_spec():
    spec = TruncationSpec.box((2, 3), lower=(1, 0))
    assert spec.shape == (2, 4)
    assert spec.index_of(np.array([[1, 0], [2, 3], [0, 0]])).tolist() == [0, 7, -1]
    with pytest.raises(ValueError):
        TruncationSpec((3,), (2,))
    with pytest.raises(ValueError):
        TruncationSpec((0,), (2,), mass_tolerance=0.0)


def test_cme_moment_examples():
    assert cme_moment(SparsePmf.delta((0, 0)), 1) == 1.0
    assert cme_moment(SparsePmf.delta((0, 0)), 4) == 1.0
    assert cme_moment(SparsePmf.delta((1, 1)), 3) == 9.0
    sol = cme_solve(pure_birth_network(1.0), SparsePmf.delta((0,)), 1.0, TruncationSpec.box((30,)))
    assert cme_moment(sol.pmf, 1, NormSpec()) == pytest.approx(2.0, abs=1e-8)
