import math

import pytest

from tauleap.cme import TruncationSpec
from tauleap.convergence import convergence_experiment
from tauleap.kernels import make_kernel
from tauleap.network import decay_network
from tauleap.pmf import SparsePmf

TAUS = [0.25, 0.125, 0.0625, 0.03125]


def test_decay_explicit_first_order():
    k = make_kernel("explicit", decay_network(1.0))
    rep = convergence_experiment(k, SparsePmf.delta((10,)), 1.0, TAUS, [0, 1], TruncationSpec.box((10,), mass_tolerance=1e-12))
    for r in (0, 1):
        assert 0.8 <= rep[r].fitted_order <= 1.3
        assert rep[r].conclusive and not rep[r].flags
        assert all(e2 < e1 for e1, e2 in zip(rep[r].errors, rep[r].errors[1:]))


def test_single_tau_flagged():
    k = make_kernel("explicit", decay_network(1.0))
    rep = convergence_experiment(k, SparsePmf.delta((3,)), 1.0, [0.1], [0], TruncationSpec.box((3,), mass_tolerance=1e-12))
    assert rep[0].fitted_order is None and "too_few_taus" in rep[0].flags
    assert rep[0].conclusive


def test_loss_dominated_flag(binding):
    k = make_kernel("remm", binding)
    trunc = TruncationSpec.box((10, 12, 10), mass_tolerance=0.5)
    rep = convergence_experiment(k, SparsePmf.delta((5, 5, 5)), 1.0, [0.5, 0.25, 0.125], [0], trunc)
    assert "loss_dominated" in rep[0].flags and not rep[0].conclusive


def test_moment_error_within_twice_variation(binding):
    k = make_kernel("explicit", binding)
    rep = convergence_experiment(k, SparsePmf.delta((3, 3, 3)), 0.5, [0.25, 0.125, 0.0625], [1, 2],
                                 TruncationSpec.box((6, 30, 6)))
    for r in (1, 2):
        for me, e in zip(rep[r].moment_errors, rep[r].errors):
            assert me <= 2 * e


def test_report_serialisable():
    k = make_kernel("explicit", decay_network(1.0))
    rep = convergence_experiment(k, SparsePmf.delta((2,)), 0.5, [0.25, 0.125, 0.0625], [0],
                                 TruncationSpec.box((2,), mass_tolerance=1e-12))
    d = rep[0].to_dict()
    assert set(d) >= {"taus", "errors", "fitted_order", "slope_stderr", "oracle_loss", "flags", "conclusive"}
    assert math.isfinite(d["fitted_order"])


def test_bad_inputs():
    k = make_kernel("explicit", decay_network(1.0))
    trunc = TruncationSpec.box((2,))
    with pytest.raises(ValueError):
        convergence_experiment(k, SparsePmf.delta((2,)), 1.0, [0.1, 0.2, 0.05], [0], trunc)
    with pytest.raises(ValueError):
        convergence_experiment(k, SparsePmf.delta((2,)), 0.0, [0.2, 0.1], [0], trunc)
