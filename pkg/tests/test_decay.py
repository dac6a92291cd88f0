import numpy as np
import pytest

from wannierlab.decay import classify, fit_decay, radial_profile

L = np.arange(0, 16)


def test_exponential_profile():
    fit = fit_decay(L, 3.0 * np.exp(-0.7 * L))
    assert fit.alpha == pytest.approx(0.7, abs=1e-10)
    assert fit.C_exp == pytest.approx(3.0)
    assert fit.residual_exp < 1e-10
    assert classify(fit) == "Schwartz-class"


def test_power_profile():
    fit = fit_decay(L, (1.0 + L) ** -7.0)
    assert fit.s == pytest.approx(7.0, abs=1e-10)
    assert fit.residual_pow < 1e-10
    assert classify(fit) == "rapid-decay"
    slow = fit_decay(L, (1.0 + L) ** -2.0)
    assert classify(slow) == "slow"
    assert classify(slow, l2_sum=1.0) == "L2_Gamma only"


def test_strictly_local_profile():
    prof = np.zeros(8)
    prof[:2] = [1.0, 0.5]
    fit = fit_decay(np.arange(8), prof)
    assert np.isinf(fit.alpha)
    assert classify(fit) == "Schwartz-class"
    assert np.isinf(fit_decay(np.arange(3), np.zeros(3)).alpha)


def test_radial_profile_takes_shell_max():
    Ls, prof = radial_profile([0, 1, 1, 2, 5], [1.0, 0.2, 0.3, 0.1, 0.05], L_max=3)
    assert Ls.tolist() == [0, 1, 2, 3]
    assert prof.tolist() == [1.0, 0.3, 0.1, 0.05]
