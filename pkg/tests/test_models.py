import math

import numpy as np
import pytest

from wannierlab.models import (SX, SZ, IdempotencyError, ModelError, SpectralWindow,
                               admissibility_check, bloch_matrices, build_model, bulk_spectrum,
                               detect_gaps, k_grid, select_window, spectral_projection,
                               spectrum, truncate)
from wannierlab.sequences import GammaSequence, CellIndex, SpectralGapError, convolve, opnorm

from conftest import model, projection, window

GAPPED = ["ssh", "chern_trivial", "chern_topological", "pg", "dihedral", "hofstadter", "heis",
          "decorated_chain"]


@pytest.mark.parametrize("name", GAPPED + ["flat_chain", "metallic_chain"])
def test_presets_hermitian(name):
    m = model(name)
    assert m.hermiticity_defect() == 0
    H = truncate(m, 3)
    assert np.abs(H - H.conj().T).max() == 0
    assert H.shape[0] == len(m.group.ball_array(3)) * m.d


def test_bad_parameters():
    with pytest.raises(ModelError):
        build_model("nope")
    with pytest.raises(ModelError):
        build_model("ssh", t3=1.0)
    with pytest.raises(ModelError):
        build_model("ssh", t1=float("nan"))
    with pytest.raises(ModelError):
        SpectralWindow(1.0, 0.0)


def test_z1_truncation_is_tridiagonal():
    G = build_model("flat_chain").group
    hop = GammaSequence.from_dict(G, {(1,): 1.0, (-1,): 1.0})
    from wannierlab.models import CrystalModel
    H = truncate(CrystalModel("hop", G, 1, hop), 1)
    ball = G.ball(1)
    order = np.argsort([g[0] for g in ball])
    H = H[np.ix_(order, order)]
    assert np.array_equal(H.real, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def test_sigma_z_spectrum():
    assert spectrum(SZ).tolist() == [-1.0, 1.0]
    with pytest.raises(ModelError):
        spectrum(np.array([[0, 1], [0, 0]]))


def test_flat_chain():
    m = model("flat_chain")
    e = spectrum(truncate(m, 8))
    assert np.abs(np.abs(e) - 1).max() < 1e-10
    gaps = detect_gaps(e)
    assert len(gaps) == 1
    assert gaps[0].E_hi == pytest.approx(0.0) and gaps[0].margin_hi == pytest.approx(1.0)
    p = projection("flat_chain").kernel
    assert p.support_radius() <= 1
    assert p.get((0,)) == pytest.approx(0.5 * (np.eye(2) - SX))
    assert p.trace_at_identity().real == pytest.approx(1.0, abs=1e-6)


def test_free_chain_density():
    # hopping 1 on Z: interior eigenvalues follow the arcsine law of 2 cos k
    G = build_model("flat_chain").group
    from wannierlab.models import CrystalModel
    hop = GammaSequence.from_dict(G, {(1,): 1.0, (-1,): 1.0})
    e = spectrum(truncate(CrystalModel("hop", G, 1, hop), 150))
    cdf = np.searchsorted(e, [-1.0, 0.0, 1.0]) / len(e)
    exact = 0.5 + np.arcsin(np.array([-0.5, 0.0, 0.5])) / np.pi
    assert np.allclose(cdf, exact, atol=0.01)


def test_metallic_chain_has_no_gap():
    m = model("metallic_chain")
    e = bulk_spectrum(m)
    assert not [g for g in detect_gaps(e, 0.1) if abs(g.E_hi) < 0.5]
    with pytest.raises(SpectralGapError):
        select_window(m)
    with pytest.raises(SpectralGapError):
        spectral_projection(m, SpectralWindow(-3, 0, math.inf, 0.01), 20, method="bloch")


def test_metallic_fermi_projection_is_not_admissible():
    m = model("metallic_chain")
    n = 4001
    ks = 2 * np.pi * (np.arange(n) + 0.5) / n
    w, V = np.linalg.eigh(bloch_matrices(m, ks[:, None]))
    P = V[:, :, :1] @ V[:, :, :1].conj().transpose(0, 2, 1)
    keys = np.arange(-30, 31)
    blocks = [np.mean(P * np.exp(1j * ks * g)[:, None, None], axis=0) for g in keys]
    rep = admissibility_check(GammaSequence(m.group, keys[:, None], np.array(blocks)))
    assert not rep.admissible
    assert rep.fit.s < 2


def test_chern_trivial_gap():
    m = model("chern_trivial")
    E = np.linalg.eigvalsh(bloch_matrices(m, k_grid(48, 2)))
    assert np.abs(E).min() == pytest.approx(2.0, abs=1e-9)
    assert window("chern_trivial").E_hi == pytest.approx(0.0, abs=1e-9)


def test_hofstadter_three_bands():
    m = model("hofstadter")
    gaps = detect_gaps(bulk_spectrum(m))
    assert len(gaps) == 2
    # magnetic Bloch matrix at k = 0: three bands, edges at -1 - sqrt 3 and 1 + sqrt 3
    e = bulk_spectrum(m)
    assert e.min() == pytest.approx(-1 - np.sqrt(3), abs=1e-9)
    assert gaps[0].E_hi == pytest.approx(-(1 + np.sqrt(3)) / 2, abs=1e-9)


def test_translation_invariance_of_truncation(rng):
    for name in ("pg", "heis", "dihedral"):
        m = model(name)
        G, d = m.group, m.d
        R = 4
        ball = G.ball_array(R)
        H = truncate(m, R)
        idx = CellIndex(G, ball)
        inner = ball[G.lengths(ball) <= 1]
        for gamma in G.generators:
            moved = idx.find(G.mul_arrays(np.array(gamma)[None], inner))
            orig = idx.find(inner)
            for i, j in zip(orig, moved):
                for k, l in zip(orig, moved):
                    assert np.allclose(H[i * d:(i + 1) * d, k * d:(k + 1) * d],
                                       H[j * d:(j + 1) * d, l * d:(l + 1) * d], atol=1e-15)


@pytest.mark.parametrize("name", ["ssh", "pg", "dihedral", "decorated_chain"])
def test_projection_invariants(name):
    p = projection(name)
    assert p.idempotency < 1e-8
    assert p.self_adjointness < 1e-12
    assert p.rank() == pytest.approx(round(p.rank()), abs=1e-6)
    assert p.decay.alpha > 0


def test_enlarging_R_keeps_blocks():
    small = projection("ssh", 12).kernel
    big = projection("ssh", 16).kernel.restrict(small.support_radius())
    assert big.max_abs_diff(small) < 1e-8


def test_ed_agrees_with_bloch():
    ed = projection("chern_trivial", 12, "ed").kernel
    bl = projection("chern_trivial", 12, "bloch").kernel
    assert ed.max_abs_diff(bl) < 1e-3


def test_chern_kernel_decay():
    # topology does not change kernel decay: both phases fit an exponential
    for name in ("chern_trivial", "chern_topological"):
        fit = admissibility_check(projection(name)).fit
        assert fit.alpha > 0.3 and fit.residual_exp < 0.5
        # six shells cannot separate exp from power law; 16 shells can
        assert admissibility_check(projection(name, 32, "bloch")).verdict == "Schwartz-class"


def test_idempotency_guard():
    m = model("hofstadter")
    with pytest.raises(IdempotencyError):
        spectral_projection(m, window("hofstadter"), 8, tol=1e-8)


def test_sign_backend_matches_ed():
    ed = projection("pg", 12, "ed").kernel
    sg = projection("pg", 12, "sign").kernel
    # boundary error of the open truncation
    assert ed.max_abs_diff(sg) < 1e-6
    assert opnorm(convolve(sg, sg) - sg) < 1e-8
