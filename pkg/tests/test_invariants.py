import numpy as np
import pytest

from wannierlab.groups import make_group
from wannierlab.invariants import (FRAME_ONLY, GOOD, KClass, berry_flux, bloch_frames,
                                   bloch_projector, chern_momentum, chern_number_momentum,
                                   chern_number_real_space, compute_kclass, diophantine_label,
                                   k_verdict, trace_per_cell, z2_fixed_point_invariants)
from wannierlab.models import CrystalModel, ModelError, SpectralWindow, build_model, select_window
from wannierlab.sequences import GammaSequence

from conftest import model, projection, window

# orientation fixture: with H(k) = sum_g h_g e^{ik.g} the m = 1 band below the gap has +1
CHERN_M1 = 1


def chern_of(m, n_k=32):
    M = build_model("chern", m=m)
    return chern_momentum(M, select_window(M), n_k)


def test_sign_fixture():
    assert chern_of(1.0) == CHERN_M1
    assert chern_of(-1.0) == -CHERN_M1
    assert chern_of(4.0) == 0
    assert chern_of(-4.0) == 0


@pytest.mark.parametrize("n_k", [20, 24, 32, 48])
def test_grid_stability(n_k):
    assert chern_of(1.0, n_k) == CHERN_M1
    assert chern_of(4.0, n_k) == 0


def test_flux_sums_to_integer_and_gauge_invariance(rng):
    M = model("chern_topological")
    _, U = bloch_frames(M, window("chern_topological"), 24)
    F = berry_flux(U)
    assert F.sum() / (2 * np.pi) == pytest.approx(CHERN_M1, abs=1e-9)
    phases = np.exp(2j * np.pi * rng.random(U.shape[:2] + (1, U.shape[-1])))
    assert np.allclose(berry_flux(U * phases), F, atol=1e-10)
    # projectors carry the same information as frames
    _, P = bloch_projector(M, window("chern_topological"), 24)
    assert chern_number_momentum(P) == CHERN_M1
    assert np.allclose(np.trace(P, axis1=-2, axis2=-1).real, 1.0)


def test_flat_chain_rank_and_frames_need_2d():
    kc = compute_kclass(model("flat_chain"), projection("flat_chain"))
    assert kc.invariants["rank"] == 1 and kc.verdict == "free"
    with pytest.raises(ModelError):
        bloch_frames(model("flat_chain"), window("flat_chain"))


def test_real_space_chern_at_R12():
    triv = chern_number_real_space(projection("chern_trivial"))
    top = chern_number_real_space(projection("chern_topological"))
    assert abs(triv.value) < 0.05 and triv.nearest == 0 and triv.reliable
    assert abs(top.value - CHERN_M1) < 0.05 and top.nearest == CHERN_M1


def test_hofstadter_invariants():
    p = projection("hofstadter", 32, "bloch")
    assert trace_per_cell(p) == pytest.approx(1 / 3, abs=0.01)
    rs = chern_number_real_space(p)
    assert rs.deviation < 0.05
    assert rs.nearest == diophantine_label(1, 3, 1) == 1
    kc = compute_kclass(model("hofstadter"), p)
    assert kc.invariants["chern_magnetic_bloch"] == rs.nearest
    assert kc.verdict == "non-free" and kc.predicted == FRAME_ONLY


def test_diophantine_labels():
    assert diophantine_label(1, 3, 2) == -1
    assert diophantine_label(2, 7, 3) == -2
    assert diophantine_label(1, 4, 2) in (2, -2)


def test_trace_per_cell_bounds():
    for name in ("ssh", "pg", "heis", "dihedral", "decorated_chain"):
        p = projection(name, 12, "sign" if name == "heis" else "ed")
        tr = trace_per_cell(p)
        assert 0 <= tr <= p.d
        assert tr == pytest.approx(round(tr), abs=1e-6)
    G = make_group("Pg")
    assert trace_per_cell(GammaSequence.identity(G, 3)) == 3


def reflection_model(hops):
    G = make_group("InfDihedral")
    d = {g: np.array([[v]]) for g, v in hops.items()}
    d[(1, 0)] = d[(-1, 0)] = np.array([[0.1]])
    return CrystalModel("reflection", G, 1, GammaSequence.from_dict(G, d))


LOWER = SpectralWindow(-5.0, 0.0, np.inf, 0.5)


@pytest.mark.parametrize("hops, triple", [
    ({(0, 1): -1.0}, (1, 0, 0)),   # bonding across the centre at 0: even orbital
    ({(0, 1): 1.0}, (1, 1, 1)),    # antibonding: odd orbital
    ({(1, 1): -1.0}, (1, 0, 1)),   # bonding across the centre at 1/2
    ({(1, 1): 1.0}, (1, 1, 0)),
])
def test_fixed_point_triples(hops, triple):
    M = reflection_model(hops)
    assert M.hermiticity_defect() == 0
    assert z2_fixed_point_invariants(M, LOWER) == triple
    kc = compute_kclass(M, window=LOWER)
    assert kc.verdict == "non-free"


def test_dihedral_preset_is_free():
    assert z2_fixed_point_invariants(model("dihedral")) == (2, 1, 1)
    kc = compute_kclass(model("dihedral"), projection("dihedral"))
    assert kc.verdict == "free" and kc.predicted == GOOD.format(n=1)


def test_k_verdict_table():
    assert k_verdict(KClass("Pg", {"rank": 2})).predicted == GOOD.format(n=2)
    assert k_verdict(KClass("Zd", {"rank": 1, "chern": [1], "dim": 2})).verdict == "non-free"
    assert k_verdict(KClass("Zd", {"rank": 1, "chern": [0], "dim": 2})).verdict == "free"
    assert k_verdict(KClass("Zd", {"rank": 1, "chern": [0, 0, 0], "dim": 3})).verdict == \
        "undetermined"
    heis = k_verdict(KClass("HeisZ", {"trace": 1.0}))
    assert heis.verdict == "stably-free-hence-free" and heis.predicted == GOOD.format(n=1)
    assert k_verdict(KClass("HeisZ", {"trace": 0.5})).verdict == "non-free"
    assert k_verdict(KClass("TwistedZ2", {"trace": 1 / 3, "chern": 1})).verdict == "non-free"
    assert k_verdict(KClass("InfDihedral", {"triple": [4, 2, 2]})).predicted == GOOD.format(n=2)
    assert k_verdict(KClass("InfDihedral", {"triple": [2, 1, 0]})).verdict == "non-free"


@pytest.mark.parametrize("name, verdict", [
    ("ssh", "free"), ("chern_trivial", "free"), ("chern_topological", "non-free"),
    ("pg", "free"), ("heis", "stably-free-hence-free"),
])
def test_compute_kclass(name, verdict):
    p = projection(name, 12, "sign" if name == "heis" else "ed")
    kc = compute_kclass(model(name), p)
    assert kc.verdict == verdict
    assert kc.to_dict()["family"] == model(name).group.family
