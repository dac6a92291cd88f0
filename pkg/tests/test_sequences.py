import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wannierlab.sequences import (GammaSequence, ShapeError, SmoothingError, SpectralGapError,
                                  NotInvertibleError, block_truncation, convolve,
                                  derivation_power, fitted_constant, holomorphic_step,
                                  inverse_sqrt, involution, left_matrix, module_inner_product,
                                  operator_norm, opnorm, polar_unitary, projection_smoothing,
                                  sign_function, sobolev_norm, sobolev_profile)

from conftest import group, model, projection


def rand(G, rng, shape=(2, 2), radius=2, decay=0.3):
    return GammaSequence.random(G, shape, radius, rng, decay=decay)


def naive_convolve(a, b):
    """Dictionary double loop, independent of the vectorized kernel."""
    G = a.group
    out = {}
    for g, x in a.items():
        for h, y in b.items():
            k = G.multiply(g, h)
            phase = G.cocycle(g, h) if a.twisted else 1.0
            out[k] = out.get(k, 0) + phase * (x @ y)
    return GammaSequence.from_dict(G, out, a.twisted)


def test_delta_products(any_group):
    G = any_group
    a = rand(G, np.random.default_rng(1))
    e = GammaSequence.identity(G, 2)
    assert convolve(e, a).max_abs_diff(a) == 0
    g, h = map(tuple, G.random_elements(2, np.random.default_rng(2), 3))
    prod = convolve(GammaSequence.delta(G, g), GammaSequence.delta(G, h))
    assert prod.keys.tolist() == [list(G.multiply(g, h))]
    assert abs(prod.blocks[0, 0, 0] - G.cocycle(g, h)) < 1e-15


def test_twisted_commutation_phase():
    G = group("TwistedZ2")
    x = GammaSequence.delta(G, (1, 0))
    y = GammaSequence.delta(G, (0, 1))
    xy = convolve(x, y).get((1, 1))[0, 0]
    yx = convolve(y, x).get((1, 1))[0, 0]
    assert yx / xy == pytest.approx(np.exp(2j * np.pi / 3), abs=1e-14)


def test_convolution_matches_naive(any_group, rng):
    a, b = rand(any_group, rng), rand(any_group, rng)
    assert convolve(a, b).max_abs_diff(naive_convolve(a, b)) < 1e-12


def test_associativity(any_group, rng):
    for _ in range(5):
        a, b, c = (rand(any_group, rng) for _ in range(3))
        lhs = convolve(convolve(a, b), c)
        rhs = convolve(a, convolve(b, c))
        assert lhs.max_abs_diff(rhs) < 1e-11


def test_involution(any_group, rng):
    G = any_group
    g = tuple(G.random_elements(1, rng, 3)[0])
    if not G.is_twisted:
        assert involution(GammaSequence.delta(G, g)).keys.tolist() == [list(G.inverse(g))]
    for _ in range(100):
        a = rand(G, rng, radius=1)
        assert involution(involution(a)).max_abs_diff(a) < 1e-15
    for _ in range(10):
        a, b = rand(G, rng), rand(G, rng)
        lhs = involution(naive_convolve(a, b))
        rhs = naive_convolve(involution(b), involution(a))
        assert lhs.max_abs_diff(rhs) < 1e-12
        aa = convolve(a, involution(a))
        assert aa.max_abs_diff(involution(aa)) < 1e-12


def test_shape_and_twist_mismatch():
    G = group("Z2")
    with pytest.raises(ShapeError):
        convolve(GammaSequence.identity(G, 2), GammaSequence.identity(G, 3))
    with pytest.raises(Exception):
        convolve(GammaSequence.identity(G, 1, twisted=False),
                 GammaSequence.identity(group("TwistedZ2"), 1))


def test_sobolev_examples(any_group, rng):
    G = any_group
    e = GammaSequence.identity(G)
    assert sobolev_norm(e, 3.7) == pytest.approx(1.0)
    gen = GammaSequence.delta(G, G.generators[0])
    assert sobolev_norm(gen, 1) == pytest.approx(2.0)
    assert sobolev_profile(rand(G, rng, radius=3)).is_monotone()


def test_operator_norm_simple():
    G = group("Z1")
    assert operator_norm(GammaSequence.identity(G), 4) == pytest.approx(1.0)
    hop = GammaSequence.from_dict(G, {(1,): 1.0, (-1,): 1.0})
    vals = [operator_norm(hop, R) for R in (5, 10, 20, 40, 80)]
    assert np.all(np.diff(vals) >= -1e-12)
    assert vals[-1] == pytest.approx(2.0, abs=2e-3)
    assert vals[-1] <= 2.0 + 1e-12


def test_operator_norm_warns_below_support():
    hop = GammaSequence.from_dict(group("Z1"), {(3,): 1.0})
    with pytest.warns(UserWarning):
        operator_norm(hop, 2)


def test_operator_norm_dominated_by_sobolev(rng):
    # ||a||_op <= ||a||_1 <= ||a||_s (sum_g (1+L)^-2s)^1/2 by Cauchy-Schwarz
    for name, s in (("Z2", 1.5), ("HeisZ", 2.5)):
        G = group(name)
        C = np.sqrt(np.sum((1.0 + G.lengths(G.ball_array(2))) ** (-2 * s)))
        lhs, rhs = [], []
        for _ in range(10):
            a = rand(G, rng, shape=(1, 1), radius=2, decay=0.5)
            lhs.append(opnorm(a))
            rhs.append(sobolev_norm(a, s))
        assert fitted_constant(lhs, rhs) <= C + 1e-9


def test_derivation_power(rng):
    G = group("Z2")
    a = rand(G, rng, radius=2)
    d0 = derivation_power(a, 0, 6)
    assert np.allclose(d0.matrix, left_matrix(a, d0.rows, d0.cols))
    assert derivation_power(GammaSequence.identity(G, 2), 3, 5).norm < 1e-14
    # |L(g) - L(rho^-1 g)| <= L(rho) gives ||delta^n a|| <= ||a||_{1 + n} (l1 bound)
    for n in (1, 2, 3):
        b = rand(G, rng, radius=3, decay=0.4)
        l1 = sum(np.linalg.norm(blk, 2) * (1 + L) ** n for blk, L in zip(b.blocks, b.lengths()))
        assert derivation_power(b, n, 8).norm <= l1 + 1e-9
    with pytest.raises(ValueError):
        derivation_power(a, -1, 4)


def test_module_inner_product(any_group, rng):
    G = any_group
    h = rand(G, rng, shape=(3, 1))
    k = rand(G, rng, shape=(3, 1))
    a = rand(G, rng, shape=(1, 1), radius=1)
    hh = module_inner_product(h, h).get(G.identity)[0, 0]
    assert hh.real == pytest.approx(np.sum(np.abs(h.blocks) ** 2)) and abs(hh.imag) < 1e-12
    lhs = module_inner_product(h, convolve(k, a))
    rhs = convolve(module_inner_product(h, k), a)
    assert lhs.max_abs_diff(rhs) < 1e-12
    assert module_inner_product(k, h).max_abs_diff(involution(module_inner_product(h, k))) < 1e-12
    with pytest.raises(ShapeError):
        module_inner_product(h, rand(G, rng, shape=(2, 1)))


def test_cauchy_schwarz_square_mode(any_group, rng):
    G = any_group
    R = 3 if G.family == "HeisZ" else 6
    for _ in range(5):
        x = rand(G, rng, shape=(2, 1), radius=1)
        y = rand(G, rng, shape=(2, 1), radius=1)
        xy = operator_norm(module_inner_product(x, y), R, mode="square")
        xx = operator_norm(module_inner_product(x, x), R, mode="square")
        yy = operator_norm(module_inner_product(y, y), R, mode="square")
        assert xy <= np.sqrt(xx * yy) * (1 + 1e-10)


def test_holomorphic_step():
    p = projection("ssh").kernel
    step = holomorphic_step(p, 10)
    assert step.projection.restrict(5).max_abs_diff(p.restrict(5)) < 1e-8
    step = holomorphic_step(0.9 * p, 10)
    assert step.projection.restrict(5).max_abs_diff(p.restrict(5)) < 1e-8
    G = group("Z1")
    with pytest.raises(SpectralGapError):
        holomorphic_step(GammaSequence.identity(G, 2) * 0.5, 6)


def test_polar_unitary():
    G = group("Z2")
    u, _ = polar_unitary(GammaSequence.identity(G, 2) * 2.0, 4)
    assert u.max_abs_diff(GammaSequence.identity(G, 2)) < 1e-12
    shift = GammaSequence.delta(G, (1, 0), np.eye(2))
    u, _ = polar_unitary(shift, 4)
    assert u.max_abs_diff(shift) < 1e-12
    with pytest.raises(NotInvertibleError):
        polar_unitary(GammaSequence.zeros(G, (2, 2)) + GammaSequence.delta(G, None, np.diag([1, 0])), 3)


def test_inverse_sqrt_converges():
    G = group("Z1")
    a = GammaSequence.from_dict(G, {(0,): 2.0, (1,): 0.3, (-1,): 0.3})
    Y, info = inverse_sqrt(a, 30)
    assert info.converged and info.iterations < 40
    check = convolve(convolve(Y, a, 30), Y, 30).restrict(10)
    assert check.max_abs_diff(GammaSequence.identity(G)) < 1e-10


def test_sign_function_gives_gap_projection():
    m = model("ssh")
    one = GammaSequence.identity(m.group, 2)
    S, info = sign_function(m.hamiltonian, 12)
    assert info.converged
    p = (one - S) * 0.5
    assert p.restrict(6).max_abs_diff(projection("ssh").kernel) < 1e-9


def test_projection_smoothing_on_decorated_chain():
    p = projection("decorated_chain").kernel
    q, u, rep = projection_smoothing(p, 2, 12)
    assert rep.ok(), rep.checks()
    assert rep.idempotency_qn < 3 * rep.eps
    assert rep.p_minus_q < 1
    assert abs(rep.trace_p - rep.trace_q) < 1e-6
    # q only lives on the first two orbitals
    assert np.abs(q.blocks[:, 2, :]).max() < 1e-12 and np.abs(q.blocks[:, :, 2]).max() < 1e-12


def test_projection_smoothing_trivial_case():
    # the flat chain projection is exact and strictly local
    p = projection("flat_chain").kernel
    q, u, rep = projection_smoothing(p, 2, 10)
    assert rep.eps == 0
    assert q.max_abs_diff(p) < 1e-10
    assert u.max_abs_diff(GammaSequence.identity(p.group, 2)) < 1e-10


def test_projection_smoothing_rejects_large_eps():
    p = projection("decorated_chain").kernel
    with pytest.raises(SmoothingError) as exc:
        projection_smoothing(p, 1, 12)
    assert exc.value.eps >= 1 / 12


def test_block_truncation_is_projection():
    G = group("Pg")
    pi = block_truncation(G, 3, 2)
    assert convolve(pi, pi).max_abs_diff(pi) == 0


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(sorted(["Z1", "Z2", "Pg", "InfDihedral", "HeisZ", "TwistedZ2"])),
       st.integers(0, 2**31))
def test_json_roundtrip(name, seed):
    a = rand(group(name), np.random.default_rng(seed), shape=(2, 3), radius=2)
    b = GammaSequence.from_json(a.to_json())
    assert b.group.same_group(a.group) and b.twisted == a.twisted
    assert np.array_equal(b.keys, a.keys) and np.array_equal(b.blocks, a.blocks)
