import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wannierlab.groups import (GroupDescriptor, GroupError, RadiusExceeded, decode, encode,
                               make_group)

from conftest import group

# frozen values; word-enumeration and closed-form oracles below
HEIS_BALL_SIZES = [1, 5, 17, 53, 135, 299, 593]


def word_ball(G, R):
    """Elements reachable by words of length <= R, by brute force."""
    seen = {G.identity}
    frontier = {G.identity}
    for _ in range(R):
        frontier = {G.multiply(g, s) for g in frontier for s in G.generators}
        seen |= frontier
    return seen


def test_heis_products():
    G = group("HeisZ")
    assert G.multiply((1, 0, 0), (0, 1, 0)) == (1, 1, 1)
    assert G.multiply((0, 1, 0), (1, 0, 0)) == (1, 1, 0)
    assert G.inverse((1, 1, 0)) == (-1, -1, 1)


def test_pg_glide_squares_to_translation():
    G = group("Pg")
    glide, a = (0, 1), (1, 0)
    assert G.multiply(glide, glide) == (0, 2)
    # g a g^-1 = a^-1
    assert G.multiply(G.multiply(glide, a), G.inverse(glide)) == (-1, 0)
    M, t = G.affine((0, 2))
    assert np.allclose(M, np.eye(2)) and np.allclose(t, [1.0, 0.0])


def test_affine_is_a_homomorphism(rng):
    for name in ("Pg", "InfDihedral"):
        G = group(name)
        X = G.random_elements(50, rng, 4)
        Y = G.random_elements(50, rng, 4)
        for g, h in zip(map(tuple, X), map(tuple, Y)):
            Mg, tg = G.affine(g)
            Mh, th = G.affine(h)
            M, t = G.affine(G.multiply(g, h))
            assert np.allclose(M, Mg @ Mh) and np.allclose(t, Mg @ th + tg)


def test_small_lengths():
    assert group("Z2").word_length((2, 3)) == 5
    assert len(group("Z1").ball(2)) == 5
    assert group("InfDihedral").word_length((0, 1)) == 1


def test_heis_ball_sizes():
    G = group("HeisZ")
    assert list(G.ball_sizes(6)) == HEIS_BALL_SIZES


@pytest.mark.parametrize("name", ["Z2", "Pg", "InfDihedral", "HeisZ", "TwistedZ2"])
def test_ball_matches_word_enumeration(name):
    G = group(name)
    R = 3
    assert set(G.ball(R)) == word_ball(G, R)


def test_growth_exponents():
    assert group("Z2").growth_exponent(20) == pytest.approx(1.93, abs=0.05)
    assert 1.7 < group("Pg").growth_exponent(12) < 2.05
    # polynomial growth of degree 4
    assert 3.6 < group("HeisZ").growth_exponent(12) < 4.2
    assert group("InfDihedral").growth_exponent(12) == pytest.approx(1.0, abs=0.05)


def test_group_axioms(any_group, rng):
    G = any_group
    A, B, C = (G.random_elements(300, rng) for _ in range(3))
    e = np.zeros_like(A)
    assert np.array_equal(G.mul_arrays(G.mul_arrays(A, B), C), G.mul_arrays(A, G.mul_arrays(B, C)))
    assert np.array_equal(G.mul_arrays(A, e), A)
    assert np.array_equal(G.mul_arrays(A, G.inv_arrays(A)), e)


def test_length_symmetry_and_triangle(any_group, rng):
    G = any_group
    A = G.random_elements(200, rng, 3)
    B = G.random_elements(200, rng, 3)
    LA, LB = G.lengths(A), G.lengths(B)
    assert np.array_equal(G.lengths(G.inv_arrays(A)), LA)
    assert np.all(G.lengths(G.mul_arrays(A, B)) <= LA + LB)


def test_cocycle_identity(any_group):
    assert any_group.verify_cocycle_identity(samples=1000)


def test_corrupted_cocycle_is_rejected():
    G = group("TwistedZ2")

    def bad(A, B):
        A, B = np.asarray(A), np.asarray(B)
        return np.exp(2j * np.pi / 3 * A[..., 0] * A[..., 0] * B[..., 1])

    assert not G.verify_cocycle_identity(samples=1000, sigma=bad)


def test_cocycle_normalization_and_commutator():
    G = make_group("TwistedZ2", theta="1/3")
    rng = np.random.default_rng(0)
    for g in map(tuple, G.random_elements(20, rng)):
        assert G.cocycle((0, 0), g) == 1 and G.cocycle(g, (0, 0)) == 1
    ratio = G.cocycle((0, 1), (1, 0)) / G.cocycle((1, 0), (0, 1))
    assert ratio == pytest.approx(np.exp(2j * np.pi / 3), abs=1e-14)


def test_radius_exceeded():
    G = GroupDescriptor("Zd", dim=1, max_radius=5)
    with pytest.raises(RadiusExceeded):
        G.word_length((9,))
    with pytest.raises(RadiusExceeded):
        G.ball(6)


def test_bad_elements():
    with pytest.raises(GroupError):
        group("InfDihedral").check((0, 2))
    with pytest.raises(GroupError):
        group("HeisZ").check((1, 2))
    with pytest.raises(GroupError):
        make_group("Klein")


def test_spec_roundtrip(any_group):
    G2 = GroupDescriptor.from_spec(any_group.spec())
    assert G2.same_group(any_group)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(*[st.integers(-1000, 1000)] * 3), min_size=1, max_size=30))
def test_encoding_preserves_order(rows):
    keys = np.array(sorted(rows), dtype=np.int64)
    codes = encode(keys)
    assert np.all(np.diff(codes) >= 0)
    assert np.array_equal(decode(codes, 3), keys)


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5)),
       st.tuples(st.integers(-5, 5), st.integers(-5, 5), st.integers(-5, 5)))
def test_heis_matrix_realization(g, h):
    G = group("HeisZ")

    def mat(x):
        return np.array([[1, x[0], x[2]], [0, 1, x[1]], [0, 0, 1]])

    assert np.array_equal(mat(G.multiply(g, h)), mat(g) @ mat(h))
    assert np.array_equal(mat(G.inverse(g)), np.round(np.linalg.inv(mat(g))))
