"""Hilbert-module layer: lattice wavefunctions, translations, the transform
``Phi_F`` to group sequences, and the algebra-valued pairing.

Conventions
-----------
A wavefunction ``w`` assigns a vector ``w_g`` in ``C^d`` to every cell ``g``.
The (magnetic) translate by ``g`` is the pull-back

.. math::  (g^* w)_h = \\sigma(h^{-1} g^{-1}, g)\\, w_{g h},

so that ``(w.g1).g2 = sigma(g1, g2) w.(g1 g2)``.  The transform puts the
value of ``g^* w`` on the identity cell at the coefficient ``g^-1``,
``Phi_F(w)_rho = w_{rho^-1}``, and intertwines translation with right
multiplication by delta functions.  The pairing is
``(v|w)_g = <g^* v, w>``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decay import classify, fit_decay, radial_profile
from .groups import encode
from .sequences import GammaSequence, ShapeError, module_inner_product, opnorm_budget


class LatticeWavefunction:
    """Finitely supported ``C^d``-valued function on the cells of a group.

    Parameters
    ----------
    group : GroupDescriptor
    keys : array_like, shape (N, k)
    amps : array_like, shape (N, d)
    """

    __slots__ = ("group", "keys", "amps", "codes")

    def __init__(self, group, keys, amps, prune=0.0):
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, group.rank)
        amps = np.asarray(amps, dtype=complex)
        if amps.ndim != 2 or len(amps) != len(keys):
            raise ShapeError("amplitudes must have shape (N, d) matching keys")
        codes = encode(keys) if len(keys) else np.zeros(0, dtype=np.int64)
        uniq, inv = np.unique(codes, return_inverse=True)
        if len(uniq) != len(codes):
            summed = np.zeros((len(uniq), amps.shape[1]), dtype=complex)
            np.add.at(summed, inv, amps)
            first = np.zeros(len(uniq), dtype=np.int64)
            first[inv[::-1]] = np.arange(len(codes))[::-1]
            keys, amps, codes = keys[first], summed, uniq
        else:
            o = np.argsort(codes, kind="stable")
            keys, amps, codes = keys[o], amps[o], codes[o]
        if prune:
            keep = np.abs(amps).max(axis=1) > prune
            keys, amps, codes = keys[keep], amps[keep], codes[keep]
        self.group, self.keys, self.amps, self.codes = group, keys, amps, codes

    @property
    def d(self):
        return self.amps.shape[1]

    def __len__(self):
        return len(self.codes)

    def __repr__(self):
        return f"LatticeWavefunction({self.group.name}, d={self.d}, support={len(self)})"

    @classmethod
    def cell_delta(cls, group, d, site, g=None):
        """Unit vector on ``site`` of cell ``g`` (identity by default)."""
        g = group.identity if g is None else group.check(g)
        v = np.zeros((1, d), dtype=complex)
        v[0, site] = 1.0
        return cls(group, [g], v)

    @classmethod
    def random(cls, group, d, radius, rng, decay=0.0):
        keys = group.ball_array(radius)
        L = group.lengths(keys)
        a = rng.standard_normal((len(keys), d)) + 1j * rng.standard_normal((len(keys), d))
        return cls(group, keys, a * np.exp(-decay * L)[:, None])

    def get(self, g):
        c = encode(np.array([self.group.check(g)]))[0]
        i = np.searchsorted(self.codes, c)
        if i < len(self.codes) and self.codes[i] == c:
            return self.amps[i].copy()
        return np.zeros(self.d, dtype=complex)

    def norm(self):
        return float(np.linalg.norm(self.amps))

    def lengths(self):
        return self.group.lengths(self.keys)

    def __add__(self, other):
        return LatticeWavefunction(self.group, np.concatenate([self.keys, other.keys]),
                                   np.concatenate([self.amps, other.amps]))

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, c):
        return LatticeWavefunction(self.group, self.keys, self.amps * c)

    __rmul__ = __mul__

    def restrict(self, radius):
        keep = self.lengths() <= radius
        return LatticeWavefunction(self.group, self.keys[keep], self.amps[keep])

    def to_record(self):
        return bloch_floquet(self).to_record()


def inner(v, w):
    """``<v, w>`` in ``l^2``, conjugate-linear in ``v``."""
    if len(v) == 0 or len(w) == 0:
        return 0j
    pos = np.searchsorted(w.codes, v.codes)
    pos = np.minimum(pos, len(w.codes) - 1)
    hit = w.codes[pos] == v.codes
    return complex(np.sum(np.conj(v.amps[hit]) * w.amps[pos[hit]]))


def translate(w, g):
    """Pull-back ``g^* w`` (a magnetic translation when the group is twisted)."""
    G = w.group
    g = np.array([G.check(g)], dtype=np.int64)
    # value at h = g^-1 mu comes from w_mu
    new = G.mul_arrays(G.inv_arrays(g), w.keys)
    amps = w.amps
    if G.is_twisted:
        amps = amps * G.cocycle_arrays(G.inv_arrays(w.keys), g)[:, None]
    return LatticeWavefunction(G, new, amps)


def bloch_floquet(w):
    """``Phi_F(w)``: column-block sequence with coefficient ``w_{rho^-1}`` at ``rho``."""
    G = w.group
    return GammaSequence(G, G.inv_arrays(w.keys), w.amps[:, :, None], prune=None)


def inverse_bloch_floquet(seq):
    """Inverse of :func:`bloch_floquet` for ``(d, 1)`` blocks; ``(d, n)`` gives a list."""
    G = seq.group
    keys = G.inv_arrays(seq.keys)
    n = seq.block_shape[1]
    out = [LatticeWavefunction(G, keys, seq.blocks[:, :, j]) for j in range(n)]
    return out[0] if n == 1 else out


def stack_columns(ws):
    """Transforms of several wavefunctions as one ``(d, n)`` block sequence."""
    G = ws[0].group
    keys = np.concatenate([G.inv_arrays(w.keys) for w in ws])
    d = ws[0].d
    blocks = []
    for j, w in enumerate(ws):
        b = np.zeros((len(w), d, len(ws)), dtype=complex)
        b[:, :, j] = w.amps
        blocks.append(b)
    return GammaSequence(G, keys, np.concatenate(blocks), prune=None)


def pairing(v, w):
    """``(v|w)_g = <g^* v, w>`` by direct summation over pairs of cells.

    Each pair ``(mu, nu)`` with ``mu`` in supp v and ``nu`` in supp w
    contributes ``conj(sigma(mu^-1, mu nu^-1)) <v_mu, w_nu>`` at
    ``g = mu nu^-1``.
    """
    G = v.group
    if len(v) == 0 or len(w) == 0:
        return GammaSequence.zeros(G, (1, 1))
    g = G.mul_arrays(v.keys[:, None, :], G.inv_arrays(w.keys)[None, :, :])
    val = np.conj(v.amps) @ w.amps.T
    if G.is_twisted:
        mu_inv = G.inv_arrays(v.keys)[:, None, :]
        val = val * np.conj(G.cocycle_arrays(mu_inv, g))
    return GammaSequence(G, g.reshape(-1, G.rank), val.reshape(-1, 1, 1), prune=None)


def hilbert_module_norm(w, R=None):
    """``|(w|w)|_op^{1/2}`` with the interior operator-norm estimate."""
    return float(np.sqrt(opnorm_budget(pairing(w, w), R)))


def module_pairing_via_transform(v, w):
    """Module inner product of the transforms; equals :func:`pairing`."""
    return module_inner_product(bloch_floquet(v), bloch_floquet(w))


def kernel_coefficients(proj):
    """Blocks ``A_g`` with ``Phi p Phi^-1 = sum_g A_g (x) g^-1``.

    Returns a list of ``(g, A_g)`` ordered like the kernel support.
    ``A_g`` is the kernel block at ``g^-1``.
    """
    kernel = getattr(proj, "kernel", proj)
    G = kernel.group
    inv = G.inv_arrays(kernel.keys)
    return [(tuple(int(x) for x in g), b.copy()) for g, b in zip(inv, kernel.blocks)]


@dataclass
class MembershipReport:
    verdict: str
    alpha: float
    s: float
    residual_exp: float
    residual_pow: float
    summability_exponent: float

    def to_dict(self):
        return dict(self.__dict__)


def h_infinity_membership(obj, residual_max=0.5, s_rapid=6.0, beta_min=1.2):
    """Decay verdict for a wavefunction, kernel or projection.

    The summability exponent ``beta`` is the power-law decay of shell sums
    ``sum_{L(g)=L} |w_g|``; the cell-norm sum converges when ``beta > 1``
    and ``beta_min`` adds a margin for the finite-radius fit.
    """
    obj = getattr(obj, "kernel", obj)
    if isinstance(obj, LatticeWavefunction):
        L = obj.lengths()
        norms = np.linalg.norm(obj.amps, axis=1)
    else:
        L = obj.lengths()
        norms = np.linalg.norm(obj.blocks.reshape(len(obj), -1), axis=1)
    Ls, prof = radial_profile(L, norms)
    fit = fit_decay(Ls, prof)
    shell = np.bincount(L, weights=norms, minlength=len(Ls))
    sel = (Ls >= 1) & (shell > 0)
    if sel.sum() >= 2:
        beta = float(-np.polyfit(np.log1p(Ls[sel]), np.log(shell[sel]), 1)[0])
    else:
        beta = np.inf
    verdict = classify(fit, residual_max, s_rapid, l2_sum=beta > beta_min)
    return MembershipReport(verdict, fit.alpha, fit.s, fit.residual_exp, fit.residual_pow, beta)
