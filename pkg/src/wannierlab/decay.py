"""Decay profiles and the exponential / power-law fits used for admissibility."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class DecayFit:
    """Fits of a radial profile ``f(L)`` to ``C e^{-alpha L}`` and ``C (1+L)^{-s}``.

    ``alpha`` is ``inf`` when all weight sits within one step of the origin
    (strictly local objects).  Residuals are RMS errors in log space.
    """

    alpha: float
    C_exp: float
    residual_exp: float
    s: float
    C_pow: float
    residual_pow: float
    points: int
    L_max: int

    def to_dict(self):
        return asdict(self)


def radial_profile(lengths, norms, L_max=None):
    """``max`` of ``norms`` over each word-length shell ``L = 0..L_max``."""
    lengths = np.asarray(lengths, dtype=int)
    norms = np.asarray(norms, dtype=float)
    L_max = int(lengths.max(initial=0)) if L_max is None else int(L_max)
    prof = np.zeros(L_max + 1)
    np.maximum.at(prof, np.minimum(lengths, L_max), norms)
    return np.arange(L_max + 1), prof


def fit_decay(L, prof, floor=1e-13, L_min=1):
    """Least-squares fits of a radial profile in log space.

    Points below ``floor * prof.max()`` are treated as numerically zero
    and excluded, as is everything beyond the first such point.
    """
    L = np.asarray(L, dtype=float)
    prof = np.asarray(prof, dtype=float)
    top = prof.max(initial=0.0)
    if top <= 0:
        return DecayFit(np.inf, 0.0, 0.0, np.inf, 0.0, 0.0, 0, 0)
    alive = prof > floor * top
    # truncate at the first dead shell past the origin
    dead = np.nonzero(~alive & (L >= L_min))[0]
    stop = dead[0] if len(dead) else len(L)
    sel = (L >= L_min) & (np.arange(len(L)) < stop) & alive
    Ls, ps = L[sel], prof[sel]
    if len(Ls) < 2:
        return DecayFit(np.inf, float(top), 0.0, np.inf, float(top), 0.0, int(len(Ls)),
                        int(Ls.max(initial=0)))
    y = np.log(ps)
    b, a = np.polyfit(Ls, y, 1)
    r_exp = float(np.sqrt(np.mean((a + b * Ls - y) ** 2)))
    x = np.log1p(Ls)
    b2, a2 = np.polyfit(x, y, 1)
    r_pow = float(np.sqrt(np.mean((a2 + b2 * x - y) ** 2)))
    return DecayFit(float(-b), float(np.exp(a)), r_exp, float(-b2), float(np.exp(a2)), r_pow,
                    int(len(Ls)), int(Ls.max()))


def sequence_profile(seq):
    """Radial profile of a GammaSequence using Frobenius block norms."""
    if not len(seq):
        return np.zeros(1, dtype=int), np.zeros(1)
    norms = np.linalg.norm(seq.blocks.reshape(len(seq), -1), axis=1)
    return radial_profile(seq.lengths(), norms)


def classify(fit, residual_max=0.5, s_rapid=6.0, l2_sum=None):
    """Decay verdict used by the membership diagnostics.

    ``"Schwartz-class"`` when the exponential fit succeeds, ``"rapid-decay"``
    when only the power fit reaches ``s >= s_rapid``, ``"L2_Gamma only"`` when
    the supplied weighted sum converged, ``"slow"`` otherwise.
    """
    if np.isinf(fit.alpha) or (fit.alpha > 0 and fit.residual_exp < residual_max
                               and fit.residual_exp <= fit.residual_pow + 1e-12):
        return "Schwartz-class"
    if fit.s >= s_rapid and fit.residual_pow < residual_max:
        return "rapid-decay"
    if l2_sum is not None and l2_sum:
        return "L2_Gamma only"
    return "slow"
