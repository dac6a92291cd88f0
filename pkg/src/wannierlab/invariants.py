"""Freeness obstructions: Chern numbers, reflection parities, traces per cell.

Sign convention: momenta ``(k1, k2)`` are right-handed, Bloch matrices are
``H(k) = sum_g h_g exp(i k.g)`` and the band below the gap is used.  With
this convention the real-space marker ``2 pi i tr_e(p [[X, p], [Y, p]])``
and the plaquette sum agree in sign; the Chern model with ``m = 1`` has
Chern number ``+1`` (pinned by a test fixture).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import (ModelError, SpectralProjection, bloch_matrices, k_grid, magnetic_period,
                     select_window, spectral_projection)
from .sequences import GammaSequence, SpectralGapError, convolve, physical_matrix

INT_TOL = 0.05


class GridError(RuntimeError):
    """A link overlap vanished; refine the momentum grid."""


@dataclass
class KClass:
    """Computed invariants and the resulting freeness verdict."""

    family: str
    invariants: dict
    verdict: str = "undetermined"
    predicted: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {"family": self.family, "invariants": self.invariants, "verdict": self.verdict,
                "predicted": self.predicted, "notes": list(self.notes)}


# ---------------------------------------------------------------------------
# momentum space

def _window_bands(E, window, k_desc="k"):
    lo, hi = window.E_lo, window.E_hi
    inside = (E >= lo) & (E <= hi)
    counts = inside.sum(axis=-1)
    if counts.min() != counts.max():
        idx = np.unravel_index(np.argmax(counts != counts.flat[0]), counts.shape)
        raise SpectralGapError(f"gap closes near {k_desc} index {tuple(int(i) for i in idx)}",
                               E[idx])
    return int(counts.flat[0]), inside


def bloch_frames(model, window, n_k=32):
    """Orthonormal frames ``U(k)`` of the window bands on an ``n_k^2`` grid.

    Works for ``Z^2`` and for rational twisted ``Z^2`` (magnetic supercell).
    Returns ``(ks, U)`` with ``U`` of shape ``(n_k, n_k, D, r)``.
    """
    G = model.group
    if G.rank != 2 or G.family not in ("Zd", "TwistedZ2"):
        raise ModelError("momentum-space frames need a two-dimensional abelian model")
    ks = k_grid(n_k, 2)
    F = bloch_matrices(model, ks)
    E, V = np.linalg.eigh(F)
    r, inside = _window_bands(E, window)
    if r == 0:
        raise SpectralGapError("window contains no bands", E.ravel()[:4])
    # eigh sorts ascending and the count is constant, so the band indices are fixed
    first = int(np.argmax(inside.reshape(-1, inside.shape[-1])[0]))
    return ks, V[..., first:first + r]


def bloch_projector(model, window, n_k=32):
    """Band projectors ``P(k) = U(k) U(k)^dagger`` on the uniform grid."""
    ks, U = bloch_frames(model, window, n_k)
    return ks, U @ np.conj(np.swapaxes(U, -1, -2))


def _frames_from_projectors(P):
    r = int(round(np.trace(P[0, 0]).real))
    _, V = np.linalg.eigh(P)
    return V[..., -r:]


def berry_flux(frames):
    """Plaquette Berry fluxes ``F(k)`` in ``(-pi, pi]`` (lattice field strength).

    ``frames`` has shape ``(n1, n2, D, r)`` (or are projectors, shape
    ``(n1, n2, D, D)`` with integer trace).
    """
    U = frames
    if U.shape[-1] == U.shape[-2] and np.allclose(U, np.conj(np.swapaxes(U, -1, -2))):
        U = _frames_from_projectors(U)
    Ux = np.roll(U, -1, axis=0)
    Uy = np.roll(U, -1, axis=1)
    Uxy = np.roll(Ux, -1, axis=1)

    def link(A, B):
        d = np.linalg.det(np.conj(np.swapaxes(A, -1, -2)) @ B)
        if np.abs(d).min() < 1e-10:
            raise GridError("singular link overlap: refine the k grid")
        return d / np.abs(d)

    loop = link(U, Ux) * link(Ux, Uxy) * np.conj(link(Uy, Uxy)) * np.conj(link(U, Uy))
    return np.angle(loop)


def chern_number_momentum(frames):
    """Plaquette-sum Chern number ``(1/2 pi) sum F``; an exact integer."""
    total = berry_flux(frames).sum() / (2 * np.pi)
    return int(round(total))


def chern_momentum(model, window, n_k=32):
    """Chern number of the window bands of a 2D (magnetic) Bloch problem."""
    _, U = bloch_frames(model, window, n_k)
    return chern_number_momentum(U)


def diophantine_label(p, q, r):
    """Gap label ``t`` with ``r = s q + t p`` and ``|t| <= q / 2``.

    ``r`` magnetic bands lie below the gap for flux ``p/q`` per cell.
    """
    best = None
    for t in range(-q, q + 1):
        if (r - t * p) % q == 0 and (best is None or abs(t) < abs(best)):
            best = t
    return best


# ---------------------------------------------------------------------------
# real space

@dataclass
class RealSpaceChern:
    value: float
    nearest: int
    deviation: float
    reliable: bool
    support: int

    def to_dict(self):
        return dict(self.__dict__)


def position_derivation(p, axis):
    """Kernel of ``[X_axis, P]`` for the physical hopping operator of ``p``.

    ``P[g, h]`` couples cells with ``g^-1 h = mu``; for ``Z^2`` (twisted or
    not) ``x_g - x_h = -mu_axis``.
    """
    return GammaSequence(p.group, p.keys, -p.keys[:, axis, None, None] * p.blocks, p.twisted,
                         prune=None)


def chern_number_real_space(proj, min_alpha=0.1):
    """``2 pi i tr_e(p [[X, p], [Y, p]])`` from the projection kernel.

    The identity-cell trace of the operator product is the identity
    coefficient of the corresponding convolution, so no finite sample is
    involved beyond the kernel truncation.  ``reliable`` is false when the
    kernel decay rate is below ``min_alpha``.
    """
    p = proj.kernel if isinstance(proj, SpectralProjection) else proj
    G = p.group
    if G.rank != 2 or G.family not in ("Zd", "TwistedZ2"):
        raise ModelError("real-space Chern marker needs a two-dimensional abelian group")
    dx, dy = position_derivation(p, 0), position_derivation(p, 1)
    comm = convolve(dx, dy) - convolve(dy, dx)
    val = (2j * np.pi * convolve(p, comm).trace_at_identity())
    c = float(val.real)
    nearest = int(round(c))
    alpha = proj.decay.alpha if isinstance(proj, SpectralProjection) else np.inf
    return RealSpaceChern(c, nearest, abs(c - nearest), bool(alpha > min_alpha),
                          p.support_radius())


def trace_per_cell(proj):
    """``tr p_e``: trace of the identity-cell block."""
    p = proj.kernel if isinstance(proj, SpectralProjection) else proj
    return float(p.trace_at_identity().real)


# ---------------------------------------------------------------------------
# reflection group: Z-picture at the flip-fixed momenta

def _z_hamiltonian(model, k, reach=None):
    """Bloch matrix of the index-two subgroup ``{(n, 0)}`` at momentum ``k``.

    The fiber is ``C^2 (x) C^d`` (cosets ``r = 0, 1`` times orbitals).
    """
    G = model.group
    h = model.hamiltonian
    d = model.d
    reach = int(np.abs(h.keys[:, 0]).max(initial=0)) + 1 if reach is None else reach
    ms = np.arange(-reach, reach + 1)
    rows = np.array([(m, r) for m in ms for r in (0, 1)], dtype=np.int64)
    cols = np.array([(0, 0), (0, 1)], dtype=np.int64)
    M = physical_matrix(h, rows, cols).reshape(len(ms), 2 * d, 2 * d)
    ph = np.exp(-1j * k * ms)
    Hk = np.tensordot(ph, M, axes=(0, 0))
    return 0.5 * (Hk + Hk.conj().T)


def _swap(d):
    S = np.zeros((2, 2))
    S[0, 1] = S[1, 0] = 1
    return np.kron(S, np.eye(d))


def z2_fixed_point_invariants(model, window=None, n_k=64):
    """``(rank, m_0, m_pi)`` for a reflection-group model.

    ``rank`` counts bands of the translation subgroup in the window and
    ``m_k`` counts odd eigenstates of the reflection ``(0; tau)`` among them
    at the flip-fixed momenta ``k = 0, pi``.
    """
    G = model.group
    if G.family != "InfDihedral":
        raise ModelError("fixed-point invariants need an InfDihedral model")
    window = select_window(model) if window is None else window
    d = model.d
    S = _swap(d)
    ks = 2 * np.pi * np.arange(n_k) / n_k
    counts = []
    for k in ks:
        E = np.linalg.eigvalsh(_z_hamiltonian(model, k))
        counts.append(int(np.sum((E >= window.E_lo) & (E <= window.E_hi))))
    if min(counts) != max(counts):
        raise SpectralGapError("gap closes on the k grid", np.array(counts, float))
    rank = counts[0]
    odd = []
    for k in (0.0, np.pi):
        E, V = np.linalg.eigh(_z_hamiltonian(model, k))
        Vw = V[:, (E >= window.E_lo) & (E <= window.E_hi)]
        par = np.linalg.eigvalsh(Vw.conj().T @ S @ Vw)
        if np.abs(np.abs(par) - 1).max() > 1e-6:
            raise SpectralGapError("reflection does not preserve the window at a fixed momentum",
                                   par)
        odd.append(int(np.sum(par < 0)))
    return rank, odd[0], odd[1]


def _z_bloch_vector(w, k):
    d = w.d
    u = np.zeros(2 * d, dtype=complex)
    for (n, r), a in zip(w.keys, w.amps):
        u[r * d:(r + 1) * d] += a * np.exp(-1j * k * n)
    return u


def z2_generator_invariants(w, tol=1e-6):
    """``(rank, m_0, m_pi)`` of the submodule generated by one wavefunction.

    The fiber at ``k`` is spanned by the Bloch vectors of ``w`` and of its
    reflection ``(0; tau)^* w``.
    """
    from .modules import translate
    tw = translate(w, (0, 1))
    S = _swap(w.d)

    def span(k):
        A = np.stack([_z_bloch_vector(w, k), _z_bloch_vector(tw, k)], axis=1)
        U, s, _ = np.linalg.svd(A, full_matrices=False)
        return U[:, s > tol * max(s[0], 1e-300)]

    rank = span(0.37 * np.pi).shape[1]
    odd = []
    for k in (0.0, np.pi):
        B = span(k)
        par = np.linalg.eigvalsh(B.conj().T @ S @ B) if B.shape[1] else np.zeros(0)
        odd.append(int(np.sum(par < 0)))
    return rank, odd[0], odd[1]


# ---------------------------------------------------------------------------
# verdicts

GOOD = "good Wannier basis exists (n = {n})"
FRAME_ONLY = "no good Wannier basis; tight frame only"


def _near_int(x, tol=INT_TOL):
    return abs(x - round(x)) < tol


def k_verdict(kc):
    """Fill ``verdict`` and ``predicted`` of a :class:`KClass` in place."""
    inv = kc.invariants
    fam = kc.family
    rank = inv.get("rank")
    if fam == "Zd":
        cherns = inv.get("chern", [])
        if any(c != 0 for c in cherns):
            kc.verdict = "non-free"
        elif inv.get("dim", 2) >= 3:
            kc.verdict = "undetermined"
            kc.notes.append("first Chern numbers vanish; higher obstructions not computed")
        else:
            kc.verdict = "free"
    elif fam == "Pg":
        kc.verdict = "free"
        kc.notes.append("stably free modules over this group are free; rank fixes the class")
    elif fam == "InfDihedral":
        n, m0, mpi = inv["triple"]
        r = n // 2
        # induced from r copies of the regular representation
        kc.verdict = "free" if (n % 2 == 0 and m0 == mpi == r) else "non-free"
        rank = r if kc.verdict == "free" else None
    elif fam == "TwistedZ2":
        tr = inv["trace"]
        kc.verdict = "free" if (_near_int(tr) and inv.get("chern", 0) == 0) else "non-free"
    elif fam == "HeisZ":
        tr = inv["trace"]
        kc.verdict = "stably-free-hence-free" if _near_int(tr) else "non-free"
        rank = int(round(tr)) if _near_int(tr) else None
    if kc.verdict in ("free", "stably-free-hence-free"):
        n = rank if rank is not None else inv.get("rank")
        kc.predicted = GOOD.format(n=n)
    elif kc.verdict == "non-free":
        kc.predicted = FRAME_ONLY
    else:
        kc.predicted = "undetermined"
    return kc


def compute_kclass(model, proj=None, window=None, n_k=32):
    """Invariants of the window projection and the verdict for ``model``."""
    G = model.group
    window = (proj.window if proj is not None else select_window(model)) if window is None \
        else window
    inv = {}
    if G.family == "Zd":
        inv["dim"] = G.rank
        tr = trace_per_cell(proj) if proj is not None else None
        if G.rank == 2:
            _, U = bloch_frames(model, window, n_k)
            inv["rank"] = int(U.shape[-1])
            inv["chern"] = [chern_number_momentum(U)]
        else:
            ks = k_grid(max(n_k, 64) if G.rank == 1 else n_k, G.rank)
            E = np.linalg.eigvalsh(bloch_matrices(model, ks))
            r, _ = _window_bands(E, window)
            inv["rank"] = r
            inv["chern"] = _chern_planes(model, window, n_k) if G.rank >= 3 else []
        if tr is not None:
            inv["trace"] = tr
    elif G.family == "Pg":
        inv["rank"] = int(round(trace_per_cell(proj))) if proj is not None else None
        if proj is not None:
            inv["trace"] = trace_per_cell(proj)
    elif G.family == "InfDihedral":
        inv["triple"] = list(z2_fixed_point_invariants(model, window))
        inv["rank"] = inv["triple"][0]
    elif G.family == "TwistedZ2":
        if proj is None:
            raise ValueError("twisted models need a projection for the trace")
        inv["trace"] = trace_per_cell(proj)
        rs = chern_number_real_space(proj)
        inv["chern_real_space"] = rs.value
        inv["chern"] = rs.nearest
        q = magnetic_period(G)
        _, U = bloch_frames(model, window, n_k)
        inv["chern_magnetic_bloch"] = chern_number_momentum(U)
        inv["magnetic_bands"] = int(U.shape[-1])
        inv["gap_label"] = diophantine_label(G.theta.numerator, q, int(U.shape[-1]))
    elif G.family == "HeisZ":
        if proj is None:
            raise ValueError("Heisenberg models need a projection for the trace")
        inv["trace"] = trace_per_cell(proj)
    return k_verdict(KClass(G.family, inv))


def _chern_planes(model, window, n_k):
    """Chern numbers of the coordinate planes through ``k = 0``."""
    D = model.group.rank
    out = []
    n = min(n_k, 24)
    k = 2 * np.pi * np.arange(n) / n
    for a in range(D):
        for b in range(a + 1, D):
            ks = np.zeros((n, n, D))
            ks[..., a] = k[:, None]
            ks[..., b] = k[None, :]
            E, V = np.linalg.eigh(bloch_matrices(model, ks))
            r, inside = _window_bands(E, window)
            first = int(np.argmax(inside.reshape(-1, inside.shape[-1])[0]))
            out.append(chern_number_momentum(V[..., first:first + r]))
    return out
