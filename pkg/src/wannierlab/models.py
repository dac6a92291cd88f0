"""Group-invariant tight-binding models, truncations, gaps and gap projections.

A model is a Hermitian :class:`~wannierlab.sequences.GammaSequence` ``h`` with
``d x d`` blocks.  Its lattice operator is the hopping matrix
``H[g, k] = sigma(g^-1 k, k^-1) h_{g^-1 k}`` on cells ``g, k`` (see
:func:`~wannierlab.sequences.physical_matrix`), which commutes with the
(magnetic) left translations.  For abelian groups the Bloch matrix is
``H(k) = sum_g h_g exp(i k.g)``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .decay import DecayFit, classify, fit_decay, sequence_profile
from .groups import GroupDescriptor, make_group
from .sequences import (GammaSequence, SpectralGapError, convolve, extract_kernel,
                        involution, left_matrix, physical_matrix, sign_function, symmetrize)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


class ModelError(ValueError):
    """Invalid model parameters or unsupported preset."""


class IdempotencyError(RuntimeError):
    def __init__(self, message, error):
        self.error = error
        super().__init__(message)


@dataclass
class CrystalModel:
    """A group-invariant Hamiltonian with ``d`` internal sites per cell."""

    name: str
    group: GroupDescriptor
    d: int
    hamiltonian: GammaSequence
    params: dict = field(default_factory=dict)

    @property
    def hopping_radius(self):
        return self.hamiltonian.support_radius()

    def model_hash(self):
        """Content hash of the group, Hamiltonian blocks and parameters."""
        rec = {"group": self.group.spec(), "name": self.name, "params": _plain(self.params),
               "h": self.hamiltonian.to_record()}
        return hashlib.sha256(json.dumps(rec, sort_keys=True).encode()).hexdigest()[:16]

    def hermiticity_defect(self):
        return self.hamiltonian.max_abs_diff(involution(self.hamiltonian))


def _plain(d):
    return {k: (str(v) if not isinstance(v, (int, float, str, bool)) else v) for k, v in d.items()}


@dataclass
class SpectralWindow:
    """Energy window ``[E_lo, E_hi]`` with gap margins.

    ``margin_lo`` / ``margin_hi`` are distances from the window edges to the
    nearest spectrum outside (``inf`` when there is none on that side).
    """

    E_lo: float
    E_hi: float
    margin_lo: float = math.inf
    margin_hi: float = math.inf

    def __post_init__(self):
        if not self.E_lo < self.E_hi:
            raise ModelError("window needs E_lo < E_hi")

    @property
    def gapped(self):
        return self.margin_lo > 0 and self.margin_hi > 0

    def cuts(self):
        """Finite window edges, each with its margin."""
        out = []
        if math.isfinite(self.margin_lo):
            out.append((self.E_lo, self.margin_lo))
        if math.isfinite(self.margin_hi):
            out.append((self.E_hi, self.margin_hi))
        return out

    def to_dict(self):
        f = lambda x: None if not math.isfinite(x) else float(x)  # noqa: E731
        return {"E_lo": f(self.E_lo), "E_hi": f(self.E_hi),
                "margin_lo": f(self.margin_lo), "margin_hi": f(self.margin_hi)}

    @classmethod
    def from_dict(cls, d):
        g = lambda x, default: default if x is None else float(x)  # noqa: E731
        return cls(g(d["E_lo"], -math.inf), g(d["E_hi"], math.inf),
                   g(d.get("margin_lo"), math.inf), g(d.get("margin_hi"), math.inf))


@dataclass
class SpectralProjection:
    """Kernel of a gap projection plus the data it was built from."""

    kernel: GammaSequence
    window: SpectralWindow
    R: int
    method: str
    decay: DecayFit
    idempotency: float
    self_adjointness: float
    edge_states: int = 0
    model_name: str = ""

    @property
    def group(self):
        return self.kernel.group

    @property
    def d(self):
        return self.kernel.block_shape[0]

    def rank(self):
        return float(self.kernel.trace_at_identity().real)


# ---------------------------------------------------------------------------
# presets

def _seq(group, mapping):
    return GammaSequence.from_dict(group, mapping)


def _chain(t1=1.0, t2=0.5):
    """Dimerized chain: intra-cell ``t1``, inter-cell ``t2``."""
    G = make_group("Z1")
    hop = np.array([[0, 0], [t2, 0]], dtype=complex)
    h = _seq(G, {(0,): t1 * SX, (1,): hop, (-1,): hop.conj().T})
    return G, 2, h


def _chern(m=1.0):
    """``sin k1 sx + sin k2 sy + (m + cos k1 + cos k2) sz``."""
    G = make_group("Z2")
    h = _seq(G, {
        (0, 0): m * SZ,
        (1, 0): SX / 2j + SZ / 2, (-1, 0): -SX / 2j + SZ / 2,
        (0, 1): SY / 2j + SZ / 2, (0, -1): -SY / 2j + SZ / 2,
    })
    return G, 2, h


def _decorated_chain(t1=1.0, t2=0.08, c=0.1, offset=3.0):
    """Dimerized chain plus a far-off third orbital coupled with strength ``c``.

    The lower band leaks ``O(c / offset)`` weight onto the third orbital,
    which makes it a controlled input for block-truncation smoothing.
    """
    G = make_group("Z1")
    e = np.zeros((3, 3), dtype=complex)
    e[:2, :2] = t1 * SX
    e[2, 2] = offset
    e[0, 2] = e[2, 0] = c
    hop = np.zeros((3, 3), dtype=complex)
    hop[1, 0] = t2
    h = _seq(G, {(0,): e, (1,): hop, (-1,): hop.conj().T})
    return G, 3, h


def _hofstadter(theta="1/3", t=1.0):
    """Nearest-neighbour hopping ``-t`` with flux ``theta`` per plaquette."""
    G = make_group("TwistedZ2", theta=theta)
    one = -t * np.eye(1)
    h = _seq(G, {(1, 0): one, (-1, 0): one, (0, 1): one, (0, -1): one})
    return G, 1, h


def _mass_plus_graph(G, gap, hops):
    """``gap sz`` on site plus ``t sx`` hoppings along each listed generator."""
    mapping = {G.identity: gap * SZ}
    for g, t in hops:
        gi = G.inverse(g)
        blk = t * SX
        mapping[g] = mapping.get(g, 0) + blk
        if gi != g:
            mapping[gi] = mapping.get(gi, 0) + blk.conj().T
    return _seq(G, mapping)


def _pg(gap=1.0, t=0.15, t_glide=0.15):
    """Two orbitals per cell; ``t`` along the perpendicular translation, ``t_glide`` along the glide."""
    G = make_group("Pg")
    return G, 2, _mass_plus_graph(G, gap, [((1, 0), t), ((0, 1), t_glide)])


def _dihedral(gap=1.0, t=0.15, t_flip=0.1, t_mix=0.05):
    """Two orbitals per cell of the line ``x0 + Z`` and its mirror image.

    ``t`` hops along the unit translation, ``t_flip`` across the reflection
    centre at 0 and ``t_mix`` is a diagonal orbital-preserving translation
    hop that breaks the accidental chiral structure.
    """
    G = make_group("InfDihedral")
    h = _mass_plus_graph(G, gap, [((1, 0), t), ((0, 1), t_flip)])
    h = h + _seq(G, {(1, 0): t_mix * I2, (-1, 0): t_mix * I2})
    return G, 2, h


def _heis(gap=1.0, t=0.12):
    """Cayley-graph adjacency coupling two orbitals split by ``2 gap``."""
    G = make_group("HeisZ")
    return G, 2, _mass_plus_graph(G, gap, [((1, 0, 0), t), ((0, 1, 0), t)])


PRESETS = {
    "ssh": (_chain, {"t1": 1.0, "t2": 0.08}),
    "flat_chain": (_chain, {"t1": 1.0, "t2": 0.0}),
    "metallic_chain": (_chain, {"t1": 1.0, "t2": 1.0}),
    "decorated_chain": (_decorated_chain, {"t1": 1.0, "t2": 0.08, "c": 0.1, "offset": 3.0}),
    "chern_trivial": (_chern, {"m": 4.0}),
    "chern_topological": (_chern, {"m": 1.0}),
    "chern": (_chern, {"m": 1.0}),
    "hofstadter": (_hofstadter, {"theta": "1/3", "t": 1.0}),
    "pg": (_pg, {"gap": 1.0, "t": 0.05, "t_glide": 0.05}),
    "dihedral": (_dihedral, {"gap": 1.0, "t": 0.07, "t_flip": 0.07, "t_mix": 0.03}),
    "heis": (_heis, {"gap": 1.0, "t": 0.05}),
}

#: presets run by the dichotomy table, in report order
SUITE_PRESETS = ["ssh", "chern_trivial", "chern_topological", "pg", "dihedral",
                 "hofstadter", "heis"]


def build_model(config=None, **params):
    """Build a preset model.

    Parameters
    ----------
    config : str or dict
        Preset name, or a mapping with key ``"preset"`` plus parameters.
    **params
        Parameter overrides.
    """
    if isinstance(config, str):
        config = {"preset": config}
    config = dict(config or {})
    config.update(params)
    name = config.pop("preset", None)
    if name not in PRESETS:
        raise ModelError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    builder, defaults = PRESETS[name]
    unknown = set(config) - set(defaults)
    if unknown:
        raise ModelError(f"preset {name!r} has no parameters {sorted(unknown)}")
    full = dict(defaults)
    full.update(config)
    for k, v in full.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise ModelError(f"parameter {k} must be finite")
    G, d, h = builder(**full)
    model = CrystalModel(name, G, d, h, full)
    if model.hermiticity_defect() > 1e-14:
        raise ModelError(f"preset {name!r} produced a non-Hermitian Hamiltonian")
    return model


# ---------------------------------------------------------------------------
# truncation and spectra

def truncate(model, R):
    """Hopping matrix on ball(R) x sites (open boundary), exactly Hermitian."""
    ball = model.group.ball_array(R)
    H = physical_matrix(model.hamiltonian, ball)
    return 0.5 * (H + H.conj().T)


def spectrum(matrix, vectors=False):
    """Ascending eigenvalues (and eigenvectors) of a Hermitian matrix."""
    M = np.asarray(matrix)
    if not np.allclose(M, M.conj().T, atol=1e-12, rtol=0):
        raise ModelError("spectrum: matrix is not Hermitian")
    if vectors:
        return scipy.linalg.eigh(M)
    return scipy.linalg.eigvalsh(M)


def detect_gaps(eigs, min_width=0.1):
    """Windows below each gap of width ``>= min_width`` in a sorted spectrum.

    The ``i``-th window runs from below the spectrum to the centre of the
    ``i``-th gap; its upper margin is half the gap width.
    """
    e = np.sort(np.asarray(eigs, dtype=float))
    if len(e) < 2:
        return []
    widths = np.diff(e)
    idx = np.nonzero(widths >= min_width)[0]
    out = []
    for i in idx:
        cut = 0.5 * (e[i] + e[i + 1])
        out.append(SpectralWindow(float(e[0] - 1.0), float(cut), math.inf,
                                  float(0.5 * widths[i])))
    return out


def magnetic_period(group):
    """Supercell length along x for the periodic realization."""
    if group.family == "TwistedZ2":
        return group.theta.denominator
    if group.family == "Zd":
        return 1
    raise ModelError(f"no periodic realization for {group.family}")


def bloch_matrices(model, ks):
    """Bloch matrices ``F(k)`` of shape ``(..., q d, q d)``.

    ``ks`` has shape ``(..., D)`` with ``D`` the rank.  For twisted groups the
    magnetic supercell has ``q`` cells along x, ``k[0]`` is the momentum
    conjugate to supercell translations, and rows/columns are ordered
    ``(cell offset, orbital)``.
    """
    G = model.group
    q = magnetic_period(G)
    d = model.d
    h = model.hamiltonian
    ks = np.asarray(ks, dtype=float)
    F = np.zeros(ks.shape[:-1] + (q * d, q * d), dtype=complex)
    for t in range(q):
        eta = np.zeros((1, G.rank), dtype=np.int64)
        eta[0, 0] = t
        # H[gamma, eta] = sigma(mu, eta^-1) h_mu with gamma = eta mu^-1
        gam = G.mul_arrays(eta, G.inv_arrays(h.keys))
        ph = G.cocycle_arrays(h.keys, G.inv_arrays(eta))
        s = np.mod(gam[:, 0], q)
        Rc = gam.copy()
        Rc[:, 0] = (gam[:, 0] - s) // q
        phase = np.exp(-1j * np.tensordot(ks, Rc.T.astype(float), axes=([-1], [0])))
        for j in range(len(h)):
            blk = ph[j] * h.blocks[j]
            F[..., s[j] * d:(s[j] + 1) * d, t * d:(t + 1) * d] += (
                phase[..., j, None, None] * blk)
    return 0.5 * (F + np.conj(np.swapaxes(F, -1, -2)))


def k_grid(n, dim):
    k = 2 * np.pi * np.arange(n) / n
    return np.stack(np.meshgrid(*([k] * dim), indexing="ij"), axis=-1)


def bulk_spectrum(model, n_k=48, R=10, edge_weight=0.05):
    """Bulk eigenvalues of the model.

    Abelian groups use the (magnetic) Bloch matrices on an ``n_k`` grid.
    Other groups use the truncation to ball(R) and discard eigenvectors
    whose weight in ball(R/2) is below ``edge_weight`` times the volume
    fraction of that ball, which removes boundary-localized states.
    """
    G = model.group
    if G.is_abelian:
        n = {1: 16 * n_k, 2: n_k}.get(G.rank, min(n_k, 16))
        F = bloch_matrices(model, k_grid(n, G.rank))
        return np.sort(np.linalg.eigvalsh(F).ravel())
    R = affordable_radius(G, model.d, R)
    w, V = spectrum(truncate(model, R), vectors=True)
    frac = len(G.ball_array(R // 2)) / len(G.ball_array(R))
    inner = _inner_weight(V, G, R, model.d, R // 2)
    return w[inner >= edge_weight * frac]


def affordable_radius(G, d, R, budget=1500):
    """Largest radius ``<= R`` whose truncation has at most ``budget`` rows."""
    while R > 1 and len(G.ball_array(R)) * d > budget:
        R -= 1
    return R


def _inner_weight(V, G, R, d, r):
    L = np.repeat(G.lengths(G.ball_array(R)), d)
    return np.sum(np.abs(V[L <= r]) ** 2, axis=0)


def select_window(model, gap_index=0, energy_range=None, min_width=0.1, **bulk_kw):
    """Spectral window from a gap index or an explicit energy range."""
    e = bulk_spectrum(model, **bulk_kw)
    if energy_range is not None:
        lo, hi = map(float, energy_range)
        below = e[e < lo]
        above = e[e > hi]
        inside = e[(e >= lo) & (e <= hi)]
        if not len(inside):
            raise ModelError("energy range contains no spectrum")
        m_lo = float(lo - below.max()) if len(below) else math.inf
        m_hi = float(above.min() - hi) if len(above) else math.inf
        return SpectralWindow(lo, hi, m_lo, m_hi)
    gaps = detect_gaps(e, min_width)
    if gap_index >= len(gaps):
        raise SpectralGapError(f"model {model.name!r} has {len(gaps)} gaps of width "
                               f">= {min_width}; gap index {gap_index} requested")
    return gaps[gap_index]


# ---------------------------------------------------------------------------
# gap projections

def _finish(model, kernel, window, R, method, edge_states, tol, norm_R):
    from .sequences import opnorm_budget
    pp = convolve(kernel, kernel) - kernel
    idem = opnorm_budget(pp, norm_R)
    sa = kernel.max_abs_diff(involution(kernel))
    L, prof = sequence_profile(kernel)
    proj = SpectralProjection(kernel, window, int(R), method, fit_decay(L, prof), idem, sa,
                              edge_states, model.name)
    if tol is not None and idem > tol:
        raise IdempotencyError(f"idempotency tolerance exceeded ({idem:.3g} > {tol:.3g}) "
                               f"at R={R}: increase R", idem)
    return proj


def spectral_projection(model, window, R, method="ed", buffer=None, tol=1e-2,
                        edge_weight=0.25, n_k=None, norm_R=None):
    """Kernel of the spectral projection of ``model`` onto ``window``.

    Parameters
    ----------
    R : int
        Working radius.  The kernel keeps ``L <= R - buffer`` for every
        method, so the same ``R`` labels the same kernel support.
    method : {"ed", "bloch", "sign"}
        ``"ed"`` diagonalizes the open-boundary truncation and reads the
        identity-cell row.  ``"bloch"`` integrates the (magnetic) Bloch
        projector on an ``n_k`` grid (abelian groups only).  ``"sign"`` runs
        the Newton-Schulz sign iteration in the truncated group algebra.
    buffer : int, optional
        Defaults to ``ceil(R / 2)``.  ``"ed"`` needs it to keep boundary
        effects out of the kernel; the other methods only use it to fix the
        support radius.
    tol : float or None
        Raise :class:`IdempotencyError` when ``|p * p - p|`` exceeds it.
    edge_weight : float
        ``"ed"`` only: in-gap eigenvectors whose weight inside ball(R - buffer)
        is below ``edge_weight`` times the volume fraction of that ball count
        as boundary states rather than a closed gap.  Only eigenvalues in
        the middle half of each gap are tested.
    """
    if not window.gapped or min(window.margin_lo, window.margin_hi) <= 1e-3:
        raise SpectralGapError("window margins must exceed 1e-3")
    G = model.group
    d = model.d
    buffer = int(math.ceil(R / 2)) if buffer is None else int(buffer)
    r_ker = R - buffer
    if r_ker < 0:
        raise ModelError("buffer larger than R")
    if method == "ed":
        if R - buffer < model.hopping_radius:
            raise ModelError(f"R={R} too small for hopping radius {model.hopping_radius} "
                             f"with buffer {buffer}")
        ball = G.ball_array(R)
        H = truncate(model, R)
        w, V = scipy.linalg.eigh(H)
        inner = _inner_weight(V, G, R, d, R - buffer)
        inner = inner * len(ball) / len(G.ball_array(R - buffer))
        edge = 0
        for cut, margin in window.cuts():
            # mid-gap band: boundary states there are well localized
            near = np.abs(w - cut) < margin * 0.5
            bad = near & (inner >= edge_weight)
            if bad.any():
                raise SpectralGapError("window not gapped on truncation", w[bad])
            edge += int(near.sum())
        inside = (w >= window.E_lo) & (w <= window.E_hi)
        U = V[:, inside]
        P = U @ U.conj().T
        # physical row at the identity equals the left-picture column
        Ginv = G.inv_arrays(ball)
        perm = _permutation(G, ball, Ginv)
        idx = (perm[:, None] * d + np.arange(d)[None, :]).ravel()
        P_left = P[np.ix_(idx, idx)]
        kernel = extract_kernel(P_left, G, R, d, R - buffer, model.hamiltonian.twisted)
        return _finish(model, kernel, window, R, method, edge, tol, norm_R)
    if method == "bloch":
        kernel = _bloch_kernel(model, window, r_ker, n_k)
        return _finish(model, kernel, window, R, method, 0, tol, norm_R)
    if method == "sign":
        h = model.hamiltonian
        one = GammaSequence.identity(G, d, h.twisted)
        cuts = []
        if math.isfinite(window.margin_lo):
            cuts.append((window.E_lo, +1.0))
        if math.isfinite(window.margin_hi):
            cuts.append((window.E_hi, -1.0))
        acc = one * 0.0
        for cut, sgn in cuts:
            S, _ = sign_function(h - cut * one, r_ker)
            acc = acc + 0.5 * sgn * S
        if len(cuts) == 1:
            acc = acc + 0.5 * one
        kernel = symmetrize(acc.restrict(r_ker))
        return _finish(model, kernel, window, R, method, 0, tol, norm_R)
    raise ModelError(f"unknown projection method {method!r}")


def _permutation(G, ball, targets):
    from .sequences import CellIndex
    idx = CellIndex(G, ball).find(targets)
    if (idx < 0).any():
        raise RuntimeError("ball is not closed under inversion")
    return idx


def _bloch_kernel(model, window, R, n_k=None):
    G = model.group
    q = magnetic_period(G)
    d = model.d
    D = G.rank
    if n_k is None:
        n_k = max(64, 4 * R) if D <= 2 else max(24, 3 * R)
    F = bloch_matrices(model, k_grid(n_k, D))
    w, V = np.linalg.eigh(F)
    for cut, margin in window.cuts():
        if np.any(np.abs(w - cut) < margin * 0.5):
            raise SpectralGapError("window not gapped on the Bloch grid",
                                   w[np.abs(w - cut) < margin * 0.5])
    inside = ((w >= window.E_lo) & (w <= window.E_hi)).astype(float)
    Pk = np.einsum("...im,...m,...jm->...ij", V, inside, V.conj())
    Pr = np.fft.ifftn(Pk, axes=tuple(range(D)))        # P[(s, R), (t, 0)]
    keys = G.ball_array(R)
    # p_mu = conj(sigma(mu, mu^-1)) P[e, mu],  P[e, (t + qX, Y)] = P[(0, -(X, Y)), (t, 0)]
    t = np.mod(keys[:, 0], q)
    cell = keys.copy()
    cell[:, 0] = (keys[:, 0] - t) // q
    if np.any(np.abs(cell) >= n_k // 2):
        raise ModelError(f"n_k={n_k} too small for kernel radius {R}")
    idx = tuple(np.mod(-cell[:, j], n_k) for j in range(D))
    blocks = np.empty((len(keys), d, d), dtype=complex)
    for i in range(d):
        for j in range(d):
            blocks[:, i, j] = Pr[idx + (i, t * d + j)]
    ph = np.conj(G.cocycle_arrays(keys, G.inv_arrays(keys)))
    blocks *= ph[:, None, None]
    return symmetrize(GammaSequence(G, keys, blocks, model.hamiltonian.twisted))


# ---------------------------------------------------------------------------
# admissibility

@dataclass
class DecayReport:
    fit: DecayFit
    verdict: str
    admissible: bool

    def to_dict(self):
        return {"fit": self.fit.to_dict(), "verdict": self.verdict,
                "admissible": self.admissible}


def admissibility_check(proj, residual_max=0.5, s_min=6.0):
    """Dual exponential / power-law fit of the kernel decay.

    Admissible when the power-law exponent reaches ``s_min`` with a small
    residual, or the exponential fit succeeds (which implies every power).
    """
    fit = proj.decay if isinstance(proj, SpectralProjection) else fit_decay(
        *sequence_profile(proj))
    verdict = classify(fit, residual_max, s_min)
    ok = verdict == "Schwartz-class" or (fit.s >= s_min and fit.residual_pow < residual_max)
    return DecayReport(fit, verdict, bool(ok))
