"""Wannier bases and tight frames built from gap projections.

Everything happens in the transform picture: a family ``w_1..w_n`` is the
``(d, n)`` block sequence ``W = [Phi(w_1) .. Phi(w_n)]`` and

* ``Phi(p g) = p * Phi(g)`` for the projection kernel ``p``,
* the Gram sequence of a family is ``W* * W``,
* the frame operator applied to ``h`` is ``W * (W* * Phi(h))``.

Orthonormal bases come from the projection method,
``W = (p * T) * G^{-1/2}`` with ``G`` the Gram sequence of the projected
trials ``T``; tight frames project the standard basis of one cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decay import fit_decay, radial_profile
from .models import SpectralProjection, spectral_projection
from .modules import (LatticeWavefunction, bloch_floquet, inverse_bloch_floquet, stack_columns,
                      translate)
from .sequences import (GammaSequence, NotInvertibleError, convolve, inverse_sqrt,
                        involution, module_inner_product, physical_matrix)

ORTHO_TOL = 1e-6
FRAME_TOL = 1e-6
GRAM_FLOOR = 1e-5


class GramNotInvertible(NotInvertibleError):
    """The truncated Gram sequence has a (near) zero eigenvalue."""

    def __init__(self, message, floor):
        super().__init__(message)
        self.floor = floor


@dataclass
class WannierSet:
    """Generators ``w_1..w_n`` whose translates form a basis or a tight frame.

    ``diagnostics`` holds the orthonormality error, frame deviation, range
    error, Gram floor and conditioning, and per-function decay fits, each
    with the radius at which it was measured.
    """

    functions: list
    kind: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.functions)

    @property
    def group(self):
        return self.functions[0].group

    def columns(self):
        return stack_columns(self.functions)

    def valid(self):
        dg = self.diagnostics
        if self.kind == "orthonormal-basis":
            return dg.get("orthonormality_error", np.inf) < dg.get("ortho_tol", ORTHO_TOL)
        return dg.get("frame_deviation", np.inf) < dg.get("frame_tol", FRAME_TOL)

    def to_record(self):
        return {"kind": self.kind, "n": self.n,
                "functions": [bloch_floquet(w).to_record() for w in self.functions],
                "diagnostics": self.diagnostics}


# ---------------------------------------------------------------------------
# trials and Gram sequences

def _kernel(proj):
    return proj.kernel if isinstance(proj, SpectralProjection) else proj


def default_trials(proj, n=None, strategy="delta", model=None, rng=None):
    """Trial orbitals on the identity cell.

    ``"delta"`` puts unit vectors on the ``n`` sites with the largest
    diagonal weight of ``p_e`` (ties broken by site index).  ``"cell"`` uses
    the lowest eigenvectors of the identity-cell Hamiltonian block, and
    ``"random"`` draws Gaussian cell vectors.
    """
    p = _kernel(proj)
    G, d = p.group, p.block_shape[0]
    if n is None:
        n = max(1, int(round(p.trace_at_identity().real)))
    if strategy == "delta":
        diag = np.real(np.diag(p.get(G.identity)))
        sites = np.argsort(-np.round(diag, 10), kind="stable")[:n]
        return [LatticeWavefunction.cell_delta(G, d, int(s)) for s in sorted(sites)]
    if strategy == "cell":
        if model is None:
            raise ValueError("cell trials need the model")
        h_e = model.hamiltonian.get(G.identity)
        _, V = np.linalg.eigh(0.5 * (h_e + h_e.conj().T))
        return [LatticeWavefunction(G, [G.identity], V[:, j][None]) for j in range(n)]
    if strategy == "random":
        rng = np.random.default_rng(0) if rng is None else rng
        return [LatticeWavefunction(G, [G.identity],
                                    rng.standard_normal((1, d)) + 1j * rng.standard_normal((1, d)))
                for _ in range(n)]
    raise ValueError(f"unknown trial strategy {strategy!r}")


def project_trials(proj, trials):
    """``Phi(p g_1) .. Phi(p g_n)`` as one ``(d, n)`` sequence."""
    return convolve(_kernel(proj), stack_columns(trials))


def trial_gram(proj, trials):
    """Gram sequence ``G_{ij, g} = (p g_i | p g_j)_g`` (``n x n`` blocks)."""
    T = project_trials(proj, trials)
    return module_inner_product(T, T)


def gram_floor(gram, R):
    """Smallest eigenvalue of the compression of ``gram`` to ball(R).

    By eigenvalue interlacing this is non-increasing in ``R`` and bounds the
    bottom of the spectrum of the infinite Gram operator from above.
    """
    M = physical_matrix(gram, gram.group.ball_array(R))
    return float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])


def gram_floor_sweep(proj, trials, radii):
    gram = trial_gram(proj, trials)
    return [(int(R), gram_floor(gram, R)) for R in radii]


# ---------------------------------------------------------------------------
# diagnostics

def orthonormality_error(ws, R=None):
    """``max |<g^* w_i, w_j> - delta_ij delta_{g,e}|`` over ``g`` in ball(R)."""
    W = ws.columns() if isinstance(ws, WannierSet) else stack_columns(list(ws))
    S = module_inner_product(W, W)
    if R is not None:
        S = S.restrict(R)
    one = GammaSequence.identity(S.group, S.block_shape[0], S.twisted)
    return float(np.abs((S - one).blocks).max(initial=0.0))


def range_error(ws, proj):
    """``max_j |p w_j - w_j|`` in ``l^2``."""
    p = _kernel(proj)
    W = ws.columns() if isinstance(ws, WannierSet) else stack_columns(list(ws))
    D = convolve(p, W) - W
    if not len(D):
        return 0.0
    return float(np.sqrt(np.sum(np.abs(D.blocks) ** 2, axis=(0, 1))).max())


def range_samples(proj, samples, radius, rng):
    """Normalized vectors ``h = p r`` with Gaussian ``r`` on ball(radius)."""
    p = _kernel(proj)
    G, d = p.group, p.block_shape[0]
    out = []
    for _ in range(samples):
        r = LatticeWavefunction.random(G, d, radius, rng)
        h = inverse_bloch_floquet(convolve(p, bloch_floquet(r)))
        out.append(h * (1.0 / h.norm()))
    return out


def _coefficients(W, h, R):
    """``c_{j, g} = <g^* w_j, h>`` for ``g`` in ball(R), as an ``(n, 1)`` sequence."""
    c = module_inner_product(W, bloch_floquet(h))
    return c.restrict(R) if R is not None else c


def frame_check(ws, proj=None, samples=8, R=8, rng=None, vectors=None):
    """Parseval deviation ``max |sum_{j, g in ball(R)} |<h, g^* f_j>|^2 - |h|^2|``.

    Test vectors are ``vectors`` when given, otherwise ``samples`` projected
    random vectors supported on ball(R // 4) before projection.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if vectors is None:
        vectors = range_samples(proj, samples, max(R // 4, 0), rng)
    W = ws.columns() if isinstance(ws, WannierSet) else stack_columns(list(ws))
    dev = 0.0
    for h in vectors:
        c = _coefficients(W, h, R)
        s = float(np.sum(np.abs(c.blocks) ** 2))
        dev = max(dev, abs(s - h.norm() ** 2))
    return dev


def reconstruction_error(ws, proj, samples=4, R=8, rng=None):
    """``max |p h - sum <g^* w_j, h> g^* w_j|`` over projected random ``h``."""
    rng = np.random.default_rng(1) if rng is None else rng
    p = _kernel(proj)
    W = ws.columns() if isinstance(ws, WannierSet) else stack_columns(list(ws))
    err = 0.0
    for h in range_samples(p, samples, max(R // 4, 0), rng):
        rec = convolve(W, _coefficients(W, h, R))
        ph = convolve(p, bloch_floquet(h))
        D = ph - rec
        err = max(err, float(np.linalg.norm(D.blocks)) if len(D) else 0.0)
    return err


def decay_fits(ws):
    fits = []
    for w in ws.functions if isinstance(ws, WannierSet) else ws:
        L, prof = radial_profile(w.lengths(), np.linalg.norm(w.amps, axis=1))
        fits.append(fit_decay(L, prof))
    return fits


# ---------------------------------------------------------------------------
# constructions

def wannierize(proj, trials=None, radius=None, floor_R=None, floor_min=GRAM_FLOOR,
               tol=1e-13, ortho_tol=ORTHO_TOL, check_R=None):
    """Orthonormal Wannier basis by the projection method.

    Parameters
    ----------
    proj : SpectralProjection or GammaSequence
    trials : list of LatticeWavefunction, optional
        Defaults to :func:`default_trials`.
    radius : int, optional
        Truncation radius of the Newton-Schulz products for ``G^{-1/2}``.
        Defaults to the kernel support radius.
    floor_R : int, optional
        Radius of the Gram compression whose smallest eigenvalue must exceed
        ``floor_min``.  Defaults to ``radius``.

    Raises
    ------
    GramNotInvertible
        When the Gram floor is below ``floor_min``; failure for particular
        trials does not prove that no basis exists.
    """
    p = _kernel(proj)
    trials = default_trials(p) if trials is None else list(trials)
    if not trials or any(len(t) == 0 for t in trials):
        raise ValueError("trials must be nonzero")
    radius = max(p.support_radius(), 1) if radius is None else int(radius)
    floor_R = radius if floor_R is None else int(floor_R)
    T = project_trials(p, trials)
    gram = module_inner_product(T, T)
    M = physical_matrix(gram, gram.group.ball_array(floor_R))
    ev = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
    floor = float(ev[0])
    if floor < floor_min:
        raise GramNotInvertible(
            f"Gram not invertible: trials do not witness freeness "
            f"(floor {floor:.3g} at R={floor_R})", floor)
    Z, info = inverse_sqrt(gram, radius, tol=tol)
    W = convolve(T, Z)
    ws = inverse_bloch_floquet(W)
    ws = [ws] if isinstance(ws, LatticeWavefunction) else ws
    check_R = 2 * radius if check_R is None else check_R
    out = WannierSet(ws, "orthonormal-basis")
    out.diagnostics = {
        "orthonormality_error": orthonormality_error(out, check_R),
        "check_R": int(check_R),
        "range_error": range_error(out, p),
        "gram_floor": floor,
        "gram_floor_R": floor_R,
        "gram_condition": float(ev[-1] / floor),
        "newton_schulz": {"iterations": info.iterations, "residual": info.residual,
                          "converged": info.converged, "radius": radius},
        "decay": [f.to_dict() for f in decay_fits(ws)],
        "ortho_tol": ortho_tol,
    }
    return out


def tight_frame(proj, samples=8, R=None, rng=None, frame_tol=FRAME_TOL):
    """Parseval frame ``f_j = p (delta_e (x) e_j)``, ``j = 1..d``.

    In the transform picture the generators are the columns of the kernel.
    """
    p = _kernel(proj)
    fs = inverse_bloch_floquet(p)
    fs = [fs] if isinstance(fs, LatticeWavefunction) else fs
    out = WannierSet(fs, "tight-frame")
    R = 2 * max(p.support_radius(), 1) + 2 if R is None else int(R)
    out.diagnostics = {
        "frame_deviation": frame_check(out, p, samples, R, rng),
        "frame_R": R,
        "redundancy": float(p.block_shape[0] / max(p.trace_at_identity().real, 1e-300)),
        "range_error": range_error(out, p),
        "decay": [f.to_dict() for f in decay_fits(fs)],
        "frame_tol": frame_tol,
    }
    return out


# ---------------------------------------------------------------------------
# reflection modules

TAU = (0, 1)
HALF_REFLECTION = (1, 1)


def reflection_module_demo(model, R=12, method="ed", window=None, samples=6, rng=None):
    """Symmetric and antisymmetric Wannier generators for a reflection group.

    Builds ``w`` from a rank-one Wannierization of the lowest gap,
    ``w+- = (w +- tau w) / sqrt 2`` and the shifted-centre generator
    ``wM = (w + (1; tau) w) / sqrt 2``, then checks the reflection
    eigenvalues, the overlap pattern and the Parseval identity of
    ``{g^* w+ / sqrt 2}`` on the span of the integer translates of ``w+``.
    """
    from .invariants import z2_generator_invariants
    from .models import select_window

    G = model.group
    if G.family != "InfDihedral":
        raise ValueError("reflection_module_demo needs an InfDihedral model")
    rng = np.random.default_rng(0) if rng is None else rng
    window = select_window(model) if window is None else window
    proj = spectral_projection(model, window, R, method=method)
    ws = wannierize(proj)
    if ws.n != 1:
        raise ValueError("reflection demo expects a rank-one free band")
    w = ws.functions[0]
    tw = translate(w, TAU)
    s = 1 / np.sqrt(2)
    wp = (w + tw) * s
    wm = (w - tw) * s
    wM = (w + translate(w, HALF_REFLECTION)) * s

    def ip(a, b):
        from .modules import inner
        return inner(a, b)

    def dist(a, b):
        return (a - b).norm()

    n_shift = [(n, 0) for n in range(1, 4)]
    overlaps = {
        "<tau w+, w+>": ip(translate(wp, TAU), wp).real,
        "<tau w-, w->": ip(translate(wm, TAU), wm).real,
        "<w+, w->": abs(ip(wp, wm)),
        "<(1;tau) wM, wM>": ip(translate(wM, HALF_REFLECTION), wM).real,
        "<tau wM, wM>": ip(translate(wM, TAU), wM).real,
        "max |<(n;0) w+, w+>|": max(abs(ip(translate(wp, g), wp)) for g in n_shift),
        "max |<(n;0) w-, w->|": max(abs(ip(translate(wm, g), wm)) for g in n_shift),
    }
    # test vectors in the span of the integer translates of w+
    vecs = []
    for _ in range(samples):
        c = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        h = None
        for n, cn in zip(range(-2, 3), c):
            term = translate(wp, (n, 0)) * cn
            h = term if h is None else h + term
        vecs.append(h * (1.0 / h.norm()))
    frame_R = 2 * proj.kernel.support_radius() + 6
    frame_plus = [wp * s]
    return {
        "R": int(R),
        "method": method,
        "orthonormality_error": ws.diagnostics["orthonormality_error"],
        "tau_eigen_error": {"w+": dist(translate(wp, TAU), wp),
                            "w-": dist(translate(wm, TAU), wm * -1.0)},
        "overlaps": overlaps,
        "frame_deviation_plus": frame_check(frame_plus, R=frame_R, vectors=vecs),
        "frame_R": frame_R,
        "invariants": {
            "w": list(z2_generator_invariants(w)),
            "w+": list(z2_generator_invariants(wp)),
            "w-": list(z2_generator_invariants(wm)),
            "wM": list(z2_generator_invariants(wM)),
        },
        "wannier": ws,
        "projection": proj,
    }
