"""Finitely supported matrix-valued sequences on a group.

A :class:`GammaSequence` is the computational stand-in for an element of the
smooth group algebra with matrix coefficients.  Products are left
convolutions, optionally twisted by the group's cocycle:

.. math::

    (a \\star b)_\\gamma = \\sum_\\rho \\sigma(\\rho, \\rho^{-1}\\gamma)\\, a_\\rho b_{\\rho^{-1}\\gamma}.

Two dense realizations are used throughout.  :func:`left_matrix` is the
left-convolution action on sequences, ``M[g, h] = sigma(g h^-1, h) a_{g h^-1}``.
:func:`physical_matrix` is the same operator after relabelling cells by their
inverses, ``P[g, h] = M[g^-1, h^-1]``; it is the hopping matrix of a
lattice operator commuting with the left action of the group on cells.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .groups import GroupDescriptor, GroupError, encode

PRUNE = 1e-14


class ShapeError(GroupError):
    """Block shapes, groups or twist flags do not match."""


class SpectralGapError(RuntimeError):
    """A truncated operator has spectrum where a gap was required."""

    def __init__(self, message, eigenvalues=()):
        self.eigenvalues = list(eigenvalues)
        super().__init__(message)


class NotInvertibleError(RuntimeError):
    pass


class SmoothingError(RuntimeError):
    def __init__(self, message, eps=None):
        self.eps = eps
        super().__init__(message)


class GammaSequence:
    """Finitely supported map from group elements to complex matrix blocks.

    Parameters
    ----------
    group : GroupDescriptor
    keys : array_like, shape (N, k)
        Normal forms.  Repeated keys are summed.
    blocks : array_like, shape (N, rows, cols)
    twisted : bool, optional
        Use the group cocycle in products.  Defaults to ``group.is_twisted``.
    prune : float
        Blocks whose largest entry is below this magnitude are dropped.
    """

    __slots__ = ("group", "keys", "blocks", "twisted", "codes", "_shape")

    def __init__(self, group, keys, blocks, twisted=None, prune=PRUNE):
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, group.rank)
        blocks = np.asarray(blocks, dtype=complex)
        if blocks.ndim != 3 or blocks.shape[0] != keys.shape[0]:
            raise ShapeError("blocks must have shape (N, rows, cols) matching keys")
        self.group = group
        self.twisted = group.is_twisted if twisted is None else bool(twisted)
        codes = encode(keys) if len(keys) else np.zeros(0, dtype=np.int64)
        uniq, inv = np.unique(codes, return_inverse=True)
        if len(uniq) != len(codes):
            summed = np.zeros((len(uniq),) + blocks.shape[1:], dtype=complex)
            np.add.at(summed, inv, blocks)
            first = np.zeros(len(uniq), dtype=np.int64)
            first[inv[::-1]] = np.arange(len(codes))[::-1]
            keys, blocks, codes = keys[first], summed, uniq
        else:
            order = np.argsort(codes, kind="stable")
            keys, blocks, codes = keys[order], blocks[order], codes[order]
        if prune is not None and len(codes):
            keep = np.abs(blocks).reshape(len(codes), -1).max(axis=1) >= prune
            keys, blocks, codes = keys[keep], blocks[keep], codes[keep]
        self.keys, self.blocks, self.codes = keys, blocks, codes
        self._shape = blocks.shape[1:]

    # -- constructors -------------------------------------------------------
    @classmethod
    def zeros(cls, group, shape, twisted=None):
        return cls(group, np.zeros((0, group.rank)), np.zeros((0,) + tuple(shape)), twisted)

    @classmethod
    def delta(cls, group, g=None, block=None, twisted=None):
        """``block`` placed at ``g`` (default: identity element, 1x1 identity)."""
        g = group.identity if g is None else group.check(g)
        block = np.eye(1) if block is None else np.atleast_2d(np.asarray(block, dtype=complex))
        return cls(group, [g], block[None], twisted, prune=None)

    @classmethod
    def identity(cls, group, n=1, twisted=None):
        return cls.delta(group, None, np.eye(n), twisted)

    @classmethod
    def from_dict(cls, group, mapping, twisted=None):
        items = list(mapping.items())
        if not items:
            raise ShapeError("from_dict needs at least one entry to fix the block shape")
        keys = [group.check(g) for g, _ in items]
        blocks = [np.atleast_2d(np.asarray(b, dtype=complex)) for _, b in items]
        return cls(group, keys, np.stack(blocks), twisted)

    @classmethod
    def random(cls, group, shape, radius, rng, decay=0.0, density=1.0, twisted=None):
        """Random sequence on ball(radius) with optional exponential envelope."""
        keys = group.ball_array(radius)
        if density < 1.0:
            keys = keys[rng.random(len(keys)) < density]
            if len(keys) == 0:
                keys = group.ball_array(0)
        L = group.lengths(keys)
        blocks = (rng.standard_normal((len(keys),) + tuple(shape))
                  + 1j * rng.standard_normal((len(keys),) + tuple(shape)))
        blocks *= np.exp(-decay * L)[:, None, None]
        return cls(group, keys, blocks, twisted)

    # -- basic properties ---------------------------------------------------
    @property
    def block_shape(self):
        return tuple(self._shape)

    def __len__(self):
        return len(self.codes)

    def __repr__(self):
        return (f"GammaSequence({self.group.name}, block_shape={self.block_shape}, "
                f"support={len(self)}, twisted={self.twisted})")

    def lengths(self):
        return self.group.lengths(self.keys)

    def support_radius(self):
        return int(self.lengths().max()) if len(self) else 0

    def get(self, g):
        """Block at ``g`` (zeros if outside the support)."""
        c = encode(np.array([self.group.check(g)]))[0]
        i = np.searchsorted(self.codes, c)
        if i < len(self.codes) and self.codes[i] == c:
            return self.blocks[i].copy()
        return np.zeros(self.block_shape, dtype=complex)

    def items(self):
        for k, b in zip(self.keys, self.blocks):
            yield tuple(int(v) for v in k), b

    def _like(self, keys, blocks, prune=PRUNE):
        return GammaSequence(self.group, keys, blocks, self.twisted, prune=prune)

    def _check_compatible(self, other, op):
        if not self.group.same_group(other.group):
            raise ShapeError(f"{op}: sequences live on different groups")
        if self.twisted != other.twisted:
            raise ShapeError(f"{op}: twist flags differ")

    # -- linear structure ---------------------------------------------------
    def __add__(self, other):
        if np.isscalar(other):
            return self + other * GammaSequence.identity(self.group, self.block_shape[0], self.twisted)
        self._check_compatible(other, "add")
        if self.block_shape != other.block_shape:
            raise ShapeError("add: block shapes differ")
        return self._like(np.concatenate([self.keys, other.keys]),
                          np.concatenate([self.blocks, other.blocks]))

    __radd__ = __add__

    def __neg__(self):
        return self._like(self.keys, -self.blocks)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return self._like(self.keys, self.blocks * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def __matmul__(self, other):
        return convolve(self, other)

    def apply_blocks(self, left=None, right=None):
        """Multiply every block by fixed matrices, ``left @ a_g @ right``."""
        B = self.blocks
        if left is not None:
            B = np.asarray(left) @ B
        if right is not None:
            B = B @ np.asarray(right)
        return self._like(self.keys, B)

    def restrict(self, radius):
        """Drop blocks with word length above ``radius``."""
        keep = self.lengths() <= radius
        return self._like(self.keys[keep], self.blocks[keep], prune=None)

    def max_abs(self):
        return float(np.abs(self.blocks).max()) if len(self) else 0.0

    def l1_norm(self):
        """Sum of block spectral norms; an upper bound for the operator norm."""
        if not len(self):
            return 0.0
        return float(np.linalg.norm(self.blocks, ord=2, axis=(1, 2)).sum())

    def max_abs_diff(self, other):
        """Largest entrywise difference, computed without pruning."""
        self._check_compatible(other, "compare")
        d = GammaSequence(self.group, np.concatenate([self.keys, other.keys]),
                          np.concatenate([self.blocks, -other.blocks]), self.twisted,
                          prune=None)
        return d.max_abs()

    def trace_at_identity(self):
        return complex(np.trace(self.get(self.group.identity)))

    def conj_blocks(self):
        return self._like(self.keys, self.blocks.conj())

    # -- serialization ------------------------------------------------------
    def to_record(self):
        """JSON-ready record ``{group, block_shape, entries}``."""
        entries = [[list(map(int, k)), {"re": b.real.tolist(), "im": b.imag.tolist()}]
                   for k, b in zip(self.keys, self.blocks)]
        return {"group": self.group.spec(), "block_shape": list(self.block_shape),
                "twisted": self.twisted, "entries": entries}

    @classmethod
    def from_record(cls, rec, group=None):
        group = GroupDescriptor.from_spec(rec["group"]) if group is None else group
        shape = tuple(rec["block_shape"])
        keys = [tuple(e[0]) for e in rec["entries"]]
        blocks = [np.array(e[1]["re"]) + 1j * np.array(e[1]["im"]) for e in rec["entries"]]
        if not keys:
            return cls.zeros(group, shape, rec.get("twisted"))
        return cls(group, keys, np.array(blocks).reshape((-1,) + shape),
                   rec.get("twisted"), prune=None)

    def to_json(self):
        return json.dumps(self.to_record())

    @classmethod
    def from_json(cls, text, group=None):
        return cls.from_record(json.loads(text), group)


# ---------------------------------------------------------------------------
# algebra

_PAIR_CHUNK = 1_500_000


def convolve(a, b, radius=None):
    """Twisted or untwisted left convolution ``a * b``.

    Parameters
    ----------
    radius : int, optional
        Keep only output blocks with word length ``<= radius`` (truncated
        algebra used by the iterative routines).
    """
    a._check_compatible(b, "convolve")
    ra, m = a.block_shape
    m2, cb = b.block_shape
    if m != m2:
        raise ShapeError(f"convolve: block shapes {a.block_shape} and {b.block_shape} "
                         "are incompatible")
    G = a.group
    if len(a) == 0 or len(b) == 0:
        return GammaSequence.zeros(G, (ra, cb), a.twisted)
    na, nb = len(a), len(b)
    prod = G.mul_arrays(a.keys[:, None, :], b.keys[None, :, :]).reshape(-1, G.rank)
    codes = encode(prod)
    if radius is not None:
        keep = G.lengths(prod) <= radius
    else:
        keep = None
    uniq, inv = np.unique(codes, return_inverse=True)
    out = np.zeros((len(uniq), ra * cb), dtype=complex)
    step = max(1, _PAIR_CHUNK // max(1, nb * ra * cb))
    for i0 in range(0, na, step):
        i1 = min(na, i0 + step)
        blk = np.matmul(a.blocks[i0:i1, None], b.blocks[None, :])
        if a.twisted:
            ph = G.cocycle_arrays(a.keys[i0:i1, None, :], b.keys[None, :, :])
            blk = blk * ph[:, :, None, None]
        blk = blk.reshape(-1, ra * cb)
        idx = inv[i0 * nb:i1 * nb]
        if keep is not None:
            sel = keep[i0 * nb:i1 * nb]
            blk, idx = blk[sel], idx[sel]
        for j in range(ra * cb):
            out[:, j] += (np.bincount(idx, weights=blk[:, j].real, minlength=len(uniq))
                          + 1j * np.bincount(idx, weights=blk[:, j].imag, minlength=len(uniq)))
    first = np.zeros(len(uniq), dtype=np.int64)
    first[inv[::-1]] = np.arange(len(codes))[::-1]
    return GammaSequence(G, prod[first], out.reshape(-1, ra, cb), a.twisted)


def involution(a):
    """``(a*)_g = conj(a_{g^-1})^T``, times ``conj(sigma(g, g^-1))`` when twisted."""
    G = a.group
    keys = G.inv_arrays(a.keys)
    blocks = np.conj(np.swapaxes(a.blocks, 1, 2))
    if a.twisted:
        blocks = blocks * np.conj(G.cocycle_arrays(keys, a.keys))[:, None, None]
    return GammaSequence(G, keys, blocks, a.twisted, prune=None)


def is_self_adjoint_defect(a):
    """``max |a* - a|`` entrywise."""
    return (involution(a) - a).max_abs() if len(a) else 0.0


def symmetrize(a):
    """Self-adjoint part ``(a + a*) / 2``."""
    return (a + involution(a)) * 0.5


def sobolev_norm(a, s):
    """``(sum_g |a_g|_F^2 (1 + L(g))^{2s})^{1/2}``."""
    if s < 0:
        raise ValueError("Sobolev index must be non-negative")
    if not len(a):
        return 0.0
    w = (1.0 + a.lengths()) ** (2.0 * s)
    return float(np.sqrt(np.sum(np.abs(a.blocks) ** 2 * w[:, None, None])))


@dataclass
class SobolevProfile:
    """Sobolev norms at several orders ``s``."""

    pairs: list = field(default_factory=list)

    def norms(self):
        return np.array([n for _, n in self.pairs])

    def is_monotone(self):
        n = self.norms()
        return bool(np.all(np.diff(n) >= -1e-14 * max(1.0, n.max(initial=0.0))))


def sobolev_profile(a, orders=(0, 1, 2, 3, 4)):
    return SobolevProfile([(float(s), sobolev_norm(a, s)) for s in orders])


# ---------------------------------------------------------------------------
# dense realizations

def _lookup(codes_sorted, order, codes):
    pos = np.minimum(np.searchsorted(codes_sorted, codes), len(codes_sorted) - 1)
    hit = codes_sorted[pos] == codes
    return np.where(hit, order[pos], -1)


class CellIndex:
    """Index of a finite set of cells, with vectorized lookup."""

    def __init__(self, group, keys):
        self.group = group
        self.keys = np.asarray(keys, dtype=np.int64).reshape(-1, group.rank)
        c = encode(self.keys)
        self.order = np.argsort(c, kind="stable")
        self.sorted = c[self.order]

    def __len__(self):
        return len(self.keys)

    def find(self, keys):
        """Row positions of ``keys`` (``-1`` where absent)."""
        return _lookup(self.sorted, self.order, encode(keys))


def left_matrix(a, rows, cols):
    """Dense matrix of left convolution by ``a`` from ``cols`` to ``rows``.

    ``rows`` and ``cols`` are key arrays.  Entry blocks are
    ``sigma(g h^-1, h) a_{g h^-1}`` with ``g`` in rows and ``h`` in cols.
    """
    G = a.group
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    r, c = a.block_shape
    M = np.zeros((len(rows), r, len(cols), c), dtype=complex)
    if len(a):
        ridx = CellIndex(G, rows)
        # g = rho h for every support element rho and column h
        g = G.mul_arrays(a.keys[:, None, :], cols[None, :, :])
        gi = ridx.find(g.reshape(-1, G.rank)).reshape(len(a), len(cols))
        si, hj = np.nonzero(gi >= 0)
        blk = a.blocks[si]
        if a.twisted:
            blk = blk * G.cocycle_arrays(a.keys[si], cols[hj])[:, None, None]
        M[gi[si, hj], :, hj, :] = blk
    return M.reshape(len(rows) * r, len(cols) * c)


def physical_matrix(a, rows, cols=None):
    """Hopping-matrix realization ``P[g, h] = sigma(g^-1 h, h^-1) a_{g^-1 h}``."""
    G = a.group
    cols = rows if cols is None else cols
    return left_matrix(a, G.inv_arrays(rows), G.inv_arrays(cols))


def _largest_singular(M):
    if M.size == 0:
        return 0.0
    if min(M.shape) <= 3000:
        return float(np.linalg.norm(M, 2))
    import scipy.sparse
    import scipy.sparse.linalg
    S = scipy.sparse.csr_matrix(M)
    v = scipy.sparse.linalg.svds(S, k=1, return_singular_vectors=False, tol=1e-12,
                                 random_state=0)
    return float(v[0])


def operator_norm(a, R, mode="interior"):
    """Truncation estimate of the operator norm of left convolution by ``a``.

    Parameters
    ----------
    R : int
        Columns run over ball(R).
    mode : {"interior", "square"}
        ``"interior"`` restricts rows to ball(R - support radius), so every
        retained row is an exact row of the infinite operator; this is a
        lower bound that is non-decreasing in ``R``.  ``"square"`` uses the
        compression to ball(R) in both indices, for which matrix
        inequalities such as Cauchy-Schwarz hold exactly.
    """
    if not len(a):
        return 0.0
    G = a.group
    rad = a.support_radius()
    if mode == "interior":
        if R < rad:
            warnings.warn(f"operator_norm: R={R} below support radius {rad}", stacklevel=2)
        rows = G.ball_array(max(R - rad, 0))
    elif mode == "square":
        rows = G.ball_array(R)
    else:
        raise ValueError(f"unknown operator_norm mode {mode!r}")
    return _largest_singular(left_matrix(a, rows, G.ball_array(R)))


@dataclass
class DerivationPower:
    """Kernel of the n-th power of the length derivation, with its norm."""

    n: int
    matrix: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    norm: float


def derivation_power(a, n, R):
    """Kernel ``(L(g) - L(rho^-1 g))^n a_rho`` acting on ball(R).

    Rows are restricted to ball(R - support radius) as in
    :func:`operator_norm`.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    G = a.group
    rows = G.ball_array(max(R - a.support_radius(), 0))
    cols = G.ball_array(R)
    M = left_matrix(a, rows, cols)
    if n:
        r, c = a.block_shape
        Lr = np.repeat(G.lengths(rows), r).astype(float)
        Lc = np.repeat(G.lengths(cols), c).astype(float)
        M = M * (Lr[:, None] - Lc[None, :]) ** n
    return DerivationPower(n, M, rows, cols, _largest_singular(M))


def module_inner_product(h, k):
    """``(h|k)_g = sum_rho <h_rho, k_{rho g}>``, computed as ``h* * k``."""
    if h.block_shape[0] != k.block_shape[0]:
        raise ShapeError("module_inner_product: vector dimensions differ")
    return convolve(involution(h), k)


def fitted_constant(lhs, rhs):
    """Smallest ``C`` with ``lhs <= C * rhs`` on the sampled pairs."""
    lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
    ok = rhs > 0
    return float(np.max(lhs[ok] / rhs[ok])) if ok.any() else 0.0


# ---------------------------------------------------------------------------
# iterative functional calculus in the truncated algebra

@dataclass
class IterationInfo:
    iterations: int
    residual: float
    converged: bool
    scale: float


def inverse_sqrt(a, radius, tol=1e-13, maxiter=100):
    """Newton-Schulz inverse square root of a positive element.

    Products are truncated to ball(radius).  The element is pre-scaled by an
    upper bound of its norm, so its spectrum lies in ``(0, 1]``.

    Returns
    -------
    (GammaSequence, IterationInfo)
    """
    n = a.block_shape[0]
    one = GammaSequence.identity(a.group, n, a.twisted)
    c = a.l1_norm() * 1.0001
    Y = a / c
    Z = one
    best = np.inf
    it = 0
    res = np.inf
    for it in range(1, maxiter + 1):
        ZY = convolve(Z, Y, radius)
        res = (ZY - one).l1_norm()
        if res < tol:
            break
        if res > 0.999 * best and res < 1e-6:
            # truncation floor reached
            break
        best = min(best, res)
        T = (3.0 * one - ZY) * 0.5
        Y = convolve(Y, T, radius)
        Z = convolve(T, Z, radius)
    return Z / np.sqrt(c), IterationInfo(it, float(res), bool(res < max(tol, 1e-6)), float(c))


def sign_function(h, radius, tol=1e-13, maxiter=200):
    """Newton-Schulz sign function ``h |h|^-1`` of a self-adjoint element.

    Requires ``h`` to be invertible (a gap at zero).
    """
    n = h.block_shape[0]
    one = GammaSequence.identity(h.group, n, h.twisted)
    c = h.l1_norm() * 1.0001
    X = h / c
    best = np.inf
    it = 0
    res = np.inf
    for it in range(1, maxiter + 1):
        X2 = convolve(X, X, radius)
        res = (X2 - one).l1_norm()
        if res < tol:
            break
        if res > 0.999 * best and res < 1e-6:
            break
        best = min(best, res)
        X = convolve(X, 3.0 * one - X2, radius) * 0.5
    return X, IterationInfo(it, float(res), bool(res < max(tol, 1e-6)), float(c))


# ---------------------------------------------------------------------------
# projection smoothing

def _bulk_weights(vecs, group, R, block, inner_radius):
    """Weight of each eigenvector on the cells of ball(inner_radius)."""
    L = np.repeat(group.lengths(group.ball_array(R)), block)
    inner = L <= inner_radius
    return np.sum(np.abs(vecs[inner]) ** 2, axis=0)


def extract_kernel(P, group, R, block, radius, twisted=None):
    """Kernel blocks ``a_rho`` from a dense left-picture matrix on ball(R).

    Reads the identity column ``P[rho, e] = a_rho`` for ``L(rho) <= radius``
    and returns the self-adjoint part.
    """
    ball = group.ball_array(R)
    n = len(ball)
    keep = group.lengths(ball) <= radius
    col = P[:, :block].reshape(n, block, block)   # identity is the first cell
    a = GammaSequence(group, ball[keep], col[keep], twisted)
    return symmetrize(a)


@dataclass
class HolomorphicStep:
    projection: GammaSequence
    delta: float
    edge_eigenvalues: list


def holomorphic_step(q, R, delta_min=0.05, buffer=None, edge_weight=0.25):
    """Spectral projection of ``q`` onto eigenvalues above 1/2.

    ``q`` is realized on ball(R); eigenvectors whose weight inside
    ball(R - buffer) is below ``edge_weight`` times the volume fraction of
    that ball are boundary artefacts of the truncation and are reported,
    not treated as gap violations.

    Raises
    ------
    SpectralGapError
        If a bulk eigenvalue lies within ``delta_min`` of 1/2.
    """
    G = q.group
    d = q.block_shape[0]
    buffer = int(np.ceil(R / 2)) if buffer is None else int(buffer)
    ball = G.ball_array(R)
    M = left_matrix(q, ball, ball)
    M = 0.5 * (M + M.conj().T)
    w, V = scipy.linalg.eigh(M)
    dist = np.abs(w - 0.5)
    near = dist < delta_min
    frac = len(G.ball_array(R - buffer)) / len(ball)
    bulk = _bulk_weights(V, G, R, d, R - buffer) >= edge_weight * frac
    bad = near & bulk
    if bad.any():
        raise SpectralGapError("no spectral gap at 1/2 on the truncation", w[bad])
    delta = float(dist[bulk].min()) if bulk.any() else 0.5
    U = V[:, w > 0.5]
    P = U @ U.conj().T
    p = extract_kernel(P, G, R, d, R - buffer, q.twisted)
    return HolomorphicStep(p, delta, [float(x) for x in w[near & ~bulk]])


def polar_unitary(z, R, tol=1e-13):
    """Unitary part ``u = z (z* z)^{-1/2}`` by Newton-Schulz on ball(R) supports."""
    zz = convolve(involution(z), z, R)
    ball = z.group.ball_array(R)
    M = left_matrix(zz, ball, ball)
    smin = float(np.sqrt(max(np.linalg.eigvalsh(0.5 * (M + M.conj().T)).min(), 0.0)))
    if smin < 1e-6:
        raise NotInvertibleError(f"not invertible at radius {R} (smallest singular "
                                 f"value {smin:.3g})")
    inv_abs, info = inverse_sqrt(zz, R, tol=tol)
    return convolve(z, inv_abs, R), info


@dataclass
class SmoothingReport:
    """Measured quantities of the smoothing chain and the bounds they satisfy."""

    eps: float
    idempotency_qn: float
    delta_bound: float
    delta_measured: float
    qn_minus_q: float
    qn_minus_q_bound: float
    p_minus_q: float
    z_minus_2: float
    unitarity: float
    conjugation: float
    trace_p: float
    trace_q: float
    iterations: int

    def checks(self):
        return {
            "eps < 1/12": self.eps < 1 / 12,
            "|qn^2 - qn| < 3 eps": self.idempotency_qn < 3 * self.eps,
            "|qn - q| < (1 - sqrt(1 - 4 eps))/2": self.qn_minus_q < self.qn_minus_q_bound,
            "|p - q| < 1/12 + 1/8": self.p_minus_q < 1 / 12 + 1 / 8,
            "|p - q| < 1": self.p_minus_q < 1,
            "|z - 2| < 2": self.z_minus_2 < 2,
            "u p u* = q": self.conjugation < 1e-8,
            "rank q = rank p": abs(self.trace_p - self.trace_q) < 1e-6,
        }

    def ok(self):
        return all(self.checks().values())


def block_truncation(group, d, n, twisted=None):
    """``pi_n``: identity on the first ``n`` block indices at the identity element."""
    P = np.zeros((d, d))
    P[:n, :n] = np.eye(n)
    return GammaSequence.delta(group, None, P, twisted)


def norm_radius(a, margin=2):
    """Radius at which the interior operator-norm estimate sees full rows."""
    return 2 * a.support_radius() + margin


def opnorm(a, R=None):
    """:func:`operator_norm` at ``R`` or, by default, at :func:`norm_radius`."""
    return operator_norm(a, norm_radius(a) if R is None else max(R, norm_radius(a)))


def opnorm_budget(a, R=None, max_cols=6000):
    """Interior operator-norm estimate at the largest affordable radius.

    The radius is ``R`` if given, otherwise the largest value up to
    :func:`norm_radius` whose column count stays below ``max_cols`` (but
    never below the support radius).
    """
    if not len(a):
        return 0.0
    if R is None:
        G = a.group
        r = a.support_radius()
        R = r
        for cand in range(min(norm_radius(a), G.max_radius), r, -1):
            if len(G.ball_array(cand)) * a.block_shape[1] <= max_cols:
                R = cand
                break
    return operator_norm(a, R)


def projection_smoothing(p, n_trunc, R, buffer=None):
    """Replace ``p`` by a nearby projection supported on ``n_trunc`` block indices.

    Follows the constructive proof: ``q_n = pi_n p pi_n``, ``q = f(q_n)``
    with ``f`` the step at 1/2, ``z = (2q - 1)(2p - 1) + 1`` and ``u`` the
    unitary part of ``z``.

    Returns
    -------
    q, u, SmoothingReport

    Raises
    ------
    SmoothingError
        If ``eps = |p - q_n|`` is not below 1/12.
    """
    G = p.group
    d = p.block_shape[0]
    pi = block_truncation(G, d, n_trunc, p.twisted)
    qn = convolve(convolve(pi, p), pi)
    eps = opnorm(p - qn)
    if eps >= 1 / 12:
        raise SmoothingError(f"eps = {eps:.4g} >= 1/12: increase n_trunc", eps)
    idem = opnorm(convolve(qn, qn) - qn)
    step = holomorphic_step(qn, R, buffer=buffer)
    q = step.projection
    one = GammaSequence.identity(G, d, p.twisted)
    z = convolve(2.0 * q - one, 2.0 * p - one) + one
    u, info = polar_unitary(z, R)
    upu = convolve(convolve(u, p, R), involution(u), R)
    unit = opnorm(convolve(involution(u), u, R) - one)
    rep = SmoothingReport(
        eps=eps,
        idempotency_qn=idem,
        delta_bound=float(0.5 * np.sqrt(max(1 - 4 * eps, 0.0))),
        delta_measured=step.delta,
        qn_minus_q=opnorm(qn - q),
        qn_minus_q_bound=float(0.5 - 0.5 * np.sqrt(max(1 - 4 * eps, 0.0))),
        p_minus_q=opnorm(p - q),
        z_minus_2=opnorm(z - 2.0 * one),
        unitarity=unit,
        conjugation=opnorm(upu - q),
        trace_p=float(p.trace_at_identity().real),
        trace_q=float(q.trace_at_identity().real),
        iterations=info.iterations,
    )
    return q, u, rep
