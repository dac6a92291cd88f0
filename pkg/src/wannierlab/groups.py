"""Finitely generated symmetry groups with word metrics and 2-cocycles.

Elements are stored as tuples of ints in a family-specific normal form.
All group operations also exist in a vectorized form acting on integer
arrays of shape ``(N, k)``, which is what the sequence algebra uses.

Families
--------
``Zd``
    Integer vectors, standard generators ``±e_i``.
``Pg``
    Pairs ``(n1, n2)`` standing for ``a^n1 g^n2`` where ``a`` is the unit
    translation perpendicular to the glide axis and ``g`` the glide
    reflection.  Affinely ``a: (x, y) -> (x, y + 1)`` and
    ``g: (x, y) -> (x + 1/2, -y)``, so ``g a g^-1 = a^-1`` and ``g^2`` is the
    unit translation along the glide axis.
``InfDihedral``
    Pairs ``(n, r)`` acting on the line by ``x -> (-1)^r x + n``.
``HeisZ``
    Triples ``(x, y, z)`` for the unipotent matrix ``[[1, x, z], [0, 1, y], [0, 0, 1]]``.
``TwistedZ2``
    Integer pairs; the twist lives in the Landau-gauge cocycle
    ``sigma((a, b), (c, d)) = exp(2 pi i theta b c)``.
"""
from __future__ import annotations

import threading
from fractions import Fraction

import numpy as np

FAMILIES = ("Zd", "Pg", "InfDihedral", "HeisZ", "TwistedZ2")


class GroupError(ValueError):
    """Usage error: wrong family, malformed element or parameter."""


class RadiusExceeded(RuntimeError):
    """Raised when a length lookup falls outside the largest allowed ball."""

    def __init__(self, radius, element=None):
        self.radius = radius
        self.element = element
        super().__init__(f"radius exceeded: element {element} not found within "
                         f"word length {radius}")


# ---------------------------------------------------------------------------
# key encoding: rows of small ints -> one int64, order preserving

def _encoding_bits(k):
    return 21 if k <= 3 else 63 // k


def encode(keys):
    """Pack integer rows into int64 codes preserving lexicographic order."""
    keys = np.asarray(keys, dtype=np.int64)
    if keys.ndim == 1:
        keys = keys[None, :]
    k = keys.shape[1]
    bits = _encoding_bits(k)
    off = 1 << (bits - 1)
    if keys.size and (keys.min() < -off or keys.max() >= off):
        raise GroupError("normal form coordinate too large to encode")
    code = np.zeros(keys.shape[0], dtype=np.int64)
    for j in range(k):
        code = (code << bits) | (keys[:, j] + off)
    return code


def decode(codes, k):
    """Inverse of :func:`encode`."""
    codes = np.asarray(codes, dtype=np.int64)
    bits = _encoding_bits(k)
    off = 1 << (bits - 1)
    mask = (1 << bits) - 1
    out = np.empty((codes.shape[0], k), dtype=np.int64)
    c = codes.copy()
    for j in range(k - 1, -1, -1):
        out[:, j] = (c & mask) - off
        c = c >> bits
    return out


def _parity_sign(n):
    # (-1)**n for int arrays, valid for negative n as well
    return 1 - 2 * (n & 1)


class GroupDescriptor:
    """A finitely generated group with word metric and optional cocycle.

    Parameters
    ----------
    family : str
        One of ``FAMILIES``.
    dim : int
        Rank for ``Zd`` (ignored otherwise).
    theta : float, str or Fraction, optional
        Flux per cell for ``TwistedZ2``.  Strings like ``"1/3"`` are exact;
        floats are converted with ``Fraction.limit_denominator(10**6)``.
    max_radius : int, optional
        Largest radius the length table may grow to.

    Notes
    -----
    The length table is extended lazily by breadth-first search under a
    lock, so a descriptor can be shared between threads.
    """

    def __init__(self, family, dim=2, theta=None, max_radius=None):
        if family not in FAMILIES:
            raise GroupError(f"unknown group family {family!r}")
        self.family = family
        if family == "Zd":
            if int(dim) < 1:
                raise GroupError("Zd needs dim >= 1")
            self.rank = int(dim)
        elif family in ("Pg", "InfDihedral", "TwistedZ2"):
            self.rank = 2
        else:
            self.rank = 3
        self.dim = self.rank if family == "Zd" else None
        if theta is not None and family != "TwistedZ2":
            raise GroupError("only TwistedZ2 carries a cocycle parameter")
        self.theta = _as_fraction(theta) if family == "TwistedZ2" else None
        if family == "TwistedZ2" and self.theta is None:
            self.theta = Fraction(0)
        if max_radius is None:
            # lazily enumerated; this only caps memory for runaway requests
            max_radius = 16 if family == "HeisZ" else (48 if self.rank >= 3 else 160)
        self.max_radius = int(max_radius)
        self.generators = self._default_generators()
        self._lock = threading.Lock()
        self._codes = np.zeros(0, dtype=np.int64)      # sorted codes
        self._lengths = np.zeros(0, dtype=np.int64)    # lengths aligned with codes
        self._layers = []                              # per-radius arrays of keys
        self._radius = -1
        self._extend(0)

    # -- description --------------------------------------------------------
    def __repr__(self):
        extra = ""
        if self.family == "Zd":
            extra = f", dim={self.rank}"
        if self.family == "TwistedZ2":
            extra = f", theta={self.theta}"
        return f"GroupDescriptor({self.family!r}{extra})"

    @property
    def name(self):
        if self.family == "Zd":
            return f"Z{self.rank}"
        if self.family == "TwistedZ2":
            return f"TwistedZ2[{self.theta}]"
        return self.family

    def spec(self):
        """Plain-data description, used for hashing and serialization."""
        d = {"family": self.family}
        if self.family == "Zd":
            d["dim"] = self.rank
        if self.family == "TwistedZ2":
            d["theta"] = str(self.theta)
        return d

    @classmethod
    def from_spec(cls, d):
        return cls(d["family"], dim=d.get("dim", 2), theta=d.get("theta"))

    def same_group(self, other):
        return self.spec() == other.spec()

    @property
    def is_twisted(self):
        return self.family == "TwistedZ2" and self.theta != 0

    @property
    def is_abelian(self):
        return self.family in ("Zd", "TwistedZ2")

    @property
    def identity(self):
        return (0,) * self.rank

    def _default_generators(self):
        k = self.rank
        if self.family in ("Zd", "TwistedZ2"):
            gens = []
            for i in range(k):
                e = [0] * k
                e[i] = 1
                gens.append(tuple(e))
                e = [0] * k
                e[i] = -1
                gens.append(tuple(e))
            return gens
        if self.family == "Pg":
            return [(1, 0), (-1, 0), (0, 1), (0, -1)]
        if self.family == "InfDihedral":
            return [(1, 0), (-1, 0), (0, 1)]
        return [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)]

    # -- element checks -----------------------------------------------------
    def check(self, g):
        g = tuple(int(v) for v in g)
        if len(g) != self.rank:
            raise GroupError(f"{self.name}: element {g} has wrong length")
        if self.family == "InfDihedral" and g[1] not in (0, 1):
            raise GroupError(f"InfDihedral: reflection bit must be 0 or 1, got {g}")
        return g

    # -- group law (vectorized) --------------------------------------------
    def mul_arrays(self, A, B):
        """Row-wise products of two ``(N, k)`` integer arrays."""
        A = np.asarray(A, dtype=np.int64)
        B = np.asarray(B, dtype=np.int64)
        f = self.family
        if f in ("Zd", "TwistedZ2"):
            return A + B
        out = np.empty(np.broadcast(A, B).shape, dtype=np.int64)
        if f == "Pg":
            out[..., 0] = A[..., 0] + _parity_sign(A[..., 1]) * B[..., 0]
            out[..., 1] = A[..., 1] + B[..., 1]
        elif f == "InfDihedral":
            out[..., 0] = A[..., 0] + _parity_sign(A[..., 1]) * B[..., 0]
            out[..., 1] = (A[..., 1] + B[..., 1]) & 1
        else:
            out[..., 0] = A[..., 0] + B[..., 0]
            out[..., 1] = A[..., 1] + B[..., 1]
            out[..., 2] = A[..., 2] + B[..., 2] + A[..., 0] * B[..., 1]
        return out

    def inv_arrays(self, A):
        A = np.asarray(A, dtype=np.int64)
        f = self.family
        if f in ("Zd", "TwistedZ2"):
            return -A
        out = np.empty_like(A)
        if f in ("Pg", "InfDihedral"):
            out[..., 0] = -_parity_sign(A[..., 1]) * A[..., 0]
            out[..., 1] = -A[..., 1] if f == "Pg" else A[..., 1]
        else:
            out[..., 0] = -A[..., 0]
            out[..., 1] = -A[..., 1]
            out[..., 2] = -A[..., 2] + A[..., 0] * A[..., 1]
        return out

    def multiply(self, g, h):
        g, h = self.check(g), self.check(h)
        return tuple(int(v) for v in self.mul_arrays(np.array([g]), np.array([h]))[0])

    def inverse(self, g):
        g = self.check(g)
        return tuple(int(v) for v in self.inv_arrays(np.array([g]))[0])

    # -- cocycle ------------------------------------------------------------
    def cocycle_arrays(self, A, B):
        """Landau-gauge cocycle evaluated row-wise; ones when untwisted."""
        A = np.asarray(A, dtype=np.int64)
        B = np.asarray(B, dtype=np.int64)
        n = np.broadcast(A[..., 0], B[..., 0]).shape
        if not self.is_twisted:
            return np.ones(n, dtype=complex)
        p, q = self.theta.numerator, self.theta.denominator
        # exact reduction of theta*b*c modulo 1
        r = np.mod(p * A[..., 1] * B[..., 0], q)
        return np.exp(2j * np.pi * r / q)

    def cocycle(self, g, h):
        g, h = self.check(g), self.check(h)
        return complex(self.cocycle_arrays(np.array([g]), np.array([h]))[0])

    def verify_cocycle_identity(self, samples=1000, seed=0, sigma=None, spread=6):
        """Check the 2-cocycle identity on random triples.

        Parameters
        ----------
        sigma : callable, optional
            Replacement cocycle ``sigma(A, B)`` acting on arrays, used for
            negative controls.  Defaults to :meth:`cocycle_arrays`.
        """
        sigma = self.cocycle_arrays if sigma is None else sigma
        rng = np.random.default_rng(seed)
        g1, g2, g3 = (self.random_elements(samples, rng, spread) for _ in range(3))
        lhs = sigma(g1, g2) * sigma(self.mul_arrays(g1, g2), g3)
        rhs = sigma(g1, self.mul_arrays(g2, g3)) * sigma(g2, g3)
        return bool(np.all(np.abs(lhs - rhs) < 1e-12))

    def random_elements(self, n, rng, spread=6):
        """Uniform random normal forms with coordinates in ``[-spread, spread]``."""
        X = rng.integers(-spread, spread + 1, size=(n, self.rank))
        if self.family == "InfDihedral":
            X[:, 1] &= 1
        return X.astype(np.int64)

    # -- word metric --------------------------------------------------------
    def _extend(self, R):
        """Grow the BFS length table up to radius ``R`` (under the lock)."""
        if R <= self._radius:
            return
        if R > self.max_radius:
            raise RadiusExceeded(self.max_radius)
        with self._lock:
            if self._radius < 0:
                e = np.zeros((1, self.rank), dtype=np.int64)
                self._layers = [e]
                self._codes = encode(e)
                self._lengths = np.zeros(1, dtype=np.int64)
                self._radius = 0
            gens = np.array(self.generators, dtype=np.int64)
            codes, lengths = self._codes, self._lengths
            layers = list(self._layers)
            while len(layers) - 1 < R:
                front = layers[-1]
                nb = self.mul_arrays(np.repeat(front, len(gens), axis=0),
                                     np.tile(gens, (len(front), 1)))
                c = np.unique(encode(nb))
                pos = np.searchsorted(codes, c)
                pos = np.minimum(pos, len(codes) - 1)
                new = c[codes[pos] != c]
                layers.append(decode(new, self.rank))
                merged = np.concatenate([codes, new])
                order = np.argsort(merged, kind="stable")
                codes = merged[order]
                lengths = np.concatenate([lengths,
                                          np.full(len(new), len(layers) - 1)])[order]
            # publish atomically for concurrent readers
            self._layers = layers
            self._codes, self._lengths = codes, lengths
            self._radius = len(layers) - 1

    def lengths(self, keys):
        """Word lengths for an array of normal forms (vectorized).

        Raises
        ------
        RadiusExceeded
            If some element is not within ``max_radius``.
        """
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, self.rank)
        if keys.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        c = encode(keys)
        while True:
            codes, lengths = self._codes, self._lengths
            pos = np.minimum(np.searchsorted(codes, c), len(codes) - 1)
            found = codes[pos] == c
            if found.all():
                return lengths[pos]
            if self._radius >= self.max_radius:
                bad = tuple(int(v) for v in keys[np.argmin(found)])
                raise RadiusExceeded(self._radius, bad)
            # a cheap lower bound on the missing lengths avoids one layer at a time
            self._extend(min(self.max_radius, self._radius + max(1, self._radius // 2)))

    def word_length(self, g):
        return int(self.lengths(np.array([self.check(g)]))[0])

    def ball_array(self, R):
        """Keys of ball(R) as an ``(N, k)`` array in BFS-then-lexicographic order."""
        if R < 0:
            raise GroupError("radius must be non-negative")
        self._extend(int(R))
        return np.concatenate(self._layers[: int(R) + 1], axis=0)

    def ball(self, R):
        return [tuple(int(v) for v in row) for row in self.ball_array(R)]

    def ball_sizes(self, R_max):
        self._extend(int(R_max))
        return np.cumsum([len(L) for L in self._layers[: int(R_max) + 1]])

    def growth_exponent(self, R_max=12):
        """Least-squares slope of log|B_R| against log R over [R_max/2, R_max]."""
        if R_max < 4:
            raise GroupError("growth_exponent needs R_max >= 4")
        sizes = self.ball_sizes(R_max)
        R = np.arange(int(np.ceil(R_max / 2)), R_max + 1)
        slope, _ = np.polyfit(np.log(R), np.log(sizes[R]), 1)
        return float(slope)

    # -- geometry helpers ---------------------------------------------------
    def positions(self, keys):
        """Real-space coordinates of the cells, used by position operators."""
        keys = np.asarray(keys, dtype=np.int64)
        if self.family == "Pg":
            # a^n1 g^n2 maps the origin to (n2/2, n1)
            return np.stack([keys[:, 1] / 2.0, keys[:, 0].astype(float)], axis=1)
        if self.family == "InfDihedral":
            return keys[:, :1].astype(float)
        return keys.astype(float)

    def affine(self, g):
        """Affine map of a Pg or InfDihedral element as (matrix, offset)."""
        g = self.check(g)
        if self.family == "Pg":
            n1, n2 = g
            s = 1 - 2 * (n2 & 1)
            # a^n1 g^n2 : (x, y) -> (x + n2/2, s y + n1)
            return np.array([[1.0, 0.0], [0.0, s]]), np.array([n2 / 2.0, float(n1)])
        if self.family == "InfDihedral":
            n, r = g
            return np.array([[1.0 - 2 * r]]), np.array([float(n)])
        raise GroupError("affine realization only for Pg and InfDihedral")


def _as_fraction(theta):
    if theta is None:
        return None
    if isinstance(theta, Fraction):
        return theta
    if isinstance(theta, str):
        return Fraction(theta.strip())
    if isinstance(theta, (int, np.integer)):
        return Fraction(int(theta))
    return Fraction(float(theta)).limit_denominator(10**6)


def make_group(family, **params):
    """Build a descriptor from a family name and keyword parameters."""
    aliases = {"Z1": ("Zd", 1), "Z2": ("Zd", 2), "Z3": ("Zd", 3)}
    if family in aliases:
        family, dim = aliases[family]
        params.setdefault("dim", dim)
    return GroupDescriptor(family, **params)
