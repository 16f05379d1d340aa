"""Homogeneous cones realized by triangular matrix patterns.

A cone is the set {t t* : t in T_+} where T_+ is the group of pattern
lower-triangular matrices with positive diagonal, the product being the
matrix product with entries outside the pattern projected away.  Three
built-in patterns cover the reducible, irreducible-symmetric, and
non-symmetric cases:

    DIAGONAL  all off-diagonal blocks empty  ->  product of half-lines
    FULL      all blocks present             ->  symmetric positive definite
    VINBERG   rank 3, blocks (2,1) and (3,2) ->  tridiagonal positive definite

Points of the cone, of its dual, and of the complexified ambient space
are stored as flat coordinate vectors in the layout of `_kernels`
(diagonal first, then off-diagonal entries, raw matrix values).  The
Euclidean structure is <a, b> = tr(a* b), so symmetric matrices pair as
sum(diag) + 2 sum(offdiag) and carry a Lebesgue density 2^(npairs/2)
relative to raw entry coordinates.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (BranchAmbiguity, NotInCone, NotInDualCone, NotInTube,
                     PatternNotClosed)

PIVOT_TOL = 1e-13  # relative to the trace scale; borderline points rejected

DIAGONAL = "diagonal"
FULL = "full"
VINBERG = "vinberg"


def _builtin_pairs(name, rank):
    if name == DIAGONAL:
        return []
    if name == FULL:
        return [(k, j) for j in range(rank) for k in range(j + 1, rank)]
    if name == VINBERG:
        if rank != 3:
            raise ValueError("the vinberg pattern has rank 3")
        return [(1, 0), (2, 1)]
    raise ValueError(f"unknown pattern {name!r}")


@dataclass(frozen=True)
class TAlgebraPattern:
    """Zero-pattern on lower-triangular rank x rank real matrices."""

    rank: int
    pairs: tuple  # ((k, j), ...) with k > j, the present off-diagonal entries
    name: str = "custom"

    @staticmethod
    def builtin(name, rank=None):
        if rank is None:
            rank = {DIAGONAL: 2, FULL: 2, VINBERG: 3}[name]
        return TAlgebraPattern(rank, tuple(sorted(_builtin_pairs(name, rank),
                                                  key=lambda p: (p[1], p[0]))), name)

    @property
    def block_dims(self):
        """m_{jk} table (symmetric, 0/1 in the scalar realization)."""
        t = np.zeros((self.rank, self.rank), dtype=int)
        for (k, j) in self.pairs:
            t[j, k] = t[k, j] = 1
        return t

    def is_closed(self):
        """Associativity of the pattern-projected triangular product.

        A term t_ik u_kl v_lj survives left association iff entry (i, l)
        is kept and right association iff (k, j) is kept; the projected
        product is a group law iff these agree whenever the three factor
        entries and the target entry (i, j) are all in the pattern.
        """
        pres = {(a, a) for a in range(self.rank)} | set(self.pairs)
        for i in range(self.rank):
            for k in range(i + 1):
                for l in range(k + 1):
                    for j in range(l + 1):
                        if ((i, k) in pres and (k, l) in pres and (l, j) in pres
                                and (i, j) in pres):
                            if (((i, l) in pres) != ((k, j) in pres)):
                                return False
        return True


@dataclass(frozen=True)
class ConeDescriptor:
    """A homogeneous cone plus its derived combinatorial data."""

    pattern: TAlgebraPattern
    m_vec: np.ndarray
    mp_vec: np.ndarray
    d_vec: np.ndarray
    ambient_dim: int
    e_cone: np.ndarray = field(repr=False)
    e_dual: np.ndarray = field(repr=False)
    _pd: _kernels.PatternData = field(repr=False, compare=False)

    @property
    def rank(self):
        return self.pattern.rank

    @property
    def npairs(self):
        return self._pd.npairs

    @property
    def name(self):
        return self.pattern.name

    # Lebesgue density of the Hausdorff measure w.r.t. raw entry coords
    @property
    def hausdorff_scale(self):
        return 2.0 ** (self.npairs / 2.0)

    @property
    def reversed_labels(self):
        """Whether grading index j sits at matrix slot r+1-j.

        The factorization eliminates matrix slots top-left first, while
        the gamma-function product formula indexes characters so that the
        first index carries the largest half-integer shift; for patterns
        with off-diagonal entries these orders are opposite.  Product
        cones are label-symmetric and keep the identity assignment.
        """
        return self.npairs > 0

    def __hash__(self):
        return hash((self.pattern.rank, self.pattern.pairs))

    def __eq__(self, other):
        return (isinstance(other, ConeDescriptor)
                and self.pattern.rank == other.pattern.rank
                and self.pattern.pairs == other.pattern.pairs)


def build_cone(pattern):
    """Construct the cone descriptor for a triangular pattern.

    Raises PatternNotClosed if the projected product is not a group law.
    """
    if isinstance(pattern, str):
        pattern = TAlgebraPattern.builtin(pattern)
    if not pattern.is_closed():
        raise PatternNotClosed(f"pattern {pattern.pairs} of rank {pattern.rank}")
    r = pattern.rank
    dims = pattern.block_dims
    m_vec = np.array([dims[j, j + 1:].sum() for j in range(r)], dtype=float)
    mp_vec = np.array([dims[j, :j].sum() for j in range(r)], dtype=float)
    d_vec = -(np.ones(r) + 0.5 * m_vec + 0.5 * mp_vec)
    pd = _kernels.PatternData(r, pattern.pairs)
    e = np.zeros(pd.m)
    e[:r] = 1.0
    return ConeDescriptor(pattern, m_vec, mp_vec, d_vec, pd.m, e, e.copy(), pd)


def diagonal_cone(rank=2):
    return build_cone(TAlgebraPattern.builtin(DIAGONAL, rank))


def full_cone(rank=2):
    return build_cone(TAlgebraPattern.builtin(FULL, rank))


def vinberg_cone():
    return build_cone(TAlgebraPattern.builtin(VINBERG, 3))


# ---------------------------------------------------------------------------
# coordinates
# ---------------------------------------------------------------------------

def coords_to_matrix(cone, coords, symmetric=True):
    """Flat coordinates -> dense matrix (symmetric or lower-triangular)."""
    pd = cone._pd
    coords = np.asarray(coords)
    a = np.zeros(coords.shape[:-1] + (cone.rank, cone.rank), dtype=coords.dtype)
    for j in range(cone.rank):
        a[..., j, j] = coords[..., j]
    for p, (k, j) in enumerate(pd.pairs):
        a[..., k, j] = coords[..., cone.rank + p]
        if symmetric:
            a[..., j, k] = coords[..., cone.rank + p]
    return a


def matrix_to_coords(cone, mat):
    pd = cone._pd
    mat = np.asarray(mat, dtype=float)
    out = np.empty(mat.shape[:-2] + (pd.m,))
    for j in range(cone.rank):
        out[..., j] = mat[..., j, j]
    for p, (k, j) in enumerate(pd.pairs):
        out[..., cone.rank + p] = mat[..., k, j]
    return out


def pairing(cone, lam, h):
    """<lam, h> = tr(lam h) for pattern-symmetric matrices in coordinates."""
    lam = np.asarray(lam)
    h = np.asarray(h)
    r = cone.rank
    return (lam[..., :r] * h[..., :r]).sum(axis=-1) + \
        2.0 * (lam[..., r:] * h[..., r:]).sum(axis=-1)


def trace(cone, h):
    return np.asarray(h)[..., :cone.rank].sum(axis=-1)


def slot_weights(cone, s):
    """Weight vector rearranged from grading order to pivot-slot order."""
    s = np.asarray(s).reshape(-1)
    return s[::-1] if cone.reversed_labels else s



# ---------------------------------------------------------------------------
# the triangular group
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriangularElement:
    """Element of T_+: pattern lower-triangular, positive diagonal."""

    cone: ConeDescriptor
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.any(self.coords[:self.cone.rank] <= 0):
            raise ValueError("triangular element needs a positive diagonal")

    @property
    def diag(self):
        return self.coords[:self.cone.rank]

    @property
    def matrix(self):
        return coords_to_matrix(self.cone, self.coords, symmetric=False)

    def __matmul__(self, other):
        """Group product: matrix product projected onto the pattern."""
        prod = self.matrix @ other.matrix
        return TriangularElement(self.cone, matrix_to_coords(self.cone, prod))

    def inverse(self):
        inv = np.linalg.inv(self.matrix)  # projection drops any fill-in
        return TriangularElement(self.cone, matrix_to_coords(self.cone, inv))

    def act(self, h):
        """Left action on a cone point: t . h = (t u)(t u)* for h = u u*."""
        u = factor_coords(self.cone, h)
        tu = self.matrix @ coords_to_matrix(self.cone, u, symmetric=False)
        return _recompose_tri(self.cone, matrix_to_coords(self.cone, tu))

    def act_dual(self, lam):
        """Right action on a dual point: lam . t = (u t)* (u t) for lam = u* u."""
        u = dual_factor_coords(self.cone, lam)
        ut = coords_to_matrix(self.cone, u, symmetric=False) @ self.matrix
        m = coords_to_matrix(self.cone, matrix_to_coords(self.cone, ut),
                             symmetric=False)
        return matrix_to_coords(self.cone, m.T @ m)

    def character(self, s):
        """The character Delta^s(t) of T_+ evaluated on this element."""
        w = slot_weights(self.cone, np.asarray(s))
        return np.prod(self.diag.astype(complex) ** (2.0 * w))


def identity_element(cone):
    return TriangularElement(cone, cone.e_cone.copy())


def _recompose_tri(cone, tcoords):
    """Pi_H(t t^T) in coordinates, for pattern-triangular t."""
    t = coords_to_matrix(cone, tcoords, symmetric=False)
    return matrix_to_coords(cone, t @ t.T)


def recompose(t):
    """ConePoint coordinates t t* of a TriangularElement."""
    return _recompose_tri(t.cone, t.coords)


def recompose_dual(t):
    """DualPoint coordinates t* t of a TriangularElement."""
    m = t.matrix
    return matrix_to_coords(t.cone, m.T @ m)


# ---------------------------------------------------------------------------
# factorization and membership
# ---------------------------------------------------------------------------

def factor_batch(cone, coords):
    """Batched pattern Cholesky h = t t*.

    Returns (tcoords, ok).  ok[i] is False when a pivot falls below
    PIVOT_TOL times the trace scale (point not in the open cone).
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    D, L = _kernels.ldl_batch(coords, cone._pd)
    scale = np.maximum(np.abs(coords[:, :cone.rank]).sum(axis=1), 1e-300)
    ok = np.all(D > PIVOT_TOL * scale[:, None], axis=1)
    sq = np.sqrt(np.where(D > 0, D, np.nan))
    t = np.empty_like(coords)
    t[:, :cone.rank] = sq
    if cone.npairs:
        t[:, cone.rank:] = L * sq[:, cone._pd.pair_j]
    return t, ok


def factor_coords(cone, coords):
    t, ok = factor_batch(cone, coords)
    if not ok[0]:
        raise NotInCone("factorization hit a nonpositive pivot")
    return t[0]


def factor(cone, h):
    """TriangularElement t with t t* = h; raises NotInCone."""
    return TriangularElement(cone, factor_coords(cone, np.asarray(h, dtype=float)))


def in_cone(cone, coords):
    _, ok = factor_batch(cone, np.asarray(coords, dtype=float))
    return ok if ok.size > 1 else bool(ok[0])


def dual_factor_batch(cone, coords):
    """Batched reverse factorization lam = t* t."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    D, L = _kernels.rev_ldl_batch(coords, cone._pd)
    scale = np.maximum(np.abs(coords[:, :cone.rank]).sum(axis=1), 1e-300)
    ok = np.all(D > PIVOT_TOL * scale[:, None], axis=1)
    sq = np.sqrt(np.where(D > 0, D, np.nan))
    t = np.empty_like(coords)
    t[:, :cone.rank] = sq
    if cone.npairs:
        t[:, cone.rank:] = L * sq[:, cone._pd.pair_k]
    return t, ok


def dual_factor_coords(cone, coords):
    t, ok = dual_factor_batch(cone, coords)
    if not ok[0]:
        raise NotInDualCone("reverse factorization hit a nonpositive pivot")
    return t[0]


def dual_factor(cone, lam):
    """TriangularElement t with t* t = lam; raises NotInDualCone."""
    return TriangularElement(cone, dual_factor_coords(cone, np.asarray(lam, dtype=float)))


def in_dual_cone(cone, coords):
    _, ok = dual_factor_batch(cone, np.asarray(coords, dtype=float))
    return ok if ok.size > 1 else bool(ok[0])


# ---------------------------------------------------------------------------
# power functions and invariant measure
# ---------------------------------------------------------------------------

def power_batch(cone, s, coords):
    """Delta^s on a batch of cone points; nan where not in the cone."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    D, _ = _kernels.ldl_batch(coords, cone._pd)
    w = slot_weights(cone, np.asarray(s, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        logs = np.log(np.where(D > 0, D, np.nan))
        vals = np.exp(logs @ w)
    return vals


def power_function(cone, s, h):
    """Delta^s(h), the generalized power function.  Complex s allowed."""
    t = factor_coords(cone, np.asarray(h, dtype=float))
    diag = t[:cone.rank]
    w = slot_weights(cone, np.asarray(s))
    val = np.prod(diag.astype(complex) ** (2.0 * w))
    return val.real if np.isrealobj(w) else val


def power_function_dual(cone, s, lam):
    """Dual power function via the reverse factorization."""
    t = dual_factor_coords(cone, np.asarray(lam, dtype=float))
    diag = t[:cone.rank]
    w = slot_weights(cone, np.asarray(s))
    val = np.prod(diag.astype(complex) ** (2.0 * w))
    return val.real if np.isrealobj(w) else val


def power_dual_batch(cone, s, coords):
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    D, _ = _kernels.rev_ldl_batch(coords, cone._pd)
    w = slot_weights(cone, np.asarray(s, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        logs = np.log(np.where(D > 0, D, np.nan))
        vals = np.exp(logs @ w)
    return vals


def power_complex_batch(cone, s, wre, wim, max_steps=64):
    """Holomorphic continuation of Delta^s to a batch of tube points.

    wre, wim: (N, m) coordinate arrays with wre[i] in the cone.  Branches
    are tracked continuously along the segment from wre to wre + i wim.
    Returns complex values; raises NotInTube/BranchAmbiguity on failure.
    """
    wre = np.atleast_2d(np.asarray(wre, dtype=float))
    wim = np.atleast_2d(np.asarray(wim, dtype=float))
    _, ok = factor_batch(cone, wre)
    if not np.all(ok):
        raise NotInTube("real part left the cone")
    theta, ambiguous = _kernels.homotopy_pivot_logs(wre, wim, cone._pd, max_steps)
    if np.any(ambiguous):
        raise BranchAmbiguity(f"{int(ambiguous.sum())} points failed continuation")
    return np.exp(theta @ slot_weights(cone, np.asarray(s, dtype=complex)))


def power_function_complex(cone, s, w):
    """Delta^s at w = h + ix with h in the cone (principal on the cone)."""
    w = np.asarray(w, dtype=complex)
    return complex(power_complex_batch(cone, s, w.real[None, :], w.imag[None, :])[0])


def invariant_density(cone, h):
    """Density Delta^d(h) of the invariant measure against the Hausdorff one."""
    return float(power_function(cone, cone.d_vec, h))


def cone_inverse(cone, h):
    """h^{-1} := t^{-1} . e for h = t . e; involutive, order-reversing."""
    t = factor(cone, h)
    return recompose(t.inverse())


def log_power_batch(cone, coords):
    """log of the LDL pivots on a batch of cone points (nan outside)."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    D, _ = _kernels.ldl_batch(coords, cone._pd)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.log(np.where(D > 0, D, np.nan))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def cone_to_json(cone):
    return {"pattern": cone.pattern.name, "rank": cone.rank}


def cone_from_json(doc):
    name = doc["pattern"]
    if name not in (DIAGONAL, FULL, VINBERG):
        raise ValueError(f"unknown pattern {name!r}")
    return build_cone(TAlgebraPattern.builtin(name, int(doc["rank"])))
