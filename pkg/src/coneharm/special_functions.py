"""Closed-form gamma/beta functions of cones and explicit norm constants.

Every function here is a finite product of classical Gamma values and
generalized powers.  Domain checks use strict inequalities with zero
tolerance; arguments on the boundary of a convergence region raise.
"""

import itertools

import numpy as np
from scipy.special import gamma as _gamma

from . import cones
from .errors import DomainError, GammaDomainError, NotPolynomialIndex

TWO_PI = 2.0 * np.pi


def _vec(s, r):
    s = np.asarray(s, dtype=complex).reshape(-1)
    if s.size == 1 and r > 1:
        s = np.full(r, s[0])
    if s.size != r:
        raise ValueError(f"weight vector of length {s.size}, expected {r}")
    return s


def vpow(base, expo):
    """Componentwise product prod base_j^expo_j with the 0^0 = 1 convention."""
    base = np.asarray(base, dtype=float)
    expo = np.asarray(expo, dtype=float)
    out = 1.0
    for b, e in zip(np.atleast_1d(base), np.atleast_1d(expo)):
        if e == 0.0:
            continue
        if b < 0:
            raise DomainError(f"negative base {b} with exponent {e}")
        out *= b ** e
    return out


def scalar_pow(a, s):
    """a^s for vector s means a^(sum_j s_j)."""
    s = np.asarray(s, dtype=complex)
    return complex(a) ** complex(s.sum())


def _check_half_domain(s, half, label):
    """Re s in half + (R_+^*)^r, strict; raises GammaDomainError."""
    s = np.asarray(s)
    for j in range(s.size):
        if not (s[j].real > half[j]):
            raise GammaDomainError(j, f"Re s_{j} - {label}_{j}/2 <= 0 "
                                      f"({s[j].real} vs {half[j]})")


def gamma_cone(cone, s):
    """Gamma function of the cone: (2 pi)^((m-r)/2) prod Gamma(s_j - m_j/2)."""
    s = _vec(s, cone.rank)
    _check_half_domain(s, 0.5 * cone.m_vec, "m")
    val = TWO_PI ** ((cone.ambient_dim - cone.rank) / 2.0)
    val *= np.prod(_gamma(s - 0.5 * cone.m_vec))
    return val.real if abs(val.imag) == 0 else val


def gamma_dual(cone, s):
    """Gamma function of the dual cone (m' in place of m)."""
    s = _vec(s, cone.rank)
    _check_half_domain(s, 0.5 * cone.mp_vec, "m'")
    val = TWO_PI ** ((cone.ambient_dim - cone.rank) / 2.0)
    val *= np.prod(_gamma(s - 0.5 * cone.mp_vec))
    return val.real if abs(val.imag) == 0 else val


def beta_rhs(cone, s, sp, h):
    """Closed form of the cone beta integral over Omega cap (h - Omega)."""
    s, sp = _vec(s, cone.rank), _vec(sp, cone.rank)
    val = gamma_cone(cone, s) * gamma_cone(cone, sp) / gamma_cone(cone, s + sp)
    power = cones.power_function(cone, s + sp + cone.d_vec, h)
    out = val * power
    return out.real if np.isrealobj(np.asarray(h)) and abs(np.imag(out)) < 1e-300 else out


def cor10_rhs(cone, s, sp, h):
    """Closed form of int_Omega Delta^s(h+h') Delta^s'(h') dnu(h')."""
    s, sp = _vec(s, cone.rank), _vec(sp, cone.rank)
    _check_half_domain(sp, 0.5 * cone.m_vec, "m")
    for j in range(cone.rank):
        if not ((s + sp)[j].real < -0.5 * cone.mp_vec[j]):
            raise DomainError(f"Re(s+s')_{j} must lie below -m'_{j}/2")
    val = gamma_cone(cone, sp) * gamma_dual(cone, -(s + sp)) / gamma_dual(cone, -s)
    return (val * cones.power_function(cone, s + sp, h)).real


def fiber_norm_rhs(cone, s, h):
    """L^1 norm over the fiber of |Delta^s(h + i.)| in closed form."""
    s = _vec(s, cone.rank)
    for j in range(cone.rank):
        if not (s[j].real < cone.d_vec[j] - 0.5 * cone.mp_vec[j]):
            raise DomainError(f"Re s_{j} must lie below d_{j} - m'_{j}/2")
    m = cone.ambient_dim
    num = gamma_dual(cone, cone.d_vec - s.real)
    den = abs(gamma_dual(cone, -s / 2.0)) ** 2
    val = (4.0 * np.pi) ** m * (2.0 ** s.real.sum()) * num / den
    return val * cones.power_function(cone, s.real - cone.d_vec, h)


LEM18, LEM23, LEM24 = "LEM18", "LEM23", "LEM24"


def sup_formulas(cone, which, s, sp=None, point=None):
    """Closed-form suprema of weighted power functions.

    LEM18: sup over the cone of e^{-<lam, .>} |Delta^s|, point = lam.
    LEM23: sup over h' of |Delta^s(h+h') Delta^s'(h')|, point = h.
    LEM24: sup over the fiber of |Delta^s(h + i x)|, point = h.
    """
    r = cone.rank
    s = _vec(s, r)
    if which == LEM18:
        if np.any(s.real < 0):
            raise DomainError("LEM18 needs Re s >= 0")
        return vpow(s.real / np.e, s.real) * \
            cones.power_function_dual(cone, -s.real, point)
    if which == LEM23:
        sp = _vec(sp, r)
        if np.any(sp.real < 0) or np.any((s + sp).real > 0):
            raise DomainError("LEM23 needs Re s' >= 0 and Re(s+s') <= 0")
        val = vpow(sp.real, sp.real) * vpow(-(s + sp).real, -(s + sp).real) \
            / vpow(-s.real, -s.real)
        return val * cones.power_function(cone, (s + sp).real, point)
    if which == LEM24:
        if np.any(s.real > 0):
            raise DomainError("LEM24 needs Re s <= 0")
        mod = np.prod(np.abs((-s) ** (-s)))
        val = vpow(-s.real, -s.real) / mod
        return val * cones.power_function(cone, s.real, point)
    raise ValueError(f"unknown formula {which!r}")


def kernel_norm_constant(domain, s, p):
    """Constant C_{s,p} in the slice L^p norms of the box kernels.

    For p = infinity the value carries the extra 2^(-Re s) factor coming
    from the half inside the kernel argument; the plain product formula
    omits it but direct supremum evaluation confirms it (see the ledger
    of record for this build).
    """
    cone = domain.cone
    s = _vec(s, cone.rank)
    bd = domain.b_vec + cone.d_vec
    if p == np.inf:
        if np.any(s.real > 0):
            raise DomainError("p=inf slice norm needs Re s <= 0")
        mod = np.prod(np.abs((-s) ** (-s)))
        return (2.0 ** (-s.real.sum())) * vpow(-s.real, -s.real) / mod
    if not (0 < p < np.inf):
        raise DomainError("p must lie in (0, inf]")
    for j in range(cone.rank):
        if not (s[j].real < (bd[j] - 0.5 * cone.mp_vec[j]) / p):
            raise DomainError(f"Re s_{j} must lie below (b+d-m'/2)_{j}/p")
    m, n = cone.ambient_dim, domain.n
    num = (4.0 * np.pi) ** m * np.pi ** n * gamma_dual(cone, bd - p * s.real)
    den = domain.pf_e * abs(gamma_dual(cone, -(p / 2.0) * s)) ** 2
    return (num / den) ** (1.0 / p)


def mixed_norm_constant(domain, s, sp, p, q, base_height=None):
    """Full mixed-norm of a box kernel: C_{s',p} C_{s,s',p,q} [. Delta-factor].

    s is the weight of the mixed norm, sp the kernel exponent.  When
    base_height (a cone point, the height of the kernel's base point) is
    given, the evaluated norm including the homogeneity factor is
    returned; otherwise just the constant.
    """
    cone = domain.cone
    r = cone.rank
    s = np.asarray(_vec(s, r).real)
    sp = _vec(sp, r)
    bd = domain.b_vec + cone.d_vec

    if q == np.inf:
        if np.any(s < 0):
            raise DomainError("q=inf needs s >= 0")
    else:
        for j in range(r):
            if not (s[j] > 0.5 * cone.m_vec[j] / q):
                raise DomainError(f"s_{j} must exceed m_{j}/(2q)")
    # slice-norm bullet checked by kernel_norm_constant
    c1 = kernel_norm_constant(domain, sp, p)
    tot = s + sp.real
    if q == np.inf:
        for j in range(r):
            if not (tot[j] <= bd[j] / p):
                raise DomainError(f"(s+Re s')_{j} must not exceed (b+d)_{j}/p")
        c2 = vpow(s, s) * vpow(bd / p - tot, bd / p - tot) / \
            vpow(bd / p - sp.real, bd / p - sp.real)
    else:
        for j in range(r):
            if not (tot[j] < bd[j] / p - 0.5 * cone.mp_vec[j] / q):
                raise DomainError(
                    f"(s+Re s')_{j} must lie below ((b+d)/p - m'/(2q))_{j}")
        c2 = (gamma_cone(cone, q * s)
              * gamma_dual(cone, (q / p) * bd - q * tot)
              / gamma_dual(cone, (q / p) * bd - q * sp.real)) ** (1.0 / q)
    const = c1 * c2
    if base_height is None:
        return const
    return const * cones.power_function(cone, tot - bd / p, base_height)


def pochhammer_cone(cone, s, sp):
    """Generalized Pochhammer (s + m'/2)_{s'} for a polynomial dual index s'."""
    r = cone.rank
    s = _vec(s, r)
    sp = np.asarray(sp, dtype=float).reshape(-1)
    if sp.size != r:
        raise ValueError("index length mismatch")
    if not polynomial_indices_dual(cone, sp):
        raise NotPolynomialIndex(f"{sp} is not a polynomial dual index")
    out = 1.0 + 0.0j
    for j in range(r):
        base = s[j] + 0.5 * cone.mp_vec[j]
        for i in range(int(round(sp[j]))):
            out *= base - i
    return out.real if abs(out.imag) == 0 else out


def _as_real(val):
    val = complex(val)
    return val.real if val.imag == 0 else val


def bergman_kernel_constant(domain, s):
    """Normalizing constant of the weighted Bergman kernel K_s."""
    cone = domain.cone
    s = _vec(s, cone.rank)
    bd = domain.b_vec + cone.d_vec
    denom = 4.0 ** cone.ambient_dim * np.pi ** (domain.n + cone.ambient_dim)
    return _as_real(domain.pf_e * gamma_dual(cone, 2 * s - bd)
                    / (denom * gamma_cone(cone, 2 * s)))


def projector_constant(domain, sp):
    """c_{s'}, the constant of the Bergman projector at weight s'."""
    cone = domain.cone
    sp = _vec(sp, cone.rank)
    bd = domain.b_vec + cone.d_vec
    denom = 4.0 ** cone.ambient_dim * np.pi ** (domain.n + cone.ambient_dim)
    return _as_real(domain.pf_e * gamma_dual(cone, -sp)
                    / (denom * gamma_cone(cone, bd - sp)))


def szego_constant(domain):
    """Constant of the boundary (Cauchy-Szego) kernel."""
    cone = domain.cone
    bd = domain.b_vec + cone.d_vec
    denom = 4.0 ** cone.ambient_dim * np.pi ** (domain.n + cone.ambient_dim)
    return float(np.real(domain.pf_e * gamma_dual(cone, -bd) / denom))


def named_constants(domain, s):
    """Bergman-kernel, projector, and boundary-kernel constants at weight s.

    Each field is evaluated on its own gamma domain; a field whose domain
    excludes s is reported as None rather than poisoning the others.
    """
    out = {}
    for key, fn in (("bergman_kernel", lambda: bergman_kernel_constant(domain, s)),
                    ("projector", lambda: projector_constant(domain, s)),
                    ("szego", lambda: szego_constant(domain))):
        try:
            out[key] = fn()
        except GammaDomainError:
            out[key] = None
    return out


# ---------------------------------------------------------------------------
# polynomiality and the Gindikin-Wallach classification
# ---------------------------------------------------------------------------

def _fit_polynomial_along_rays(cone, s, evaluator, seeds=3):
    """Numeric polynomiality test: degree-sum fit along random cone chords.

    A power function with integer s is rational; it is a polynomial iff
    its restriction to every line is one of degree <= sum(s).  Fit on
    half the nodes of a chord reaching toward the boundary, validate on
    the rest.  evaluator(s, coords) supplies the primal or dual values.
    """
    s = np.asarray(s, dtype=float)
    deg = int(round(s.sum()))
    for seed in range(seeds):
        rng = np.random.default_rng(1000 + seed)
        tc = np.abs(rng.normal(size=cone.ambient_dim)) + 0.4
        h0 = cones.recompose(cones.TriangularElement(cone, tc))
        direction = rng.normal(size=cone.ambient_dim)
        direction /= np.linalg.norm(direction)

        def inside(c):
            v = evaluator(np.zeros(cone.rank), c[None, :])
            return bool(np.isfinite(v[0]))

        lo, hi = 0.0, 1.0
        while inside(h0 + hi * direction):
            hi *= 2.0
            if hi > 1e8:
                break
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if inside(h0 + mid * direction):
                lo = mid
            else:
                hi = mid
        tstar = lo
        nodes = tstar * (0.999 * 0.5 * (1 - np.cos(np.linspace(0, np.pi, 4 * deg + 16))))
        vals = evaluator(s, h0 + nodes[:, None] * direction)
        if not np.all(np.isfinite(vals)):
            return False
        fit_idx = np.arange(0, nodes.size, 2)
        val_idx = np.arange(1, nodes.size, 2)
        V = np.vander(nodes[fit_idx] / tstar, deg + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(V, vals[fit_idx], rcond=None)
        pred = np.vander(nodes[val_idx] / tstar, deg + 1, increasing=True) @ coef
        scale = np.abs(vals).max() + 1e-300
        if np.abs(pred - vals[val_idx]).max() > 1e-6 * scale:
            return False
    return True


def polynomial_indices(cone, s):
    """True iff Delta^s extends to a polynomial on the ambient space.

    Product cones admit every s in N^r.  For the symmetric-matrix cone
    the polynomial chain runs with increasing index (the first grading
    index carries the full-determinant quotient); other patterns are
    decided by the numeric chord-fit test.
    """
    s = np.asarray(s, dtype=float).reshape(-1)
    if np.any(s < 0) or np.any(np.abs(s - np.round(s)) > 0):
        return False
    name = cone.pattern.name
    if name == cones.DIAGONAL:
        return True
    if name == cones.FULL:
        return bool(np.all(np.diff(s) >= 0))  # increasing chain, s_1 >= 0 known
    return _fit_polynomial_along_rays(
        cone, s, lambda w, c: cones.power_batch(cone, w, c))


def polynomial_indices_dual(cone, s):
    """True iff the dual power function Delta_{Omega'}^s is a polynomial."""
    s = np.asarray(s, dtype=float).reshape(-1)
    if np.any(s < 0) or np.any(np.abs(s - np.round(s)) > 0):
        return False
    name = cone.pattern.name
    if name == cones.DIAGONAL:
        return True
    if name == cones.FULL:
        return bool(np.all(np.diff(s) <= 0))  # decreasing chain
    return _fit_polynomial_along_rays(
        cone, s, lambda w, c: cones.power_dual_batch(cone, w, c))


def gindikin_wallach(cone, s):
    """The unique face label eps with s in m^(eps)/2 + eps (R_+^*)^r, or None.

    Face coordinates (eps_j = 0) are matched exactly; ray coordinates
    (eps_j = 1) strictly.
    """
    s = np.asarray(s, dtype=float).reshape(-1)
    dims = cone.pattern.block_dims
    r = cone.rank
    for eps in itertools.product((0, 1), repeat=r):
        m_eps = np.array([sum(eps[k] * dims[j, k] for k in range(j + 1, r))
                          for j in range(r)], dtype=float)
        ok = True
        for j in range(r):
            if eps[j] == 0:
                ok = ok and (s[j] == 0.5 * m_eps[j])
            else:
                ok = ok and (s[j] > 0.5 * m_eps[j])
        if ok:
            return eps
    return None
