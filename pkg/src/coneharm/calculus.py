"""Spectral calculus on the dual cone: extensions, fractional shifts, Besov norms.

Tube-case machinery: functions are represented by compactly supported
spectral densities tau on the dual cone, with the Fourier convention

    f(x + i h) = int tau(lam) exp(i <lam, x> - <lam, h>) dlam.

All 2 pi bookkeeping is pinned by the Plancherel acceptance test.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import cones, integration, special_functions as sf
from .errors import NotInCone, SupportTouchesBoundary, WindowInsufficient


@dataclass
class SpectralFunction:
    """Compactly supported spectral density on the dual cone (rank one).

    support: (lo, hi) with 0 < lo < hi; tau: vectorized callable on the
    support.  The represented function is the damped inverse transform
    above.
    """

    cone: object
    support: tuple
    tau: object
    margin: float = field(init=False)

    def __post_init__(self):
        lo, hi = self.support
        if not (0.0 < lo < hi):
            raise SupportTouchesBoundary(f"support ({lo}, {hi})")
        self.margin = lo

    def density(self, lam):
        lam = np.asarray(lam, dtype=float)
        lo, hi = self.support
        inside = (lam >= lo) & (lam <= hi)
        out = np.zeros(lam.shape, dtype=complex)
        if np.any(inside):
            out[inside] = self.tau(lam[inside])
        return out


def _filon_linear(lams, g, x):
    """int g(lam) e^{i lam x} dlam with piecewise-linear g on the nodes.

    Exact per panel for linear g, uniformly in the oscillation; x is a
    vector, lams an increasing node array, g complex node values.
    """
    x = np.asarray(x, dtype=float)
    la, lb = lams[:-1], lams[1:]
    ga, gb = g[:-1], g[1:]
    h = (lb - la)
    out = np.zeros(x.shape, dtype=complex)
    X = x[:, None]
    small = np.abs(X * h[None, :]) < 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        eb = np.exp(1j * X * lb[None, :])
        ea = np.exp(1j * X * la[None, :])
        ix = 1j * X
        i0 = (eb - ea) / ix
        i1 = (lb[None, :] * eb - la[None, :] * ea) / ix - i0 / ix
    # panel integral of the linear interpolant a + b (lam - la)
    b = (gb - ga) / h
    vals = (ga[None, :] - b[None, :] * la[None, :]) * i0 + b[None, :] * i1
    # series fallback where x h is tiny
    if np.any(small):
        mid = 0.5 * (ga + gb)[None, :] * h[None, :]
        trap = mid * np.exp(1j * X * 0.5 * (la + lb)[None, :])
        vals = np.where(small, trap, vals)
    out = vals.sum(axis=1)
    return out


def extend(f, h, x, n_nodes=None):
    """Values of the damped extension at height h on the grid x.

    h: positive height (cone point for rank one); x: array of boundary
    coordinates.  Spectral nodes refine until the result is stable.
    """
    h = float(np.atleast_1d(h)[0])
    if h < 0:
        raise NotInCone("height must be nonnegative")
    lo, hi = f.support
    x = np.asarray(x, dtype=float)
    n = n_nodes or 400
    prev = None
    for _ in range(6):
        lams = np.linspace(lo, hi, n)
        g = f.density(lams) * np.exp(-lams * h)
        vals = _filon_linear(lams, g, x)
        if prev is not None and np.max(np.abs(vals - prev)) <= 1e-10 * (
                np.max(np.abs(vals)) + 1e-300):
            return vals
        prev = vals
        n *= 2
    return prev


def riemann_liouville(f, s):
    """Fractional shift: multiply the density by i^{-s} Delta_dual^{-s}.

    i^z is exp(pi i z / 2); the support is unchanged and must stay
    strictly interior (guaranteed by the SpectralFunction invariant).
    """
    s = np.asarray(s, dtype=complex).reshape(-1)
    if s.size != f.cone.rank:
        raise ValueError("weight length mismatch")
    phase = np.exp(-0.5j * np.pi * s.sum())
    old = f.tau

    def tau(lam):
        return phase * lam ** complex(-s.sum()) * old(lam)

    if f.cone.rank != 1:
        raise ValueError("spectral calculus is rank-one here")
    return SpectralFunction(f.cone, f.support, tau)


def laplace_of_rl(cone, s, lam, tol=1e-9):
    """Quadrature of the Laplace transform of the fractional kernel.

    Evaluates (1/Gamma_Omega(s)) int_Omega e^{-<lam, h>} Delta^s dnu
    against the closed form Delta_dual^{-s}(lam); product cones only
    (the general case is validated by Monte-Carlo elsewhere).  Returns
    the quadrature value.
    """
    s = np.asarray(s, dtype=float).reshape(-1)
    if cone.npairs:
        raise ValueError("quadrature path needs a product cone")
    lam = np.asarray(lam, dtype=float).reshape(-1)
    sf.gamma_cone(cone, s)  # domain check
    total = 1.0
    for j in range(cone.rank):
        n = 200
        prev = None
        while n <= 3200:
            t, w = np.polynomial.legendre.leggauss(n)
            u = 0.5 * np.pi * (t * 0.5 + 0.5)
            y = np.tan(u) ** 2  # (0, inf), clustering at 0
            dy = 2.0 * np.tan(u) / np.cos(u) ** 2 * 0.25 * np.pi * w
            val = (np.exp(-lam[j] * y) * y ** (s[j] - 1.0) * dy).sum() / math.gamma(s[j])
            if prev is not None and abs(val - prev) < tol:
                break
            prev = val
            n *= 2
        total *= val
    return total


@dataclass
class BesovParameters:
    """Littlewood-Paley data for the rank-one Besov quasi-norms.

    lam_k: geometric lattice on the dual half-line; width: bump half-width
    in log coordinates (>= half the log spacing so the bumps cover).
    """

    s: np.ndarray
    p: float
    q: float
    lam_k: np.ndarray
    width: float

    @staticmethod
    def geometric(s, p, q, lam_lo, lam_hi, step=0.5, width=None):
        k = np.arange(math.floor(math.log(lam_lo) / step) - 1,
                      math.ceil(math.log(lam_hi) / step) + 2)
        return BesovParameters(np.atleast_1d(np.asarray(s, dtype=float)),
                               float(p), float(q), np.exp(step * k),
                               float(width if width is not None else step))


def _bump(u, w):
    """C^2 compactly supported profile on |u| < w."""
    t = np.clip(np.abs(u) / w, 0.0, 1.0)
    return np.where(t < 1.0, (1.0 - t * t) ** 3, 0.0)


def partition_values(params, lam):
    """Normalized partition phi_k(lam / lam_k) evaluated on lam.

    Returns (K, len(lam)); the columns sum to one wherever some bump is
    positive (the normalized-partition invariant).
    """
    u = np.log(np.asarray(lam, dtype=float))
    uk = np.log(params.lam_k)
    raw = _bump(u[None, :] - uk[:, None], params.width)
    tot = raw.sum(axis=0)
    tot = np.where(tot > 0, tot, 1.0)
    return raw / tot[None, :]


def _slice_lp_norm(lams, g, p, bandwidth, tail_tol=1e-3):
    """L^p norm over the line of the inverse transform of g (supported nodes).

    The x-window grows until the outer-shell share of the p-mass drops
    below tail_tol; raises WindowInsufficient otherwise.
    """
    width = max(lams.max() - lams.min(), bandwidth)
    X = 60.0 / width
    for _ in range(7):
        nx = int(min(max(600, 8 * X * (lams.max())), 40000))
        x = X * np.tan(np.linspace(-0.5 * np.pi * 0.995, 0.5 * np.pi * 0.995, nx))
        dx = np.gradient(x)
        vals = np.abs(_filon_linear(lams, g, x))
        mass = vals ** p * dx
        total = mass.sum()
        outer = mass[(np.abs(x) > 0.8 * np.abs(x).max())].sum()
        if total == 0:
            return 0.0
        if outer <= tail_tol * total:
            return float(total ** (1.0 / p))
        X *= 2.0
    raise WindowInsufficient(f"outer share {outer/total:.2e}")


def besov_quasinorm(f, params, tail_tol=1e-3):
    """Mixed quasi-norm of the Littlewood-Paley pieces of the density.

    || ( Delta_dual^s(lam_k) || piece_k ||_{L^p} )_k ||_{l^q}, slice
    norms by windowed quadrature of the inverse transforms.
    """
    lo, hi = f.support
    # partition must cover the support strictly inside its span
    if math.log(lo) < math.log(params.lam_k.min()) - params.width or \
            math.log(hi) > math.log(params.lam_k.max()) + params.width:
        raise SupportTouchesBoundary("partition does not cover the support")
    terms = []
    se = float(params.s.sum())
    for k, lamk in enumerate(params.lam_k):
        uk = math.log(lamk)
        a = max(lo, math.exp(uk - params.width))
        b = min(hi, math.exp(uk + params.width))
        if a >= b:
            continue
        lams = np.linspace(a, b, 500)
        phik = partition_values(params, lams)[k]
        g = f.density(lams) * phik
        if np.max(np.abs(g)) == 0:
            continue
        norm = _slice_lp_norm(lams, g, params.p, bandwidth=b - a,
                              tail_tol=tail_tol)
        terms.append((lamk ** se) * norm)
    terms = np.array(terms)
    if len(terms) == 0:
        return 0.0
    if params.q == np.inf:
        return float(np.max(terms))
    return float((terms ** params.q).sum() ** (1.0 / params.q))


def besov_shift_check(f, s, sp, p, q, params=None, params_shifted=None):
    """Quasi-norm ratio under the fractional shift (isomorphism check)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    sp_arr = np.atleast_1d(np.asarray(sp, dtype=float))
    if params is None:
        lo, hi = f.support
        params = BesovParameters.geometric(s, p, q, lo, hi)
    if params_shifted is None:
        params_shifted = BesovParameters(s + sp_arr, params.p, params.q,
                                         params.lam_k, params.width)
    else:
        params_shifted = BesovParameters(s + sp_arr, params_shifted.p,
                                         params_shifted.q,
                                         params_shifted.lam_k,
                                         params_shifted.width)
    g = riemann_liouville(f, sp_arr)
    num = besov_quasinorm(g, params_shifted)
    den = besov_quasinorm(f, BesovParameters(s, params.p, params.q,
                                             params.lam_k, params.width))
    return {"ratio": num / den, "shifted": num, "base": den}


def spectral_to_json(f, n_samples=512):
    lams = np.linspace(f.support[0], f.support[1], n_samples)
    tau = f.density(lams)
    return {"lambda_grid": lams.tolist(), "tau_re": tau.real.tolist(),
            "tau_im": tau.imag.tolist()}


def spectral_from_json(cone, doc):
    lams = np.asarray(doc["lambda_grid"], dtype=float)
    tau = np.asarray(doc["tau_re"], dtype=float) + 1j * np.asarray(doc["tau_im"])

    def fn(lam):
        return np.interp(lam, lams, tau.real) + 1j * np.interp(lam, lams, tau.imag)

    return SpectralFunction(cone, (float(lams[0]), float(lams[-1])), fn)
