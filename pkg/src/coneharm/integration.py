"""Independent numerical oracles: cone Monte-Carlo, adaptive quadrature, sup search.

Every closed form in the library is validated against one of these.  The
Monte-Carlo engine is deterministic: a counter-based generator keyed by
(seed, shard) feeds shards of 2^16 samples whose partial sums are
reduced in shard order, so the result is bit-identical for any worker
count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cones
from .errors import AllRejected, ToleranceNotMet, TruncationDominates

SHARD = 1 << 16

GAMMA_DEFINING = "GAMMA_DEFINING"
BETA_LHS = "BETA_LHS"
COR10_LHS = "COR10_LHS"
FIBER_L1 = "FIBER_L1"
DOMAIN_REGION = "DOMAIN_REGION"
CUSTOM = "CUSTOM"


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    samples: int
    seed: int

    def agrees(self, truth, rel=0.01, nsigma=3.0):
        return abs(self.value - truth) <= max(nsigma * self.stderr, rel * abs(truth))


@dataclass
class IntegrandSpec:
    """Description of a cone integral for the Monte-Carlo oracle.

    kind selects the integrand family; s, sp are weight vectors, h0 a
    cone point where one is required.  fn (CUSTOM only) maps a coordinate
    batch to integrand values against the invariant measure.
    """

    kind: str
    s: np.ndarray = None
    sp: np.ndarray = None
    h0: np.ndarray = None
    fn: object = None


def _philox(seed, shard):
    return np.random.Generator(np.random.Philox(key=np.array(
        [seed & 0xFFFFFFFFFFFFFFFF, shard], dtype=np.uint64)))


def _integrand_values(cone, spec, coords):
    """Integrand against nu_Omega, evaluated on an (N, m) coordinate batch.

    Returns values with nan outside the integration region; the sampler
    turns those into rejections.
    """
    d = cone.d_vec
    if spec.kind == GAMMA_DEFINING:
        tr = cones.trace(cone, coords)
        return np.exp(-tr) * cones.power_batch(cone, np.asarray(spec.s).real + d, coords)
    if spec.kind == BETA_LHS:
        rest = spec.h0[None, :] - coords
        return (cones.power_batch(cone, np.asarray(spec.s).real + d, rest)
                * cones.power_batch(cone, np.asarray(spec.sp).real + d, coords))
    if spec.kind == COR10_LHS:
        shifted = spec.h0[None, :] + coords
        return (cones.power_batch(cone, np.asarray(spec.s).real, shifted)
                * cones.power_batch(cone, np.asarray(spec.sp).real + d, coords))
    if spec.kind == CUSTOM:
        return spec.fn(coords)
    raise ValueError(f"kind {spec.kind!r} has no Monte-Carlo integrand")


def _ambient_proposal(cone, spec, rng, count):
    """Heavy-tail-aware independent proposal on ambient coordinates.

    Returns (coords, logpdf).  Diagonal coordinates get Gamma draws
    (exponentially tilted kinds) or log-Cauchy draws (power-law kinds);
    off-diagonal coordinates Gaussian resp. Cauchy, scaled by the local
    geometric mean of the adjacent diagonals.
    """
    r, m = cone.rank, cone.ambient_dim
    pd = cone._pd
    coords = np.empty((count, m))
    logpdf = np.zeros(count)
    if spec.kind == BETA_LHS:
        center = 0.5 * spec.h0
        scale = np.maximum(np.abs(spec.h0[:r]), 0.2).mean() / 3.0
        for i in range(m):
            x = rng.standard_normal(count)
            coords[:, i] = center[i] + scale * x
            logpdf += -0.5 * x * x - math.log(scale * math.sqrt(2 * math.pi))
        return coords, logpdf
    heavy = spec.kind == COR10_LHS
    if heavy:
        for j in range(r):
            z = np.clip(rng.standard_cauchy(count), -200.0, 200.0)
            coords[:, j] = np.exp(z)
            # log-Cauchy pdf: 1 / (pi x (1 + ln^2 x))
            logpdf += -(np.log(np.pi) + z + np.log1p(z * z))
    else:
        shape = np.maximum(0.8 * (np.asarray(spec.s, dtype=complex).real + cone.d_vec + 1.0), 0.6) \
            if spec.s is not None else np.full(r, 1.0)
        for j in range(r):
            g = rng.gamma(shape[j], 1.0, size=count)
            coords[:, j] = g
            logpdf += (shape[j] - 1.0) * np.log(g) - g - math.lgamma(shape[j])
    for p in range(pd.npairs):
        k, j = pd.pair_k[p], pd.pair_j[p]
        loc_scale = np.sqrt(np.abs(coords[:, j] * coords[:, k])) + 1e-12
        if heavy:
            z = rng.standard_cauchy(count)
            coords[:, r + p] = 0.7 * loc_scale * z
            logpdf += -np.log(np.pi * 0.7 * loc_scale * (1.0 + z * z))
        else:
            z = rng.standard_normal(count)
            coords[:, r + p] = 0.8 * loc_scale * z
            logpdf += -0.5 * z * z - np.log(0.8 * loc_scale * math.sqrt(2 * math.pi))
    return coords, logpdf


def _in_region(cone, spec, coords):
    ok = cones.in_cone(cone, coords)
    ok = np.atleast_1d(ok)
    if spec.kind == BETA_LHS:
        ok = ok & np.atleast_1d(cones.in_cone(cone, spec.h0[None, :] - coords))
    return ok


def mc_cone_integral(cone, spec, n, seed, workers=1):
    """Importance-sampled integral over the cone against nu_Omega.

    Ambient-space proposal, acceptance decided by the factorization;
    fully independent of the triangular-coordinate Jacobian.  Returns a
    deterministic Estimate; raises AllRejected below 1e-6 acceptance.
    """
    n = int(n)
    nshards = max(1, math.ceil(n / SHARD))
    counts = [SHARD] * nshards
    counts[-1] = n - SHARD * (nshards - 1)
    scale = cone.hausdorff_scale  # nu_Omega carries the metric volume factor

    def run_shard(i):
        rng = _philox(seed, i)
        coords, logpdf = _ambient_proposal(cone, spec, rng, counts[i])
        ok = _in_region(cone, spec, coords)
        w = np.zeros(counts[i])
        if np.any(ok):
            vals = _integrand_values(cone, spec, coords[ok])
            vals = np.where(np.isfinite(vals), vals, 0.0)
            w[ok] = vals * scale * np.exp(-logpdf[ok])
        return w.sum(), (w * w).sum(), int(ok.sum())

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run_shard, range(nshards)))
    else:
        parts = [run_shard(i) for i in range(nshards)]
    sw = swsq = 0.0
    acc = 0
    for a, b, c in parts:  # fixed reduction order = shard order
        sw += a
        swsq += b
        acc += c
    if acc < max(1, 1e-6 * n):
        raise AllRejected(f"acceptance rate {acc / n:.2e}")
    mean = sw / n
    var = max(swsq / n - mean * mean, 0.0) / max(n - 1, 1)
    return Estimate(mean, math.sqrt(var), n, seed)


def mc_cone_integral_triangular(cone, spec, n, seed, workers=1):
    """Fast non-independent sampler in triangular coordinates.

    Draws t in T_+ directly and converts with the known pushforward
    density of the invariant measure; used to cross-check the ambient
    sampler (3 sigma disagreement is a build failure).
    """
    n = int(n)
    nshards = max(1, math.ceil(n / SHARD))
    counts = [SHARD] * nshards
    counts[-1] = n - SHARD * (nshards - 1)
    r, m = cone.rank, cone.ambient_dim
    pd = cone._pd
    heavy = spec.kind == COR10_LHS
    shape = np.full(r, 1.0)
    if spec.kind == GAMMA_DEFINING:
        tilt = np.asarray(spec.s, dtype=complex).real - 0.5 * cone.m_vec
        shape = np.maximum(0.85 * cones.slot_weights(cone, tilt), 0.4)
    # diag exponents of dH pulled back to T_+ (column masses, slot order)
    jac_expo = 1.0 + cone.m_vec

    def run_shard(i):
        rng = _philox(seed, i + (1 << 20))
        t = np.empty((counts[i], m))
        logpdf = np.zeros(counts[i])
        for j in range(r):
            if heavy:
                z = np.clip(rng.standard_cauchy(counts[i]), -200.0, 200.0)
                t[:, j] = np.exp(z)
                logpdf += -(np.log(np.pi) + z + np.log1p(z * z))
            else:
                g = rng.gamma(shape[j], 1.0, size=counts[i])
                x = np.sqrt(g)
                t[:, j] = x
                # density of x: 2 x^(2a-1) e^(-x^2) / Gamma(a)
                logpdf += math.log(2.0) + (2 * shape[j] - 1) * np.log(x) - g \
                    - math.lgamma(shape[j])
        for p in range(pd.npairs):
            if heavy:
                z = rng.standard_cauchy(counts[i])
                sc = 0.7 * (t[:, pd.pair_j[p]] + 0.3)
                t[:, r + p] = sc * z
                logpdf += -np.log(np.pi * sc * (1.0 + z * z))
            else:
                z = rng.standard_normal(counts[i])
                sigma = 1.0 / math.sqrt(2.0)
                t[:, r + p] = sigma * z
                logpdf += -0.5 * z * z - math.log(sigma * math.sqrt(2 * math.pi))
        tri = cones.coords_to_matrix(cone, t, symmetric=False)
        h = np.einsum("nij,nkj->nik", tri, tri)
        coords = cones.matrix_to_coords(cone, h)
        ok = _in_region(cone, spec, coords)
        w = np.zeros(counts[i])
        if np.any(ok):
            vals = _integrand_values(cone, spec, coords[ok])
            vals = np.where(np.isfinite(vals), vals, 0.0)
            jac = 2.0 ** ((m + r) / 2.0) * np.prod(
                t[ok, :r] ** jac_expo[None, :], axis=1)
            w[ok] = vals * jac * np.exp(-logpdf[ok])
        return w.sum(), (w * w).sum(), int(ok.sum())

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run_shard, range(nshards)))
    else:
        parts = [run_shard(i) for i in range(nshards)]
    sw = swsq = 0.0
    acc = 0
    for a, b, c in parts:
        sw += a
        swsq += b
        acc += c
    if acc < max(1, 1e-6 * n):
        raise AllRejected(f"acceptance rate {acc / n:.2e}")
    mean = sw / n
    var = max(swsq / n - mean * mean, 0.0) / max(n - 1, 1)
    return Estimate(mean, math.sqrt(var), n, seed)


def mc_cross_check(cone, spec, n, seed, workers=1):
    """Run both samplers; raise if they disagree beyond 3 combined sigma."""
    a = mc_cone_integral(cone, spec, n, seed, workers)
    b = mc_cone_integral_triangular(cone, spec, n, seed, workers)
    sigma = math.hypot(a.stderr, b.stderr)
    if abs(a.value - b.value) > 3.0 * max(sigma, 1e-15):
        raise AssertionError(
            f"samplers disagree: {a.value} vs {b.value} (sigma {sigma:.2e})")
    return a, b


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def _gl_nodes(n, lo=-1.0, hi=1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return mid + half * x, half * w


def _fiber_value_product(cone, s, h, order, scale):
    """Tensor tan-mapped Gauss-Legendre value (safe: no off-diagonals)."""
    m = cone.ambient_dim
    u, w = _gl_nodes(order, -0.5 * np.pi, 0.5 * np.pi)
    x1 = scale * np.tan(u)
    w1 = scale * w / np.cos(u) ** 2
    grids = np.meshgrid(*([x1] * m), indexing="ij")
    wgts = np.meshgrid(*([w1] * m), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wall = np.prod(np.stack([g.ravel() for g in wgts], axis=1), axis=1)
    D, _ = cones._kernels.ldl_batch(h[None, :] + 1j * pts, cone._pd)
    ws = cones.slot_weights(cone, s.real)
    vals = np.prod(np.abs(D) ** ws[None, :], axis=1)
    return float((vals * wall).sum())


def _fiber_value_full2(cone, s, h, order, scale):
    """Rank-2 single-off-diagonal fiber integral with ridge-aware inner axis.

    |Delta^s(h+ix)| nearly cancels along x21^2 ~ x11 x22, so a plain
    tensor grid overweights that manifold.  The off-diagonal axis is
    integrated in pieces anchored at the minima of |det|^2 (roots of a
    cubic), each side mapped by t = t_min + w tan(theta) with w the local
    Lorentzian width, which renders the peak smooth.
    """
    srev = cones.slot_weights(cone, s.real)  # pivot-slot exponents
    h11, h22, h21 = h[0], h[1], h[2]
    # double-exponential outer map: algebraic tails of the marginals
    # become exponentially damped in the mapped variable
    u, w = _gl_nodes(order, -3.2, 3.2)
    xo = scale * np.sinh(1.5 * np.sinh(u))
    wo = scale * w * 1.5 * np.cosh(1.5 * np.sinh(u)) * np.cosh(u)
    X11, X22 = np.meshgrid(xo, xo, indexing="ij")
    W2 = np.outer(wo, wo).ravel()
    w11 = (h11 + 1j * X11).ravel()
    w22 = (h22 + 1j * X22).ravel()
    B = w11 * w22 - h21 * h21
    npt = B.size
    # |det|^2 = (ReB + t^2)^2 + (ImB - 2 h21 t)^2; stationary points solve
    # t^3 + (ReB + 2 h21^2) t - h21 ImB = 0 (vectorized Cardano)
    p = B.real + 2.0 * h21 * h21
    q = -h21 * B.imag
    disc = -4.0 * p ** 3 - 27.0 * q ** 2
    three = disc > 0
    roots = np.zeros((npt, 3))
    nroots = np.ones(npt, dtype=int)
    if np.any(three):
        pp, qq = p[three], q[three]
        rr = np.sqrt(-pp / 3.0)
        phi = np.arccos(np.clip(1.5 * qq / (pp * rr), -1.0, 1.0)) / 3.0
        for k in range(3):
            roots[three, k] = 2.0 * rr * np.cos(phi - 2.0 * np.pi * k / 3.0)
        roots[three] = np.sort(roots[three], axis=1)
        nroots[three] = 3
    single = ~three
    if np.any(single):
        pp, qq = p[single], q[single]
        half_q = -qq / 2.0
        root_term = np.sqrt(np.maximum((qq / 2.0) ** 2 + (pp / 3.0) ** 3, 0.0))
        roots[single, 0] = np.cbrt(half_q + root_term) + np.cbrt(half_q - root_term)
    ni = max(24, order // 2)
    g01, gw01 = _gl_nodes(ni, 0.0, 1.0)
    inner = np.zeros(npt)

    def detabs2(t):
        det = B[:, None] + t * t - 2j * h21 * t
        return det

    def values(det):
        return np.abs(det) ** srev[1] * np.abs(np.repeat(w11[:, None], det.shape[1], 1)) \
            ** (srev[0] - srev[1])

    def side(t0, limit, inf_sign):
        # integrate from the minimum t0 toward limit (infinite when nan)
        qv = (B.real + t0 ** 2) ** 2 + (B.imag - 2.0 * h21 * t0) ** 2
        qpp = 4.0 * (B.real + 3.0 * t0 ** 2) + 8.0 * h21 * h21
        width = np.sqrt(2.0 * np.abs(qv) / np.maximum(qpp, 1e-12))
        width = np.clip(width, 1e-8 * (1.0 + np.abs(t0)), None) + 1e-12
        finite = np.isfinite(limit)
        theta_max = np.where(finite, np.arctan(np.abs(limit - t0) / width), 0.5 * np.pi)
        sign = np.where(finite, np.sign(np.where(finite, limit, 0.0) - t0), inf_sign)
        th = theta_max[:, None] * g01[None, :]
        t = t0[:, None] + sign[:, None] * width[:, None] * np.tan(th)
        wt = theta_max[:, None] * gw01[None, :] * width[:, None] / np.cos(th) ** 2
        return (values(detabs2(t)) * wt).sum(axis=1)

    inf = np.full(npt, np.nan)
    r0 = roots[:, 0]
    m3 = nroots == 3
    m1 = ~m3
    inner += side(r0, inf, -1.0)                 # leftmost tail, all points
    if np.any(m1):
        inner[m1] += side(r0, inf, +1.0)[m1]     # single minimum: right tail
    if np.any(m3):
        r1 = roots[:, 1]
        r2 = roots[:, 2]
        inner[m3] += side(r0, r1, +1.0)[m3]      # min -> middle max
        inner[m3] += side(r2, r1, -1.0)[m3]      # second min -> middle max
        inner[m3] += side(r2, inf, +1.0)[m3]     # rightmost tail
    return float((inner * W2).sum())


def quad_fiber(cone, s, h, abs_tol=1e-8, max_order=200):
    """Adaptive tensor quadrature of int_F |Delta^s(h + i x)| dx.

    Coordinates are compactified by x = scale * tan(u) and the order
    escalates until successive values differ by <= abs_tol.  Limited to
    ambient dimension <= 3 and real s.
    """
    m = cone.ambient_dim
    if m > 3:
        raise ValueError("fiber quadrature limited to ambient dimension <= 3")
    h = np.asarray(h, dtype=float)
    s = np.asarray(s, dtype=complex).reshape(-1)
    if np.any(s.imag != 0):
        raise ValueError("fiber quadrature expects real exponents")
    scale = max(cones.trace(cone, h) / cone.rank, 1e-3)
    hs = cone.hausdorff_scale
    if cone.npairs == 0:
        value = lambda n: _fiber_value_product(cone, s, h, n, scale) * hs
    elif cone.rank == 2 and cone.npairs == 1:
        value = lambda n: _fiber_value_full2(cone, s, h, n, scale) * hs
    else:
        raise ValueError("fiber quadrature supports product cones and rank 2")
    prev = None
    order = 28
    while order <= max_order:
        cur = value(order)
        if prev is not None and abs(cur - prev) <= max(abs_tol, 1e-13 * abs(cur)):
            return cur
        prev = cur
        order = int(order * 1.4)
    raise ToleranceNotMet(f"fiber quadrature stalled at {prev}")


def sup_search(objective, region, restarts=12, seed=0, tol=1e-12, max_cycles=400):
    """Multi-start coordinate descent maximization over a box region.

    region: sequence of (lo, hi) pairs.  Deterministic for a given seed:
    quasi-random starts, golden-section line searches per coordinate.
    Returns the best value found.
    """
    region = [(float(lo), float(hi)) for lo, hi in region]
    dim = len(region)
    rng = np.random.default_rng(seed)
    gr = (math.sqrt(5.0) - 1.0) / 2.0

    def line_max(x, i, lo, hi, steps=60):
        a, b = lo, hi
        c = b - gr * (b - a)
        d = a + gr * (b - a)
        xc, xd = x.copy(), x.copy()
        for _ in range(steps):
            xc[i], xd[i] = c, d
            if objective(xc) < objective(xd):
                a = c
                c, d = d, a + gr * (b - a)
            else:
                b = d
                d, c = c, b - gr * (b - a)
            if b - a < tol * max(1.0, abs(a) + abs(b)):
                break
        x[i] = 0.5 * (a + b)
        return x

    best = -np.inf
    for start in range(restarts):
        x = np.array([lo + (hi - lo) * rng.random() for lo, hi in region])
        prev = objective(x)
        for _ in range(max_cycles):
            for i in range(dim):
                x = line_max(x, i, region[i][0], region[i][1])
            cur = objective(x)
            if cur - prev <= 1e-15 * max(1.0, abs(cur)):
                break
            prev = cur
        best = max(best, objective(x))
    return best


def tube_grid(domain, u_range=(-6.0, 6.0), n_u=80, x_scale=4.0, n_x=80):
    """Tensor quadrature nodes for a tube or ball domain.

    Heights: Gauss-Legendre in u = log of each diagonal coordinate over
    u_range (off-diagonal cone coordinates, when present, are tan-mapped).
    Horizontals (N coordinates): x = x_scale * tan(u).  Returns a dict of
    1-d node/weight arrays per axis.
    """
    cone = domain.cone
    u, wu = _gl_nodes(n_u, *u_range)
    x, wx = _gl_nodes(n_x, -0.5 * np.pi, 0.5 * np.pi)
    xn = x_scale * np.tan(x)
    wxn = x_scale * wx / np.cos(x) ** 2
    return {"u": u, "wu": wu, "x": xn, "wx": wxn, "cone": cone,
            "n": domain.n, "rank": cone.rank, "npairs": cone.npairs}


def quad_domain(domain, f, grid=None, trunc_tol=5e-3):
    """Tensor quadrature of int_D f dnu_D for tube rank<=2 or ball n=1.

    f maps (zeta (N,n) complex, z (N,m) complex) -> values.  Truncation
    is estimated from the outermost height shells; TruncationDominates
    if that exceeds trunc_tol of the total.
    """
    cone = domain.cone
    g = grid if grid is not None else tube_grid(domain)
    u, wu, xn, wxn = g["u"], g["wu"], g["x"], g["wx"]
    r, m, n = cone.rank, cone.ambient_dim, domain.n
    if domain.kind == "tube" and cone.npairs > 0:
        raise ValueError("domain quadrature supports product cones and balls")
    total = 0.0
    shell = 0.0
    edge = {0, 1, len(u) - 2, len(u) - 1}
    bd2 = domain.b_vec + 2 * cone.d_vec
    hs = cone.hausdorff_scale
    for iy in np.ndindex(*(len(u),) * r):
        y = np.exp([u[k] for k in iy])
        wy = np.prod([wu[k] for k in iy]) * np.prod(y)  # du -> dy Jacobian
        dens = float(np.prod(y ** bd2))
        if domain.kind == "tube":
            grids = np.meshgrid(*([xn] * m), indexing="ij")
            wg = np.meshgrid(*([wxn] * m), indexing="ij")
            pts = np.stack([a.ravel() for a in grids], axis=1)
            wall = np.prod(np.stack([a.ravel() for a in wg], axis=1), axis=1)
            z = pts + 1j * y[None, :]
            vals = f(np.zeros((len(pts), 0), dtype=complex), z)
        else:
            zr, zi, xx = np.meshgrid(xn, xn, xn, indexing="ij")
            wz = np.prod(np.meshgrid(wxn, wxn, wxn, indexing="ij"), axis=0)
            zeta = (zr + 1j * zi).ravel()[:, None]
            wall = wz.ravel()
            x = xx.ravel()
            z = (x + 1j * (np.abs(zeta[:, 0]) ** 2 + y[0]))[:, None]
            vals = f(zeta, z)
        part = float(np.real((vals * wall).sum()) * wy * dens * hs)
        total += part
        if any(k in edge for k in iy):
            shell += abs(part)
    if abs(shell) > trunc_tol * max(abs(total), 1e-300):
        raise TruncationDominates(f"boundary shells carry {shell:.3e} of {total:.3e}")
    return total
