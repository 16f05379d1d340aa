"""Mixed-norm evaluation, sampling, atomic synthesis, Bergman projection.

The desk-scale experimental layer: functions live on tensor grids over a
domain (log-spaced heights, tan-compactified horizontals), with exact
evaluators for kernel/spectral/atomic provenance.  Experiments run on
the tube over the half-line, its two-fold product, and the rank-one
ball.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import calculus, cones, geometry, siegel, special_functions as sf
from .errors import (LatticeOutsideGrid, NotContracting,
                     ParameterBulletViolated, TailTooHeavy)

KERNEL, SPECTRAL, ATOMS, CUSTOM = "KERNEL", "SPECTRAL", "ATOMS", "CUSTOM"


@dataclass
class GridSpec:
    u_range: tuple = (-6.0, 6.0)
    n_u: int = 64
    x_scale: float = 4.0
    n_x: int = 129
    zeta_scale: float = 2.0
    n_zeta: int = 33


def _gl(n, lo, hi):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi + lo) + 0.5 * (hi - lo) * x, 0.5 * (hi - lo) * w


@dataclass
class GridFunction:
    """Function sampled on a tensor grid over the domain.

    values: (n_heights, n_boundary_nodes) complex; the boundary nodes
    enumerate the N-grid (x grid for tubes, (zeta, x) for balls) with
    Lebesgue weights w_bnd.  heights carries the cone part with the
    invariant-measure weights w_h (d nu_Omega).
    """

    domain: object
    heights: np.ndarray          # (n_heights, rank) cone points (diagonal)
    w_heights: np.ndarray        # nu_Omega weights per height row
    Z0: np.ndarray               # (n_bnd, m) complex boundary part at h = 0
    ZETA: np.ndarray             # (n_bnd, n) complex
    w_bnd: np.ndarray            # Lebesgue weights on N
    values: np.ndarray
    provenance: str = CUSTOM
    evaluator: object = None     # callable (Z, ZETA) -> values
    edge_mask: np.ndarray = None  # True on outer-shell nodes (tail checks)

    def points_at(self, k):
        """Full domain points (Z, ZETA) over the boundary grid at height k."""
        h = self.heights[k]
        Z = self.Z0.copy()
        Z[:, :] += 1j * h[None, :]
        return Z, self.ZETA


def make_grid(domain, spec=None):
    """Tensor grid skeleton for a GridFunction."""
    spec = spec or GridSpec()
    cone = domain.cone
    r = cone.rank
    u, wu = _gl(spec.n_u, *spec.u_range)
    if domain.kind == "tube" and r == 1:
        y = np.exp(u)
        heights = y[:, None]
        w_h = wu  # dnu = dy/y = du
        t, wt = _gl(spec.n_x, -0.5 * np.pi * 0.999, 0.5 * np.pi * 0.999)
        x = spec.x_scale * np.tan(t)
        wx = spec.x_scale * wt / np.cos(t) ** 2
        Z0 = x[:, None].astype(complex)
        ZETA = np.zeros((len(x), 0), dtype=complex)
        w_bnd = wx
        edge = np.zeros(len(x), dtype=bool)
        edge[np.abs(t) > 0.85 * 0.5 * np.pi] = True
        h_edge = np.zeros(len(u), dtype=bool)
        h_edge[(u < spec.u_range[0] + 0.1 * np.ptp(u))
               | (u > spec.u_range[1] - 0.1 * np.ptp(u))] = True
        return {"heights": heights, "w_h": w_h, "Z0": Z0, "ZETA": ZETA,
                "w_bnd": w_bnd, "edge_bnd": edge, "edge_h": h_edge}
    if domain.kind == "tube" and cone.pattern.name == cones.DIAGONAL and r == 2:
        y1, y2 = np.meshgrid(np.exp(u), np.exp(u), indexing="ij")
        heights = np.stack([y1.ravel(), y2.ravel()], axis=1)
        w_h = np.outer(wu, wu).ravel()
        t, wt = _gl(spec.n_x, -0.5 * np.pi * 0.999, 0.5 * np.pi * 0.999)
        x = spec.x_scale * np.tan(t)
        wx = spec.x_scale * wt / np.cos(t) ** 2
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        Z0 = np.stack([X1.ravel(), X2.ravel()], axis=1).astype(complex)
        ZETA = np.zeros((Z0.shape[0], 0), dtype=complex)
        w_bnd = np.outer(wx, wx).ravel()
        eb = np.abs(t) > 0.85 * 0.5 * np.pi
        E1, E2 = np.meshgrid(eb, eb, indexing="ij")
        edge = (E1 | E2).ravel()
        ue = (u < spec.u_range[0] + 0.1 * np.ptp(u)) | \
             (u > spec.u_range[1] - 0.1 * np.ptp(u))
        U1, U2 = np.meshgrid(ue, ue, indexing="ij")
        return {"heights": heights, "w_h": w_h, "Z0": Z0, "ZETA": ZETA,
                "w_bnd": w_bnd, "edge_bnd": edge, "edge_h": (U1 | U2).ravel()}
    if domain.kind == "ball":
        y = np.exp(u)
        heights = y[:, None]
        w_h = wu
        t, wt = _gl(spec.n_x, -0.5 * np.pi * 0.999, 0.5 * np.pi * 0.999)
        x = spec.x_scale * np.tan(t)
        wx = spec.x_scale * wt / np.cos(t) ** 2
        tz, wtz = _gl(spec.n_zeta, -0.5 * np.pi * 0.99, 0.5 * np.pi * 0.99)
        zc = spec.zeta_scale * np.tan(tz)
        wz = spec.zeta_scale * wtz / np.cos(tz) ** 2
        ZR, ZI, X = np.meshgrid(zc, zc, x, indexing="ij")
        WZ = np.einsum("i,j,k->ijk", wz, wz, wx).ravel()
        zeta = (ZR + 1j * ZI).ravel()
        phi = (np.abs(zeta) ** 2)
        Z0 = (X.ravel() + 1j * phi)[:, None]
        ZETA = zeta[:, None]
        eb = np.abs(t) > 0.85 * 0.5 * np.pi
        ez = np.abs(tz) > 0.85 * 0.5 * np.pi
        E = (np.repeat(np.repeat(ez[:, None], len(zc), 1)[:, :, None], len(x), 2)
             | np.repeat(np.repeat(ez[None, :], len(zc), 0)[:, :, None], len(x), 2)
             | np.repeat(np.repeat(eb[None, None, :], len(zc), 0), len(zc), 1))
        ue = (u < spec.u_range[0] + 0.1 * np.ptp(u)) | \
             (u > spec.u_range[1] - 0.1 * np.ptp(u))
        return {"heights": heights, "w_h": w_h, "Z0": Z0, "ZETA": ZETA,
                "w_bnd": WZ, "edge_bnd": E.ravel(), "edge_h": ue}
    raise ValueError("unsupported domain for grids")


def grid_function(domain, evaluator, spec=None, provenance=CUSTOM, chunk=200000):
    """Fill a GridFunction from a batched evaluator (Z, ZETA) -> values."""
    g = make_grid(domain, spec)
    nh = len(g["heights"])
    nb = len(g["Z0"])
    vals = np.empty((nh, nb), dtype=complex)
    for k in range(nh):
        Z = g["Z0"] + 1j * g["heights"][k][None, :]
        out = np.empty(nb, dtype=complex)
        for a in range(0, nb, chunk):
            out[a:a + chunk] = evaluator(Z[a:a + chunk], g["ZETA"][a:a + chunk])
        vals[k] = out
    gf = GridFunction(domain, g["heights"], g["w_h"], g["Z0"], g["ZETA"],
                      g["w_bnd"], vals, provenance, evaluator)
    gf.edge_mask = g["edge_bnd"]
    gf._edge_h = g["edge_h"]
    return gf


def kernel_evaluator(domain, s, base):
    def ev(Z, ZETA):
        w = (Z - np.conj(base.z)[None, :]) / 2j
        if domain.n:
            w = w - np.einsum("ni,i->n", ZETA, np.conj(base.zeta))[:, None]
        return siegel.kernel_B_from_args(domain, s, w)
    return ev


def kernel_grid_function(domain, s, base, spec=None):
    return grid_function(domain, kernel_evaluator(domain, s, base), spec, KERNEL)


def spectral_evaluator(domain, f):
    if domain.cone.rank != 1 or domain.kind != "tube":
        raise ValueError("spectral evaluators are tube rank-one")

    def ev(Z, ZETA):
        out = np.empty(len(Z), dtype=complex)
        lams = np.linspace(f.support[0], f.support[1], 1200)
        for i, z in enumerate(Z[:, 0]):
            g = f.density(lams) * np.exp(-lams * z.imag)
            out[i] = calculus._filon_linear(lams, g, np.array([z.real]))[0]
        return out

    return ev


def spectral_grid_function(domain, f, spec=None):
    """Grid values of the extension of a spectral density (vectorized)."""
    g = make_grid(domain, spec)
    lams = np.linspace(f.support[0], f.support[1], 1200)
    tau = f.density(lams)
    nh = len(g["heights"])
    x = g["Z0"][:, 0].real
    vals = np.empty((nh, len(x)), dtype=complex)
    for k in range(nh):
        damped = tau * np.exp(-lams * g["heights"][k][0])
        vals[k] = calculus._filon_linear(lams, damped, x)
    gf = GridFunction(domain, g["heights"], g["w_h"], g["Z0"], g["ZETA"],
                      g["w_bnd"], vals, SPECTRAL, None)
    gf.edge_mask = g["edge_bnd"]
    gf._edge_h = g["edge_h"]
    return gf


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def slice_norms(f, p):
    """L^p(N) norms of the height slices of a GridFunction."""
    av = np.abs(f.values)
    if p == np.inf:
        return av.max(axis=1)
    return np.maximum((av ** p * f.w_bnd[None, :]).sum(axis=1), 0.0) ** (1.0 / p)


def mixed_norm(f, p, q, s, tail_tol=5e-3, check_tails=True):
    """Mixed norm: inner L^p over the boundary grid, outer weighted L^q.

    Raises TailTooHeavy when the outer shells of the grid carry more
    than tail_tol of the norm mass.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    sl = slice_norms(f, p)
    wgt = cones.power_batch(f.domain.cone, s, f.heights_full())
    if q == np.inf:
        total = np.max(wgt * sl)
        return float(total)
    mass = (wgt * sl) ** q * f.w_heights
    total = mass.sum()
    if check_tails and total > 0:
        edge_h = getattr(f, "_edge_h", None)
        if edge_h is not None and np.any(edge_h):
            outer = mass[edge_h].sum()
            av = np.abs(f.values)
            xmass = (av ** p * f.w_bnd[None, :])
            outer_x = (xmass[:, f.edge_mask].sum(axis=1) /
                       np.maximum(xmass.sum(axis=1), 1e-300))
            if outer > tail_tol * total or np.max(outer_x * (mass > 0)) > \
                    10 * tail_tol:
                raise TailTooHeavy(
                    f"edge shells carry {max(outer / total, np.max(outer_x)):.2e}")
    return float(total ** (1.0 / q))


def _heights_full(self):
    """Diagonal heights as full cone coordinate rows."""
    m = self.domain.cone.ambient_dim
    out = np.zeros((len(self.heights), m))
    out[:, :self.domain.cone.rank] = self.heights
    return out


GridFunction.heights_full = _heights_full


def ellpq_norm(lam, p, q, leaf_index=None):
    """Nested little-l^{p,q} norm.

    lam: 2-d array (k, j) or flat array with leaf_index giving the outer
    group of each entry.  sup conventions at infinity.
    """
    lam = np.asarray(lam)
    if lam.ndim == 2 and leaf_index is None:
        groups = [lam[k] for k in range(lam.shape[0])]
    else:
        leaf_index = np.asarray(leaf_index)
        groups = [lam[leaf_index == k] for k in np.unique(leaf_index)]
    inner = []
    for gvec in groups:
        a = np.abs(gvec)
        if p == np.inf:
            inner.append(a.max() if a.size else 0.0)
        else:
            inner.append(float((a ** p).sum() ** (1.0 / p)))
    inner = np.array(inner)
    if q == np.inf:
        return float(inner.max()) if inner.size else 0.0
    return float((inner ** q).sum() ** (1.0 / q))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

POINT, MAX, MIN = "POINT", "MAX", "MIN"


def sampling_operator(f, lat, p, q, s, variant=POINT):
    """Weighted samples of f on a domain lattice.

    POINT evaluates f at the lattice points (exact evaluator when the
    provenance provides one, grid interpolation otherwise); MAX / MIN
    take extrema of |f| over grid nodes in the closed R delta-balls.
    Returns the weight array for ellpq_norm.
    """
    domain = f.domain
    s = np.atleast_1d(np.asarray(s, dtype=float))
    bd = domain.b_vec + domain.cone.d_vec
    expo = s - bd / p
    Z, ZETA = geometry.lattice_chart_arrays(lat)
    hk = lat.heights[lat.leaf_index]
    wgt = hk ** float(expo.sum())  # rank-one heights
    if variant == POINT:
        if f.evaluator is not None:
            vals = f.evaluator(Z, ZETA)
        else:
            vals = _interp_grid(f, Z, ZETA)
        return wgt * vals, lat.leaf_index
    # ball-restricted extrema over grid nodes
    vals = np.empty(len(Z))
    rad = max(lat.R, 1.0) * lat.delta
    av = np.abs(f.values)
    nh = len(f.heights)
    nb = len(f.Z0)
    hgrid = f.heights[:, 0]
    out = np.empty(len(Z))
    for i in range(len(Z)):
        # prune heights by the cone-distance lower bound
        hsel = np.where(np.abs(np.log(hgrid / hk[i])) <=
                        rad * math.sqrt(2.0 / -(domain.b_vec[0] + 2 * domain.cone.d_vec[0]) * 4) + 1e-12)[0]
        if len(hsel) == 0:
            raise LatticeOutsideGrid(f"no grid heights near leaf {hk[i]}")
        best = -np.inf if variant == MAX else np.inf
        for k in hsel:
            Zg = f.Z0 + 1j * f.heights[k][None, :]
            dd = geometry.dist_domain_pairs(
                domain, Zg, f.ZETA, np.tile(Z[i], (nb, 1)),
                np.tile(ZETA[i], (nb, 1)))
            m = dd <= rad
            if np.any(m):
                cand = av[k][m]
                best = max(best, cand.max()) if variant == MAX else \
                    min(best, cand.min())
        if not np.isfinite(best):
            raise LatticeOutsideGrid("ball has no grid nodes")
        out[i] = best
    return wgt * out, lat.leaf_index


def _interp_grid(f, Z, ZETA):
    if f.domain.kind != "tube" or f.domain.cone.rank != 1:
        raise LatticeOutsideGrid("interpolation only on the rank-one tube grid")
    from scipy.interpolate import RegularGridInterpolator
    u = np.log(f.heights[:, 0])
    x = f.Z0[:, 0].real
    gr = RegularGridInterpolator((u, x), f.values.reshape(len(u), len(x)).real,
                                 bounds_error=False, fill_value=None)
    gi = RegularGridInterpolator((u, x), f.values.reshape(len(u), len(x)).imag,
                                 bounds_error=False, fill_value=None)
    h = Z[:, 0].imag
    pts = np.stack([np.log(h), Z[:, 0].real], axis=1)
    return gr(pts) + 1j * gi(pts)


# ---------------------------------------------------------------------------
# atoms
# ---------------------------------------------------------------------------

@dataclass
class AtomCoefficients:
    lattice: object
    lam: np.ndarray
    p: float
    q: float
    s: np.ndarray
    sp: np.ndarray  # kernel exponent of the atoms


def check_atom_bullets(domain, p, q, s, sp):
    """Parameter conditions for the synthesis map to land in the space."""
    cone = domain.cone
    s = np.atleast_1d(np.asarray(s, dtype=float))
    sp = np.atleast_1d(np.asarray(sp, dtype=float))
    bd = domain.b_vec + cone.d_vec
    if q == np.inf:
        if np.any(s < 0):
            raise ParameterBulletViolated("weight", "s >= 0 needed for q = inf")
    elif np.any(s <= cone.m_vec / (2.0 * q)):
        raise ParameterBulletViolated("weight", "s_j > m_j / (2q) fails")
    if p == np.inf:
        if np.any(sp > 0):
            raise ParameterBulletViolated("kernel", "s' <= 0 needed for p = inf")
    elif np.any(sp >= bd / p - cone.mp_vec / (2.0 * p)):
        raise ParameterBulletViolated("kernel", "s'_j < (b+d-m'/2)_j / p fails")
    tot = s + sp
    if q == np.inf:
        if np.any(tot > bd / p):
            raise ParameterBulletViolated("sum", "s + s' <= (b+d)/p fails")
    elif np.any(tot >= bd / p - cone.mp_vec / (2.0 * q)):
        raise ParameterBulletViolated("sum", "(s+s')_j < ((b+d)/p - m'/(2q))_j fails")


def atom_evaluator(domain, coeffs, positive=False):
    """Pointwise sum of scaled kernels at the lattice points."""
    lat = coeffs.lattice
    Zl, ZETAl = geometry.lattice_chart_arrays(lat)
    hk = lat.heights[lat.leaf_index]
    bd = domain.b_vec + domain.cone.d_vec
    expo = float((bd / coeffs.p - coeffs.s - coeffs.sp).sum())
    scale = hk ** expo

    def ev(Z, ZETA):
        out = np.zeros(len(Z), dtype=complex if not positive else float)
        for i in range(len(Zl)):
            if coeffs.lam[i] == 0:
                continue
            w = (Z - np.conj(Zl[i])[None, :]) / 2j
            if domain.n:
                w = w - np.einsum("ni,i->n", ZETA, np.conj(ZETAl[i]))[:, None]
            ker = siegel.kernel_B_from_args(domain, coeffs.sp, w)
            if positive:
                out += np.abs(coeffs.lam[i] * ker) * scale[i]
            else:
                out += coeffs.lam[i] * ker * scale[i]
        return out

    return ev


def atomic_synthesis(domain, coeffs, spec=None, positive=False):
    """GridFunction of the atomic sum (Psi, or Psi_+ with positive=True)."""
    check_atom_bullets(domain, coeffs.p, coeffs.q, coeffs.s, coeffs.sp)
    return grid_function(domain, atom_evaluator(domain, coeffs, positive),
                         spec, ATOMS)


def cell_measures(domain, lat, seed=0, n_samples=600):
    """nu_D measures of the disjointified lattice cells.

    Cells follow the enumeration well-ordering: U_i is the R delta-ball
    of point i minus the earlier balls.  Computed by transporting a
    reference-ball sample (invariance of nu_D) and classifying samples
    against earlier centres; cached on the lattice object.
    """
    if getattr(lat, "_cell_measures", None) is not None:
        return lat._cell_measures
    rng = np.random.default_rng(seed)
    rad = max(lat.R, 1.0) * lat.delta
    # reference ball at (0, i): sample a chart box, keep ball members
    c = -(domain.b_vec[0] + 2.0 * domain.cone.d_vec[0])
    half_u = rad * 2.0 / math.sqrt(c)
    half_x = rad * 2.2
    half_z = rad * 1.8
    target = n_samples
    pts_z = []
    pts_zeta = []
    vol_box = None
    n_draw = 4000
    while True:
        u = rng.uniform(-half_u, half_u, n_draw)
        x = rng.uniform(-half_x, half_x, n_draw)
        h = np.exp(u)
        if domain.n:
            zr = rng.uniform(-half_z, half_z, n_draw)
            zi = rng.uniform(-half_z, half_z, n_draw)
            zeta = (zr + 1j * zi)[:, None]
            Z = (x + 1j * (h + zr ** 2 + zi ** 2))[:, None]
            vol_box = (2 * half_u) * (2 * half_x) * (2 * half_z) ** 2
        else:
            zeta = np.zeros((n_draw, 0), dtype=complex)
            Z = (x + 1j * h)[:, None]
            vol_box = (2 * half_u) * (2 * half_x)
        ref_z = np.array([[1j]])
        ref_zeta = np.zeros((1, domain.n), dtype=complex)
        dd = geometry.dist_domain_pairs(domain, Z, zeta,
                                        np.tile(ref_z, (n_draw, 1)),
                                        np.tile(ref_zeta, (n_draw, 1)))
        keep = dd <= rad
        pts_z.append(Z[keep])
        pts_zeta.append(zeta[keep])
        if sum(len(a) for a in pts_z) >= target:
            break
        n_draw *= 2
    Z = np.concatenate(pts_z)[:target]
    ZETA = np.concatenate(pts_zeta)[:target]
    accept = len(np.concatenate(pts_z)) / (n_draw if len(pts_z) == 1 else
                                            sum(len(a) for a in pts_z) /
                                            (len(np.concatenate(pts_z)) /
                                             len(np.concatenate(pts_z))))
    # nu_D density in the sampling coordinates (u, x[, zeta]):
    # dnu_D = h^{b+2d} dx dh dzeta = h^{b+2d+1} dx du dzeta
    expo = domain.b_vec[0] + 2.0 * domain.cone.d_vec[0] + 1.0
    hs = Z[:, 0].imag.copy()
    if domain.n:
        hs = hs - np.abs(ZETA[:, 0]) ** 2
    dens = hs ** expo
    total_draws = 0
    # recompute acceptance properly
    # (vol integral) nu_D(ball) = vol_box * mean over box draws of dens*chi
    # We resampled adaptively; redo a clean fixed-size estimate:
    n_est = 20000
    u = rng.uniform(-half_u, half_u, n_est)
    x = rng.uniform(-half_x, half_x, n_est)
    h = np.exp(u)
    if domain.n:
        zr = rng.uniform(-half_z, half_z, n_est)
        zi = rng.uniform(-half_z, half_z, n_est)
        zeta_e = (zr + 1j * zi)[:, None]
        Z_e = (x + 1j * (h + zr ** 2 + zi ** 2))[:, None]
    else:
        zeta_e = np.zeros((n_est, 0), dtype=complex)
        Z_e = (x + 1j * h)[:, None]
    dd = geometry.dist_domain_pairs(domain, Z_e, zeta_e,
                                    np.tile(np.array([[1j]]), (n_est, 1)),
                                    np.tile(np.zeros((1, domain.n), dtype=complex),
                                            (n_est, 1)))
    keep = dd <= rad
    dens_e = (Z_e[:, 0].imag - (np.abs(zeta_e[:, 0]) ** 2 if domain.n else 0.0)) \
        ** expo
    ball_measure = vol_box * float((dens_e * keep).mean())
    # classify transported reference samples against earlier centres
    Zl, ZETAl = geometry.lattice_chart_arrays(lat)
    hk = lat.heights[lat.leaf_index]
    n = len(Zl)
    cms = np.empty(n)
    ZmB = Z            # reference ball samples at (0, i)
    for i in range(n):
        # transport (0, i) -> lattice point i: dilation by sqrt(hk) then
        # boundary translation; both are nu_D isometries
        t = math.sqrt(hk[i])
        Zt = ZmB * hk[i]
        ZETAt = ZETA * t
        if domain.n:
            g_zeta = ZETAl[i] - 0.0
            x0 = Zl[i].real - (2.0 * (ZETAt * np.conj(g_zeta)[None, :]).imag
                               if domain.n else 0.0)
            Zt = Zt + (Zl[i] - 1j * hk[i] * 0 - Zt * 0)[None, :] * 0  # placeholder
            # boundary translate: z -> z + x0 + i phi(g) + 2i phi(zeta, g)
            phi_g = float(np.vdot(g_zeta, g_zeta).real)
            Zt = Zt + (Zl[i].real - 0.0)[None, :] + 1j * phi_g \
                + 2j * (ZETAt @ np.conj(g_zeta))[:, None] - Zl[i].real * 0
            # fix the real shift: want Im part = phi(zeta_t + g) + h-sample*hk
            Zt[:, 0] = (ZmB[:, 0].real * hk[i] + Zl[i].real) + 1j * (
                (ZmB[:, 0].imag - np.abs(ZETA[:, 0]) ** 2) * hk[i]
                + np.abs(ZETAt[:, 0] + g_zeta[0]) ** 2)
            ZETAt = ZETAt + g_zeta[None, :]
        else:
            Zt = ZmB * hk[i] + Zl[i].real[None, :]
        # membership in earlier balls
        inside_earlier = np.zeros(len(Zt), dtype=bool)
        for jj in range(i):
            if abs(math.log(hk[jj] / hk[i])) > 2.5 * rad:
                continue
            dd = geometry.dist_domain_pairs(
                domain, Zt, ZETAt, np.tile(Zl[jj], (len(Zt), 1)),
                np.tile(ZETAl[jj], (len(Zt), 1)))
            inside_earlier |= dd <= rad
            if inside_earlier.all():
                break
        cms[i] = ball_measure * float(1.0 - inside_earlier.mean())
    lat._cell_measures = cms
    return cms


def neumann_reconstruct(f, lat, sp, p, q, s, max_iter=30, tol=1e-3,
                        seed=0, n_cell_samples=600):
    """Frame-algorithm reconstruction of f from lattice samples.

    Iterates g -> g - S'g with S' the cell-measure Riemann sum of the
    reproducing integral, accumulating the sampled coefficients; stops
    when the relative grid norm of the residual drops below tol.
    Raises NotContracting when the residual ratio exceeds one three
    times in a row.
    """
    domain = f.domain
    s = np.atleast_1d(np.asarray(s, dtype=float))
    sp = np.atleast_1d(np.asarray(sp, dtype=float))
    check_atom_bullets(domain, p, q, s, sp)
    c_sp = sf.projector_constant(domain, sp)
    cms = cell_measures(domain, lat, seed=seed, n_samples=n_cell_samples)
    Zl, ZETAl = geometry.lattice_chart_arrays(lat)
    hk = lat.heights[lat.leaf_index]
    nlat = len(Zl)
    # kernel matrices: lattice x lattice and grid x lattice
    K_ll = np.empty((nlat, nlat), dtype=complex)
    kev = {}
    for i in range(nlat):
        ev = kernel_evaluator(domain, sp, siegel.SiegelPoint(ZETAl[i], Zl[i]))
        kev[i] = ev
        K_ll[:, i] = ev(Zl, ZETAl)
    dens = hk ** float((-sp).sum())
    weights = c_sp * cms * dens  # alpha_i = weights_i * g(p_i)
    norm_f = mixed_norm(f, p, q, s, check_tails=False)
    g_lat = f.evaluator(Zl, ZETAl) if f.evaluator is not None else \
        _interp_grid(f, Zl, ZETAl)
    g_grid = f.values.copy()
    coeff = np.zeros(nlat, dtype=complex)
    history = []
    bad = 0
    prev_res = None
    nh, nb = f.values.shape
    K_gl = np.empty((nh * nb, nlat), dtype=complex)
    for i in range(nlat):
        col = np.empty((nh, nb), dtype=complex)
        for k in range(nh):
            Z = f.Z0 + 1j * f.heights[k][None, :]
            col[k] = kev[i](Z, f.ZETA)
        K_gl[:, i] = col.ravel()
    work = GridFunction(domain, f.heights, f.w_heights, f.Z0, f.ZETA,
                        f.w_bnd, g_grid, CUSTOM, None)
    work._edge_h = getattr(f, "_edge_h", None)
    work.edge_mask = f.edge_mask
    for it in range(max_iter):
        alpha = weights * g_lat
        coeff += alpha
        g_lat = g_lat - K_ll @ alpha
        g_grid = g_grid - (K_gl @ alpha).reshape(nh, nb)
        work.values = g_grid
        res = mixed_norm(work, p, q, s, check_tails=False) / norm_f
        history.append(res)
        if prev_res is not None and res >= prev_res:
            bad += 1
            if bad >= 3:
                raise NotContracting(
                    f"residual stalled at {res:.3e} after {it + 1} iterations")
        else:
            bad = 0
        prev_res = res
        if res < tol:
            break
    bd = domain.b_vec + domain.cone.d_vec
    lam = coeff * hk ** float((s - bd / p).sum())
    coeffs = AtomCoefficients(lat, lam, p, q, s, sp)
    return {"coeffs": coeffs, "residual_history": np.array(history),
            "converged": bool(history and history[-1] < tol)}


# ---------------------------------------------------------------------------
# Bergman projection and duality
# ---------------------------------------------------------------------------

def bergman_project(g, sp, probes, positive=False):
    """Weighted Bergman projection of a GridFunction at probe points.

    probes: list of SiegelPoints.  Quadrature of the reproducing
    integral on g's grid; P_+ variant integrates |kernel| (and drops the
    constant, following the positive-operator convention).
    """
    domain = g.domain
    cone = domain.cone
    sp = np.atleast_1d(np.asarray(sp, dtype=float))
    bd = domain.b_vec + cone.d_vec
    for j in range(cone.rank):
        if not (sp[j] < bd[j] - 0.5 * cone.m_vec[j]):
            from .errors import GammaDomainError
            raise GammaDomainError(j, "projector needs s' < b + d - m/2")
    c_sp = sf.projector_constant(domain, sp)
    out = np.zeros(len(probes), dtype=complex)
    # nu_D weights on the grid: w_bnd x Delta^{b+d}(h) w_h
    hw = cones.power_batch(cone, bd, g.heights_full()) * g.w_heights
    for k in range(len(g.heights)):
        Zk = g.Z0 + 1j * g.heights[k][None, :]
        dens = float(cones.power_batch(cone, -sp,
                                       g.heights_full()[k][None, :])[0])
        for i, pr in enumerate(probes):
            w = (np.conj(pr.z)[None, :] - np.conj(Zk)) / (-2j)
            # B^{s'}_{(zeta', z')}(probe) with (zeta', z') the grid point
            warg = (pr.z[None, :] - np.conj(Zk)) / 2j
            if domain.n:
                warg = warg - np.einsum("i,ni->n", pr.zeta,
                                        np.conj(g.ZETA))[:, None]
            ker = siegel.kernel_B_from_args(domain, sp, warg)
            if positive:
                ker = np.abs(ker)
            out[i] += (g.values[k] * ker * g.w_bnd).sum() * dens * hw[k]
    return out if positive else c_sp * out


def duality_pairing(f, g, p, q, s, sp):
    """Sesquilinear pairing with the duality weight on the common grid."""
    domain = f.domain
    cone = domain.cone
    bd = domain.b_vec + cone.d_vec
    expo = np.atleast_1d(np.asarray(s, dtype=float)) + \
        np.atleast_1d(np.asarray(sp, dtype=float)) - bd / min(1.0, p)
    hw = cones.power_batch(cone, expo + bd, f.heights_full()) * f.w_heights
    inner = (f.values * np.conj(g.values) * f.w_bnd[None, :]).sum(axis=1)
    return complex((inner * hw).sum())
