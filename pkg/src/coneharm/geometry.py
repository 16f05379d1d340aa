"""Invariant distances, (delta, R)-lattices, and quasi-constancy estimators.

Distances come from the Bergman metric tensor.  Closed forms cover the
half-line products, the symmetric-matrix cone (scaled log metrics) and
the rank-one ball domains (scaled complex-hyperbolic cross-ratio); the
constants are calibrated against the tensor at first use.  Everything
else goes through segment integrals of the tensor refined by polyline
relaxation, cross-checkable against a k-NN geodesic graph, with a 3%
documented accuracy target.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from . import cones, siegel
from .errors import NotInCone, NotInDomain

CLOSED_FORM = "CLOSED_FORM"
GEODESIC_GRAPH = "GEODESIC_GRAPH"
GRAPH_ACCURACY = 0.03


def _halton(n, dim, seed=0):
    """Deterministic quasi-random stream in [0,1)^dim (seed rotates it)."""
    primes = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37][:dim]
    out = np.empty((n, dim))
    for d, p in enumerate(primes):
        idx = np.arange(1 + seed % 977, n + 1 + seed % 977)
        f = np.zeros(n)
        denom = 1.0
        i = idx.copy()
        while np.any(i > 0):
            denom *= p
            f += (i % p) / denom
            i //= p
        out[:, d] = f
    return out


# ---------------------------------------------------------------------------
# metric quadratic forms
# ---------------------------------------------------------------------------

def _ldl_jet2(cone, H, U):
    """Pivots of the pattern LDL along h + t u as order-2 jets.

    Returns (D, D1, D2): values and first/second t-derivatives at t = 0,
    each (N, r).  The recursion is rational, so jet propagation is exact.
    """
    pd = cone._pd
    r, npairs = pd.rank, pd.npairs
    H = np.atleast_2d(H)
    U = np.atleast_2d(U)
    n = H.shape[0]
    D0 = np.empty((n, r)); D1 = np.empty((n, r)); D2 = np.empty((n, r))
    L0 = np.zeros((n, npairs)); L1 = np.zeros((n, npairs)); L2 = np.zeros((n, npairs))
    p = 0
    for j in range(r):
        a0 = H[:, j].copy(); a1 = U[:, j].copy(); a2 = np.zeros(n)
        for t in range(pd.piv_off[j], pd.piv_off[j + 1]):
            i = pd.piv_idx[t] - r
            c = pd.piv_col[t]
            # subtract (L^2 D) as a jet product
            s0 = L0[:, i] ** 2
            s1 = 2 * L0[:, i] * L1[:, i]
            s2 = 2 * (L1[:, i] ** 2 + L0[:, i] * L2[:, i])
            a0 -= s0 * D0[:, c]
            a1 -= s1 * D0[:, c] + s0 * D1[:, c]
            a2 -= s2 * D0[:, c] + 2 * s1 * D1[:, c] + s0 * D2[:, c]
        D0[:, j], D1[:, j], D2[:, j] = a0, a1, a2
        while p < npairs and pd.pair_j[p] == j:
            b0 = H[:, r + p].copy(); b1 = U[:, r + p].copy(); b2 = np.zeros(n)
            for t in range(pd.pr_off[p], pd.pr_off[p + 1]):
                ia, ib = pd.pr_a[t] - r, pd.pr_b[t] - r
                c = pd.pr_col[t]
                s0 = L0[:, ia] * L0[:, ib]
                s1 = L1[:, ia] * L0[:, ib] + L0[:, ia] * L1[:, ib]
                s2 = L2[:, ia] * L0[:, ib] + 2 * L1[:, ia] * L1[:, ib] \
                    + L0[:, ia] * L2[:, ib]
                b0 -= s0 * D0[:, c]
                b1 -= s1 * D0[:, c] + s0 * D1[:, c]
                b2 -= s2 * D0[:, c] + 2 * s1 * D1[:, c] + s0 * D2[:, c]
            # jet division b / D_j
            q0 = b0 / a0
            q1 = (b1 - q0 * a1) / a0
            q2 = (b2 - 2 * q1 * a1 - q0 * a2) / a0
            L0[:, p], L1[:, p], L2[:, p] = q0, q1, q2
            p += 1
    return D0, D1, D2


def cone_quadform(cone, b_vec, H, U):
    """Batched |u|^2_g at cone points: one quarter of the log-power Hessian."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    expo = b_vec + 2.0 * cone.d_vec
    name = cone.pattern.name
    if name == cones.DIAGONAL or cone.rank == 1:
        c = -(expo) / 4.0
        return ((c[None, :cone.rank] * U[:, :cone.rank] ** 2)
                / H[:, :cone.rank] ** 2).sum(axis=1)
    if name == cones.FULL and np.ptp(expo) == 0:
        kappa2 = -expo[0] / 4.0
        hm = cones.coords_to_matrix(cone, H)
        um = cones.coords_to_matrix(cone, U)
        x = np.linalg.solve(hm, um)
        return kappa2 * np.einsum("nij,nji->n", x, x)
    w = cones.slot_weights(cone, expo)
    D0, D1, D2 = _ldl_jet2(cone, H, U)
    # Hess log Delta^expo [u, u] = sum w_i (D2/D0 - (D1/D0)^2)
    return 0.25 * ((D2 / D0 - (D1 / D0) ** 2) @ w)


def domain_quadform(domain, P_rho, P_zeta, Vz, Vw):
    """Batched Riemannian |(v, w)|^2 on the domain."""
    cone = domain.cone
    expo = domain.b_vec + 2.0 * cone.d_vec
    n = domain.n
    if cone.rank == 1:
        c = -expo[0]
        X = -0.5j * Vw[:, 0]
        if n:
            X = X - np.einsum("ni,ni->n", Vz, np.conj(P_zeta))
        h = P_rho[:, 0]
        out = c * np.abs(X) ** 2 / h ** 2
        if n:
            out = out + c / h * np.einsum("ni,ni->n", Vz, np.conj(Vz)).real
        return out
    return (cone_quadform(cone, domain.b_vec, P_rho, Vw.real)
            + cone_quadform(cone, domain.b_vec, P_rho, Vw.imag))


# ---------------------------------------------------------------------------
# segment lengths and polyline geodesics
# ---------------------------------------------------------------------------

_G3 = (np.array([0.1127016653792583, 0.5, 0.8872983346207417]),
       np.array([5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0]))


def segment_length_batch(quadform, A, B, nseg=2):
    """Straight-chord lengths in the tensor metric, batched over rows."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    total = np.zeros(len(A))
    nodes, wts = _G3
    for k in range(nseg):
        a = A + (B - A) * (k / nseg)
        d = (B - A) / nseg
        for t, w in zip(nodes, wts):
            q = quadform(a + t * d, d)
            total += w * np.sqrt(np.maximum(q, 0.0))
    return total


def _polyline_length(quadform, pts):
    return float(segment_length_batch(quadform, pts[:-1], pts[1:], nseg=1).sum())


def _relax_polyline(quadform, a, b, n_nodes=17, iters=40):
    """Discrete geodesic between chart points in a convex chart.

    Interior nodes descend the total length along coordinate directions;
    the result upper-bounds the distance, tight to well under the
    documented oracle accuracy for moderate separations.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ts = np.linspace(0.0, 1.0, n_nodes)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    cur = _polyline_length(quadform, pts)
    scale = np.abs(pts).max() + 1.0
    step = 0.1 * np.linalg.norm(b - a) / n_nodes + 1e-3 * scale
    for _ in range(iters):
        improved = False
        for i in range(1, n_nodes - 1):
            base = pts[i].copy()
            for d in range(pts.shape[1]):
                for sgn in (+1.0, -1.0):
                    ref = _polyline_length(quadform, np.array(
                        [pts[i - 1], base, pts[i + 1]]))
                    pts[i, d] = base[d] + sgn * step
                    trial = _polyline_length(quadform, pts[i - 1:i + 2])
                    if np.isfinite(trial) and trial < ref - 1e-15:
                        base = pts[i].copy()
                        improved = True
                        break
                    pts[i, d] = base[d]
        new = _polyline_length(quadform, pts)
        if not improved or cur - new < 1e-7 * cur:
            cur = min(cur, new)
            step *= 0.5
            if step < 1e-9 * scale:
                break
        else:
            cur = new
    return min(cur, _polyline_length(quadform, pts))


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

@dataclass
class DistanceOracle:
    """Distance backend for a cone or domain reference."""

    ref: object
    kind: str  # "cone" | "domain"
    method: str
    accuracy: float = GRAPH_ACCURACY
    b_vec: np.ndarray = None

    def dist(self, a, b):
        if self.kind == "cone":
            return dist_cone(self.ref, a, b, b_vec=self.b_vec)
        return dist_domain(self.ref, a, b)


def distance_method(ref, kind="cone"):
    if kind == "cone":
        if ref.pattern.name in (cones.DIAGONAL, cones.FULL) or ref.rank == 1:
            return CLOSED_FORM
        return GEODESIC_GRAPH
    if ref.kind == "ball" or (ref.cone.pattern.name == cones.DIAGONAL
                              or ref.cone.rank == 1):
        return CLOSED_FORM
    return GEODESIC_GRAPH


_CAL_CACHE = {}


def _full_cone_scale(cone, b_vec):
    """Matrix-log distance scale, read off the tensor at the base point."""
    q = float(cone_quadform(cone, b_vec, cone.e_cone[None, :],
                            cone.e_cone[None, :])[0])
    return math.sqrt(q / cone.rank)


def _ball_scale(domain):
    """Cross-ratio distance scale, read off the tensor at the base point."""
    p = siegel.SiegelPoint.make(domain, zeta=np.zeros(domain.n), z=[1j])
    q = float(domain_quadform(domain, np.array([[1.0]]),
                              np.zeros((1, domain.n), dtype=complex),
                              np.zeros((1, domain.n), dtype=complex),
                              np.array([[1j]]))[0])
    # vertical speed sqrt(q) at height 1 vs cross-ratio speed 1/2
    return 2.0 * math.sqrt(q)


def dist_cone_batch(cone, A, B, b_vec=None):
    """Vectorized cone distances (closed forms; chords elsewhere)."""
    if b_vec is None:
        b_vec = np.zeros(cone.rank)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    expo = b_vec + 2.0 * cone.d_vec
    name = cone.pattern.name
    if name == cones.DIAGONAL or cone.rank == 1:
        c = np.sqrt(-(expo) / 4.0)
        diff = c[None, :] * (np.log(A[:, :cone.rank]) - np.log(B[:, :cone.rank]))
        return np.linalg.norm(diff, axis=1)
    if name == cones.FULL and np.ptp(expo) == 0:
        key = (cone.rank, "full", tuple(b_vec))
        if key not in _CAL_CACHE:
            _CAL_CACHE[key] = _full_cone_scale(cone, b_vec)
        kappa = _CAL_CACHE[key]
        am = cones.coords_to_matrix(cone, A)
        bm = cones.coords_to_matrix(cone, B)
        w, v = np.linalg.eigh(am)
        isq = np.einsum("nij,nj,nkj->nik", v, 1.0 / np.sqrt(w), v)
        mid = np.einsum("nij,njk,nkl->nil", isq, bm, isq)
        ev = np.linalg.eigvalsh(mid)
        return kappa * np.linalg.norm(np.log(ev), axis=1)
    quadform = lambda P, U: cone_quadform(cone, b_vec, P, U)
    return segment_length_batch(quadform, A, B, nseg=3)


def dist_cone(cone, h, hp, b_vec=None, refine=True):
    """Invariant distance on the cone (tube-domain tensor by default).

    Closed form for half-line products and the symmetric cone; for other
    patterns a relaxed polyline through the convex chart (3% target).
    """
    h = np.asarray(h, dtype=float)
    hp = np.asarray(hp, dtype=float)
    if not (cones.in_cone(cone, h) and cones.in_cone(cone, hp)):
        raise NotInCone("distance needs interior points")
    name = cone.pattern.name
    if name in (cones.DIAGONAL, cones.FULL) or cone.rank == 1:
        return float(dist_cone_batch(cone, h[None, :], hp[None, :], b_vec)[0])
    if b_vec is None:
        b_vec = np.zeros(cone.rank)
    quadform = lambda P, U: cone_quadform(cone, b_vec, P, U)
    seg = float(segment_length_batch(quadform, h[None, :], hp[None, :], nseg=3)[0])
    if not refine or seg < 0.25:
        return seg
    return _relax_polyline(quadform, h, hp)


def dist_dual_cone(cone, lam, lamp, b_vec=None):
    """Distance on the dual cone through the inverse-transpose chart."""
    t1 = cones.dual_factor(cone, lam).inverse()
    t2 = cones.dual_factor(cone, lamp).inverse()
    return dist_cone(cone, cones.recompose(t1), cones.recompose(t2), b_vec=b_vec)


def _domain_chart(domain, p):
    return np.concatenate([p.zeta.real, p.zeta.imag, p.z.real, p.z.imag])


def _chart_point(domain, x):
    n, m = domain.n, domain.cone.ambient_dim
    zeta = x[:n] + 1j * x[n:2 * n]
    z = x[2 * n:2 * n + m] + 1j * x[2 * n + m:]
    return siegel.SiegelPoint(zeta, z)


def _domain_chart_quadform(domain):
    n, m = domain.n, domain.cone.ambient_dim

    def quadform(P, U):
        zeta = P[:, :n] + 1j * P[:, n:2 * n]
        z = P[:, 2 * n:2 * n + m] + 1j * P[:, 2 * n + m:]
        rho = z.imag.copy()
        if n:
            rho[:, 0] -= np.einsum("ni,ni->n", zeta, np.conj(zeta)).real
        vz = U[:, :n] + 1j * U[:, n:2 * n]
        vw = U[:, 2 * n:2 * n + m] + 1j * U[:, 2 * n + m:]
        return domain_quadform(domain, rho, zeta, vz, vw)

    return quadform


def dist_domain_pairs(domain, Z1, ZETA1, Z2, ZETA2):
    """Vectorized domain distances for rank-one based domains.

    Z*: (N, m) complex base coordinates, ZETA*: (N, n) fibers.  Tube
    products use per-factor hyperbolic distances; balls the scaled
    cross-ratio formula.
    """
    cone = domain.cone
    if domain.kind == "tube" and (cone.pattern.name == cones.DIAGONAL
                                  or cone.rank == 1):
        expo = domain.b_vec + 2.0 * cone.d_vec
        total = np.zeros(len(Z1))
        for j in range(cone.rank):
            z1, z2 = Z1[:, j], Z2[:, j]
            ch = 1.0 + np.abs(z1 - z2) ** 2 / (2.0 * z1.imag * z2.imag)
            total += (-(expo[j]) / 8.0) * np.arccosh(np.maximum(ch, 1.0)) ** 2 * 4.0
        return np.sqrt(total)
    if domain.kind == "ball":
        key = ("ball", domain.n)
        if key not in _CAL_CACHE:
            _CAL_CACHE[key] = _ball_scale(domain)
        kappa = _CAL_CACHE[key]
        w = (Z1[:, 0] - np.conj(Z2[:, 0])) / 2j \
            - np.einsum("ni,ni->n", ZETA1, np.conj(ZETA2))
        r1 = Z1[:, 0].imag - np.einsum("ni,ni->n", ZETA1, np.conj(ZETA1)).real
        r2 = Z2[:, 0].imag - np.einsum("ni,ni->n", ZETA2, np.conj(ZETA2)).real
        arg = np.abs(w) / np.sqrt(r1 * r2)
        return kappa * np.arccosh(np.maximum(arg, 1.0))
    raise ValueError("no vectorized distance for this domain")


def dist_domain(domain, p, q):
    """Bergman-metric distance on the domain.

    Closed form on tubes over half-line products (scaled hyperbolic) and
    rank-one balls (scaled complex-hyperbolic cross-ratio); relaxed
    polyline elsewhere.
    """
    if not (siegel.in_domain(domain, p) and siegel.in_domain(domain, q)):
        raise NotInDomain("distance needs interior points")
    cone = domain.cone
    closed = domain.kind == "ball" or (cone.pattern.name == cones.DIAGONAL
                                       or cone.rank == 1)
    if closed:
        return float(dist_domain_pairs(
            domain, p.z[None, :], p.zeta[None, :],
            q.z[None, :], q.zeta[None, :])[0])
    quadform = _domain_chart_quadform(domain)
    return _relax_polyline(quadform, _domain_chart(domain, p),
                           _domain_chart(domain, q))


def graph_distance(quadform, xs, sources, targets, knn=10):
    """k-NN geodesic-graph distances between chart points (upper bounds)."""
    tree = cKDTree(xs)
    k = min(knn + 1, len(xs))
    _, jj = tree.query(xs, k=k)
    rows = np.repeat(np.arange(len(xs)), k - 1)
    cols = jj[:, 1:].ravel()
    wts = segment_length_batch(quadform, xs[rows], xs[cols], nseg=2)
    good = np.isfinite(wts)
    graph = csr_matrix((wts[good], (rows[good], cols[good])),
                       shape=(len(xs),) * 2)
    dist = dijkstra(graph, directed=False, indices=sources)
    return dist[:, targets]


# ---------------------------------------------------------------------------
# lattices
# ---------------------------------------------------------------------------

@dataclass
class Lattice:
    kind: str                      # "cone" | "dual" | "domain"
    points: np.ndarray             # cone coords, or domain chart rows
    t_elems: list
    delta: float
    R: float
    window: dict
    certificate: dict = field(default_factory=dict)
    heights: np.ndarray = None     # domain lattices: leaf heights
    leaf_index: np.ndarray = None  # domain lattices: leaf of each point
    domain: object = None
    cone: object = None


def _cone_candidates(cone, window, seed, count, spread=1.3):
    """Quasi-random T_+-chart candidates around the window center."""
    radius = window.get("radius", 3.0)
    center = np.asarray(window.get("center", cone.e_cone), dtype=float)
    tc = cones.factor_coords(cone, center)
    r = cone.rank
    box = _halton(count, cone.ambient_dim, seed)
    t0 = cones.coords_to_matrix(cone, tc, symmetric=False)
    diag = np.exp((box[:, :r] - 0.5) * 2.0 * spread * radius)
    off = (box[:, r:] - 0.5) * 1.7 * spread * radius
    out = np.empty((count, cone.ambient_dim))
    for i in range(count):
        full = np.diag(diag[i])
        for p_, (k, j) in enumerate(cone._pd.pairs):
            full[k, j] = off[i, p_] * diag[i, j]
        g = t0 @ full
        out[i] = cones.matrix_to_coords(cone, g @ g.T)
    return out


def _windowed_stream(cone, window, seed, count, b_vec):
    """Candidates filtered to the metric window, shrinking until enough."""
    radius = float(window.get("radius", 3.0))
    center = np.asarray(window.get("center", cone.e_cone), dtype=float)
    spread = 1.2 / math.sqrt(cone.rank)
    for _ in range(6):
        cand = _cone_candidates(cone, window, seed, count, spread=spread)
        dc = dist_cone_batch(cone, np.tile(center, (len(cand), 1)), cand, b_vec)
        keep = cand[np.isfinite(dc) & (dc <= radius)]
        if len(keep) >= max(32, count // 10):
            return keep
        spread *= 0.6
    return keep


def lattice_cone(cone, delta, window, seed=0, b_vec=None, n_candidates=None,
                 n_probes=1500):
    """Greedy maximal 2 delta-separated set on a windowed piece of the cone.

    The delta-balls of the result are pairwise disjoint; the covering
    radius over quasi-random probes is reported as R (at most 2 up to
    sampling error, 4 guaranteed by maximality)."""
    radius = float(window.get("radius", 3.0))
    if radius > 20:
        raise ValueError("window radius limited to 20")
    if n_candidates is None:
        n_candidates = int(min(250000,
                               200 * (radius / delta) ** min(cone.ambient_dim, 4) + 500))
    center = np.asarray(window.get("center", cone.e_cone), dtype=float)
    cand = _windowed_stream(cone, window, seed, n_candidates, b_vec)
    kept = []
    for c in cand:
        if kept:
            dd = dist_cone_batch(cone, np.asarray(kept), np.tile(c, (len(kept), 1)),
                                 b_vec)
            if dd.min() < 2.0 * delta:
                continue
        kept.append(c)
    pts = np.array(kept) if kept else np.empty((0, cone.ambient_dim))
    t_elems = [cones.factor_coords(cone, p) for p in pts]
    lat = Lattice("cone", pts, t_elems, float(delta), 2.0,
                  {"center": center.tolist(), "radius": radius}, cone=cone)
    lat.certificate = certify_lattice_cone(cone, lat, seed=seed + 1,
                                           n_probes=n_probes, b_vec=b_vec)
    lat.R = lat.certificate["R"]
    return lat


def certify_lattice_cone(cone, lat, seed=0, n_probes=1500, b_vec=None):
    """Separation / covering / overlap certificate for a cone lattice."""
    pts = lat.points
    n = len(pts)
    ii, jj = np.triu_indices(n, k=1)
    sep = np.inf
    if len(ii):
        dd = dist_cone_batch(cone, pts[ii], pts[jj], b_vec)
        sep = float(dd.min())
    probes = _windowed_stream(cone, lat.window, seed + 77, n_probes, b_vec)
    cover = 0.0
    for c in probes:
        dd = dist_cone_batch(cone, pts, np.tile(c, (n, 1)), b_vec)
        cover = max(cover, float(dd.min()))
    R = cover / lat.delta
    Rd = max(R, 1.0 + 1e-9) * lat.delta
    overlap = 0
    if len(ii):
        dd = dist_cone_batch(cone, pts[ii], pts[jj], b_vec)
        close = dd < 2.0 * Rd
        counts = np.zeros(n, dtype=int)
        for a, b, c in zip(ii, jj, close):
            if c:
                counts[a] += 1
                counts[b] += 1
        overlap = int(counts.max()) + 1
    return {"separation": float(sep), "delta": lat.delta,
            "disjoint": bool(sep >= 2.0 * lat.delta * (1.0 - GRAPH_ACCURACY)),
            "covering_radius": float(cover), "R": float(R),
            "overlap_count": int(overlap), "n_points": n}


def lattice_domain(domain, delta, window, seed=0, n_probes=400):
    """Two-stage lattice on the domain: a maximal separated grid on the
    base leaf transported along a maximal separated family of leaves.

    window: {"u_range": (lo, hi), "x_half": X0[, "zeta_half": Z0]}; the
    horizontal window at leaf height h is |x| <= X0 * h (invariant
    shape), fibers |Re/Im zeta| <= Z0 sqrt(h).
    """
    cone = domain.cone
    if cone.rank != 1:
        raise ValueError("domain lattices are built over rank-one cones here")
    u_lo, u_hi = window["u_range"]
    x_half = window.get("x_half", 6.0)
    z_half = window.get("zeta_half", 2.0)
    c = math.sqrt(-(domain.b_vec[0] + 2.0 * cone.d_vec[0]) / 4.0)
    leaf_step = 2.0 * delta / c
    n_leaves = max(1, int(math.floor((u_hi - u_lo) / leaf_step)) + 1)
    us = u_lo + leaf_step * np.arange(n_leaves)
    heights = np.exp(us)
    pts = []
    leaf_idx = []
    t_elems = []
    xstep1 = _horizontal_step(domain, 1.0, delta)
    zstep1 = _fiber_step(domain, 1.0, delta) if domain.n else None
    for k, h in enumerate(heights):
        t_elems.append(cones.TriangularElement(cone, np.array([math.sqrt(h)])))
        xs = _symmetric_grid(x_half * h, xstep1 * h)
        if domain.n == 0:
            for x in xs:
                pts.append(np.array([x, h]))
                leaf_idx.append(k)
        else:
            zs = _symmetric_grid(z_half * math.sqrt(h), zstep1 * math.sqrt(h))
            for zr in zs:
                for zi in zs:
                    phi_ = zr * zr + zi * zi
                    for x in xs:
                        pts.append(np.array([zr, zi, x, phi_ + h]))
                        leaf_idx.append(k)
    pts = np.array(pts)
    lat = Lattice("domain", pts, t_elems, float(delta), 2.0, dict(window),
                  heights=heights, leaf_index=np.array(leaf_idx, dtype=int),
                  domain=domain)
    lat.certificate = certify_lattice_domain(domain, lat, seed=seed + 3,
                                             n_probes=n_probes)
    lat.R = lat.certificate["R"]
    return lat


def _horizontal_step(domain, h, delta):
    """Horizontal spacing at height h giving domain distance 2 delta."""
    p0z = np.array([[1j * h]])
    zz = np.zeros((1, domain.n), dtype=complex)
    step = h * delta
    for _ in range(50):
        d = float(dist_domain_pairs(domain, np.array([[step + 1j * h]]), zz,
                                    p0z, zz)[0])
        step *= 2.0 * delta / d
        if abs(d - 2.0 * delta) < 1e-9 * delta:
            break
    return step


def _fiber_step(domain, h, delta):
    p0z = np.array([[1j * h]])
    zz = np.zeros((1, domain.n), dtype=complex)
    step = math.sqrt(h) * delta
    for _ in range(50):
        zeta = np.zeros((1, domain.n), dtype=complex)
        zeta[0, 0] = step
        d = float(dist_domain_pairs(domain, np.array([[1j * (h + step * step)]]),
                                    zeta, p0z, zz)[0])
        step *= 2.0 * delta / d
        if abs(d - 2.0 * delta) < 1e-9 * delta:
            break
    return step


def _symmetric_grid(half, step):
    n = int(math.floor(half / step))
    return step * np.arange(-n, n + 1)


def lattice_chart_arrays(lat):
    """Domain lattice as (Z (N, m) complex, ZETA (N, n) complex)."""
    domain = lat.domain
    if domain.n == 0:
        Z = (lat.points[:, 0] + 1j * lat.points[:, 1])[:, None]
        ZETA = np.zeros((len(lat.points), 0), dtype=complex)
    else:
        ZETA = (lat.points[:, 0] + 1j * lat.points[:, 1])[:, None]
        Z = (lat.points[:, 2] + 1j * lat.points[:, 3])[:, None]
    return Z, ZETA


def domain_lattice_points(lat):
    Z, ZETA = lattice_chart_arrays(lat)
    return [siegel.SiegelPoint(ZETA[i], Z[i]) for i in range(len(Z))]


def certify_lattice_domain(domain, lat, seed=0, n_probes=400):
    """Certificate for a domain lattice (vectorized closed-form metric)."""
    Z, ZETA = lattice_chart_arrays(lat)
    n = len(Z)
    rng = np.random.default_rng(seed)
    # nearest-neighbour separation via chart pruning
    scale = np.abs(lat.points).mean(axis=0) + 1e-12
    tree = cKDTree(lat.points / scale)
    _, jj = tree.query(lat.points / scale, k=min(6, n))
    ii = np.repeat(np.arange(n), jj.shape[1] - 1)
    kk = jj[:, 1:].ravel()
    dd = dist_domain_pairs(domain, Z[ii], ZETA[ii], Z[kk], ZETA[kk])
    sep = float(dd.min()) if len(dd) else np.inf
    u_lo, u_hi = lat.window["u_range"]
    x_half = lat.window.get("x_half", 6.0)
    z_half = lat.window.get("zeta_half", 2.0)
    hs = np.exp(rng.uniform(u_lo, u_hi, n_probes))
    xs = rng.uniform(-1.0, 1.0, n_probes) * x_half * hs
    if domain.n == 0:
        Zp = (xs + 1j * hs)[:, None]
        Zetap = np.zeros((n_probes, 0), dtype=complex)
    else:
        zr = rng.uniform(-1, 1, n_probes) * z_half * np.sqrt(hs)
        zi = rng.uniform(-1, 1, n_probes) * z_half * np.sqrt(hs)
        Zetap = (zr + 1j * zi)[:, None]
        Zp = (xs + 1j * (hs + zr ** 2 + zi ** 2))[:, None]
    cover = 0.0
    for i in range(n_probes):
        dd = dist_domain_pairs(domain, Z, ZETA,
                               np.tile(Zp[i], (n, 1)), np.tile(Zetap[i], (n, 1)))
        cover = max(cover, float(dd.min()))
    R = cover / lat.delta
    return {"separation": float(sep), "delta": lat.delta,
            "disjoint": bool(sep >= 2.0 * lat.delta * (1.0 - GRAPH_ACCURACY)),
            "covering_radius": float(cover), "R": float(R), "n_points": n}


def domain_lattice_overlap(domain, lat):
    """Max number of R delta-balls meeting a given one."""
    Z, ZETA = lattice_chart_arrays(lat)
    n = len(Z)
    Rd = max(lat.R, 1.0) * lat.delta
    counts = np.zeros(n, dtype=int)
    scale = np.abs(lat.points).mean(axis=0) + 1e-12
    tree = cKDTree(lat.points / scale)
    # chart neighbours generously beyond the metric radius
    _, jj = tree.query(lat.points / scale, k=min(80, n))
    for i in range(n):
        cand = jj[i][jj[i] != i]
        dd = dist_domain_pairs(domain, Z[cand], ZETA[cand],
                               np.tile(Z[i], (len(cand), 1)),
                               np.tile(ZETA[i], (len(cand), 1)))
        counts[i] = int((dd < 2.0 * Rd).sum())
    return int(counts.max()) + 1


# ---------------------------------------------------------------------------
# quasi-constancy estimators
# ---------------------------------------------------------------------------

def koranyi_estimate(domain, s, delta_max, n_pairs=200, seed=0, base_height=1.0):
    """Empirical quasi-constancy of kernel ratios on metric balls.

    Samples triples (base q; p', p'' with d(p', p'') <= delta_max) and
    returns the empirical supremum of |ratio - 1| / d together with a
    through-origin slope fit of |ratio - 1| against d.
    """
    if delta_max > 1.0:
        raise ValueError("delta_max must be <= 1")
    rng = np.random.default_rng(seed)
    cone = domain.cone
    sup_ratio = 0.0
    ds, devs = [], []
    for _ in range(n_pairs):
        hq = base_height * math.exp(rng.uniform(-1.0, 1.0))
        xq = rng.uniform(-2.0, 2.0) * hq
        if domain.n:
            zq = (rng.normal(size=domain.n) + 1j * rng.normal(size=domain.n)) \
                * 0.4 * math.sqrt(hq)
            q = siegel.SiegelPoint.make(
                domain, zeta=zq, z=[xq + 1j * (hq + float(np.vdot(zq, zq).real))])
        else:
            q = siegel.SiegelPoint.make(domain, z=[xq + 1j * hq])
        hp = base_height * math.exp(rng.uniform(-0.7, 0.7))
        xp = rng.uniform(-1.5, 1.5) * hp
        if domain.n:
            zp = (rng.normal(size=domain.n) + 1j * rng.normal(size=domain.n)) \
                * 0.3 * math.sqrt(hp)
            p1 = siegel.SiegelPoint.make(
                domain, zeta=zp, z=[xp + 1j * (hp + float(np.vdot(zp, zp).real))])
        else:
            p1 = siegel.SiegelPoint.make(domain, z=[xp + 1j * hp])
        frac = rng.uniform(0.05, 1.0) * delta_max
        direction = rng.normal(size=2 * domain.n + 2 * cone.ambient_dim)
        direction /= np.linalg.norm(direction)
        x1 = _domain_chart(domain, p1)
        step = frac * hp
        p2 = None
        for _ in range(40):
            cand = _chart_point(domain, x1 + step * direction)
            if not siegel.in_domain(domain, cand):
                step *= 0.5
                continue
            d = dist_domain(domain, p1, cand)
            if d < 1e-12:
                break
            step *= frac / d
            p2 = cand
            if abs(d - frac) < 0.02 * frac:
                break
        if p2 is None or not siegel.in_domain(domain, p2):
            continue
        d = dist_domain(domain, p1, p2)
        if not (0 < d <= delta_max * 1.1):
            continue
        k1 = siegel.kernel_B(domain, s, q, p1)
        k2 = siegel.kernel_B(domain, s, q, p2)
        dev = abs(k1 / k2 - 1.0)
        sup_ratio = max(sup_ratio, dev / d)
        ds.append(d)
        devs.append(dev)
    ds = np.array(ds)
    devs = np.array(devs)
    slope = float((ds * devs).sum() / (ds * ds).sum()) if len(ds) else 0.0
    return {"sup_ratio_over_d": float(sup_ratio), "slope_fit": slope,
            "n": int(len(ds)), "d": ds, "dev": devs}


def pairing_comparability(cone, R, n_pairs=300, seed=0):
    """Empirical constant C with 1/C <= <lam, h>/<lam', h'> <= C over
    metric-R-close pairs on both sides."""
    if R == 0:
        return 1.0
    rng = np.random.default_rng(seed)
    best = 1.0
    for _ in range(n_pairs):
        tc = np.exp(rng.normal(size=cone.ambient_dim) * 0.5)
        tc[cone.rank:] = rng.normal(size=cone.npairs) * 0.5
        h = cones.recompose(cones.TriangularElement(cone, tc))
        hp = _step_in_ball(cone, h, R, rng)
        tc2 = np.exp(rng.normal(size=cone.ambient_dim) * 0.5)
        tc2[cone.rank:] = rng.normal(size=cone.npairs) * 0.5
        m = cones.coords_to_matrix(cone, tc2, symmetric=False)
        lam = cones.matrix_to_coords(cone, m.T @ m)
        lamp = _dual_step_in_ball(cone, lam, R, rng)
        ratio = float(cones.pairing(cone, lam, h) / cones.pairing(cone, lamp, hp))
        best = max(best, ratio, 1.0 / ratio)
    return best


def _step_in_ball(cone, h, R, rng):
    quadform = lambda P, U: cone_quadform(cone, np.zeros(cone.rank), P, U)
    for _ in range(40):
        u = rng.normal(size=cone.ambient_dim)
        q = float(quadform(h[None, :], u[None, :])[0])
        u *= rng.uniform(0.2, 0.95) * R / math.sqrt(q)
        cand = h + u
        if not cones.in_cone(cone, cand):
            continue
        if float(segment_length_batch(quadform, h[None, :], cand[None, :])[0]) <= R:
            return cand
    return h.copy()


def _dual_step_in_ball(cone, lam, R, rng):
    for _ in range(40):
        u = rng.normal(size=cone.ambient_dim)
        u *= 0.3 * R * np.linalg.norm(lam) / np.linalg.norm(u)
        cand = lam + u
        if cones.in_dual_cone(cone, cand):
            try:
                if dist_dual_cone(cone, lam, cand) <= R:
                    return cand
            except NotInCone:
                continue
    return lam.copy()


def lattice_to_json(lat):
    doc = {"kind": lat.kind, "delta": lat.delta, "R": lat.R,
           "window": lat.window, "points": lat.points.tolist(),
           "certificate": lat.certificate}
    if lat.kind == "domain":
        doc["heights"] = lat.heights.tolist()
        doc["leaf_index"] = lat.leaf_index.tolist()
    else:
        doc["t_elems"] = [np.asarray(t).tolist() for t in lat.t_elems]
    return doc
