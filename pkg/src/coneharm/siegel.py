"""Siegel domains of type II over the built-in cones.

Two families are instantiated: tube domains (trivial complex fiber) over
any built-in cone, and ball-type domains (rank-one cone, fiber C^n with
the standard hermitian form).  Points carry a fiber component zeta in
C^n and a base component z in complexified cone coordinates.
"""

from dataclasses import dataclass, field

import numpy as np

from . import cones, special_functions as sf
from .errors import NotInDomain, NotInTube


@dataclass(frozen=True)
class SiegelDomainDescriptor:
    cone: cones.ConeDescriptor
    n: int
    kind: str  # "tube" | "ball"
    b_vec: np.ndarray = field(repr=False)
    pf_e: float = 1.0  # |Pf(e')| for the standard hermitian form

    @property
    def ambient_dim(self):
        return self.cone.ambient_dim

    def __hash__(self):
        return hash((self.kind, self.n, self.cone))


def tube_domain(cone):
    """Tube domain F + i Omega (empty fiber, b = 0)."""
    return SiegelDomainDescriptor(cone, 0, "tube", np.zeros(cone.rank))


def ball_domain(n=1):
    """Rank-one Siegel domain with fiber C^n, Phi(z, w) = z . conj(w)."""
    if not (1 <= n <= 4):
        raise ValueError("ball-type fiber dimension limited to 1..4")
    cone = cones.full_cone(1)
    return SiegelDomainDescriptor(cone, n, "ball", np.array([-float(n)]))


def upper_half_plane():
    return tube_domain(cones.full_cone(1))


@dataclass(frozen=True)
class SiegelPoint:
    zeta: np.ndarray  # (n,) complex
    z: np.ndarray     # (m,) complex cone coordinates

    @staticmethod
    def make(domain, zeta=None, z=None):
        n, m = domain.n, domain.cone.ambient_dim
        zeta = np.zeros(n, dtype=complex) if zeta is None else \
            np.asarray(zeta, dtype=complex).reshape(n)
        z = np.asarray(z, dtype=complex).reshape(m)
        return SiegelPoint(zeta, z)


@dataclass(frozen=True)
class BoundaryPoint:
    zeta: np.ndarray  # (n,) complex
    x: np.ndarray     # (m,) real cone coordinates

    @staticmethod
    def make(domain, zeta=None, x=None):
        n, m = domain.n, domain.cone.ambient_dim
        zeta = np.zeros(n, dtype=complex) if zeta is None else \
            np.asarray(zeta, dtype=complex).reshape(n)
        x = np.zeros(m) if x is None else np.asarray(x, dtype=float).reshape(m)
        return BoundaryPoint(zeta, x)


def phi(domain, z1, z2):
    """The hermitian map Phi(zeta, zeta') in cone coordinates (complex)."""
    out = np.zeros(domain.cone.ambient_dim, dtype=complex)
    if domain.n:
        out[0] = np.vdot(np.asarray(z2, dtype=complex),
                         np.asarray(z1, dtype=complex))  # linear in z1
    return out


def rho(domain, p):
    """Base-height map Im z - Phi(zeta); membership decided by the cone."""
    return np.asarray(p.z).imag - phi(domain, p.zeta, p.zeta).real


def in_domain(domain, p):
    return cones.in_cone(domain.cone, rho(domain, p))


def group_law(domain, g1, g2):
    """Product on the Shilov boundary group N."""
    z1, z2 = np.asarray(g1.zeta), np.asarray(g2.zeta)
    tw = 2.0 * phi(domain, z1, z2).imag
    return BoundaryPoint(z1 + z2, np.asarray(g1.x) + np.asarray(g2.x) + tw)


def group_inverse(domain, g):
    return BoundaryPoint(-np.asarray(g.zeta), -np.asarray(g.x))


def boundary_act(domain, g, p):
    """Affine action of a boundary element on a domain point."""
    gz = np.asarray(g.x, dtype=complex) + 1j * phi(domain, g.zeta, g.zeta)
    z = gz + np.asarray(p.z) + 2j * phi(domain, p.zeta, g.zeta)
    return SiegelPoint(np.asarray(g.zeta) + np.asarray(p.zeta), z)


def dilate(domain, t, p):
    """Action of a triangular element (with the fiber scaling for balls)."""
    tm = t.matrix
    zm = cones.coords_to_matrix(domain.cone, np.asarray(p.z))
    z = cones.matrix_to_coords(domain.cone, (tm @ zm @ tm.T).real) + \
        1j * cones.matrix_to_coords(domain.cone, (tm @ zm @ tm.T).imag)
    zeta = p.zeta * t.diag[0] if domain.n else p.zeta
    return SiegelPoint(zeta, z)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def kernel_argument(domain, base, p):
    """(z - conj(z'))/2i - Phi(zeta, zeta'), a tube point when p or base is interior."""
    return (np.asarray(p.z) - np.conj(np.asarray(base.z))) / 2j - \
        phi(domain, p.zeta, base.zeta)


def kernel_B(domain, s, base, p):
    """Box kernel B^s_base(p): Delta^s of the shifted argument."""
    w = kernel_argument(domain, base, p)
    val = kernel_B_from_args(domain, s, w[None, :])
    return complex(val[0])


def kernel_B_from_args(domain, s, w):
    """Batched Delta^s over tube arguments w (N, m)."""
    cone = domain.cone
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    if cone.rank == 1:
        # single pivot: the argument itself stays in the right half-plane
        if np.any(w.real <= 0):
            raise NotInTube("kernel argument left the tube")
        return np.exp(np.log(w[:, 0]) * complex(np.asarray(s, dtype=complex).reshape(-1)[0]))
    return cones.power_complex_batch(cone, np.asarray(s, dtype=complex).reshape(-1),
                                     w.real, w.imag)


def bergman_kernel(domain, s, p, q):
    """Weighted Bergman kernel K_s(p, q); hermitian in (p, q)."""
    const = sf.named_constants(domain, s)["bergman_kernel"]
    expo = domain.b_vec + domain.cone.d_vec - 2.0 * np.asarray(s, dtype=float).reshape(-1)
    return const * kernel_B(domain, expo, q, p)


def szego_kernel(domain, p, q):
    """Cauchy-Szego kernel in closed form."""
    cone = domain.cone
    bd = domain.b_vec + cone.d_vec
    const = sf.named_constants(domain, np.ones(cone.rank))["szego"]
    return const * kernel_B(domain, bd, q, p)


# ---------------------------------------------------------------------------
# invariant measure and the Bergman metric
# ---------------------------------------------------------------------------

def nu_D_density(domain, p):
    """Lebesgue density Delta^(b+2d)(rho(p)) of the invariant measure."""
    h = rho(domain, p)
    if not cones.in_cone(domain.cone, h):
        raise NotInDomain("point is outside the domain")
    return float(cones.power_function(domain.cone, domain.b_vec + 2 * domain.cone.d_vec, h))


def log_power_gradient(cone, s, h, eps=1e-100):
    """Gradient of log Delta^s at h by complex-step differentiation."""
    m = cone.ambient_dim
    s = np.asarray(s, dtype=float)
    wre = np.tile(np.asarray(h, dtype=float), (m, 1))
    wim = eps * np.eye(m)
    D, _ = cones._kernels.ldl_batch(wre + 1j * wim, cone._pd)
    return (np.log(D).imag @ cones.slot_weights(cone, s)) / eps


def log_power_hessian(cone, s, h, step=None):
    """Hessian of log Delta^s at h: central differences of the exact gradient."""
    h = np.asarray(h, dtype=float)
    m = cone.ambient_dim
    if step is None:
        step = 1e-5 * max(1.0, float(np.abs(h).max()))
    H = np.empty((m, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = step
        H[i] = (log_power_gradient(cone, s, h + e) -
                log_power_gradient(cone, s, h - e)) / (2 * step)
    return 0.5 * (H + H.T)


def metric_tensor(domain, p):
    """Bergman-metric hermitian form at p, as an (n+m) x (n+m) matrix.

    Basis order: the n fiber directions, then the m base coordinates.
    The Riemannian metric is the real part of this form.
    """
    cone = domain.cone
    h = rho(domain, p)
    if not cones.in_cone(cone, h):
        raise NotInDomain("point is outside the domain")
    expo = domain.b_vec + 2 * cone.d_vec
    grad = log_power_gradient(cone, expo, h)
    hess = log_power_hessian(cone, expo, h)
    n, m = domain.n, cone.ambient_dim
    dim = n + m
    # X(v, w) = -(i/2) w - Phi(v, zeta) per tangent direction
    X = np.zeros((dim, m), dtype=complex)
    for a in range(n):
        e = np.zeros(n, dtype=complex)
        e[a] = 1.0
        X[a] = -phi(domain, e, p.zeta)
    for c in range(m):
        X[n + c, c] = -0.5j
    K = np.empty((dim, dim), dtype=complex)
    for a in range(dim):
        for b in range(dim):
            K[a, b] = X[a] @ hess @ np.conj(X[b])
            if a < n and b < n:
                ea = np.zeros(n, dtype=complex)
                eb = np.zeros(n, dtype=complex)
                ea[a] = 1.0
                eb[b] = 1.0
                K[a, b] -= grad.astype(complex) @ phi(domain, ea, eb)
    return K


def tangent_norm_sq(domain, p, v, w, grad=None, hess=None):
    """Riemannian |(v, w)|^2 at p: the real part of the hermitian form.

    v: fiber direction (n,) complex; w: base direction (m,) complex.
    Passing precomputed grad/hess of log Delta^(b+2d) at rho(p) avoids
    repeated differentiation in bulk evaluations.
    """
    cone = domain.cone
    expo = domain.b_vec + 2 * cone.d_vec
    h = rho(domain, p)
    if grad is None:
        grad = log_power_gradient(cone, expo, h)
    if hess is None:
        hess = log_power_hessian(cone, expo, h)
    X = -0.5j * np.asarray(w, dtype=complex) - phi(domain, v, p.zeta)
    out = X.real @ hess @ X.real + X.imag @ hess @ X.imag
    if domain.n:
        out -= float(grad @ phi(domain, v, v).real)
    return float(out)


def domain_to_json(domain):
    return {"kind": domain.kind, "cone": cones.cone_to_json(domain.cone),
            "n": int(domain.n)}


def domain_from_json(doc):
    if doc["kind"] == "tube":
        return tube_domain(cones.cone_from_json(doc["cone"]))
    if doc["kind"] == "ball":
        return ball_domain(int(doc["n"]))
    raise ValueError(f"unknown domain kind {doc['kind']!r}")


def point_to_list(p):
    return {"zeta": [x for c in np.asarray(p.zeta) for x in (c.real, c.imag)],
            "z": [x for c in np.asarray(p.z) for x in (c.real, c.imag)]}
