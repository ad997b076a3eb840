"""Boundary-element spaces and matrices for the single-layer flow operator.

Discretizes the weakly singular boundary operator

    (V(s) lam)(x) = int_Gamma E_u(x - y; s) lam(y) dGamma(y),   x on Gamma,

with vector-valued piecewise-polynomial densities on a uniform element
mesh, either by a Galerkin method (double element integrals) or by
reduced integration (midpoint test rule, a Nystrom-type method).  Also
builds the off-boundary evaluation matrices of the velocity and pressure
potentials and the constrained variants of the boundary system.

Quadrature design
-----------------
The planar kernel profiles factor as ``A_2(z) = -log(z) P(z) + smooth``
and ``B_2(z) = log(z) R(z) + smooth`` with ``z = sqrt(s) |x - y|``, so
every singular integral is reduced to a one-dimensional coordinate ``u``
along which the distance vanishes linearly.  On a split interval
``(0, u0)`` the integrand is separated against ``-log(u / u0)`` and
integrated by a log-weighted Gauss rule, with the smooth remainder
(which carries the ``log(u0 sqrt(s) ...)`` pieces) handled by an
ordinary Gauss rule; on ``(u0, 1)`` geometrically graded panels are
used.  The split radius ``u0`` keeps ``|z|`` below ``Z_SPLIT_CAP`` so
the companion series of ``P`` and ``R`` stay accurate.  Element pairs
are classified as

* self (one element twice): strip coordinates ``u = xi - eta``,
* adjacent (shared vertex): Duffy triangle coordinates, radial split,
* separated: tensor Gauss rules, order chosen by the distance in units
  of the element length.

All node sets depend on ``s`` only through dyadically quantized split
radii, so the expensive point-cloud geometry is cached and shared by
the many frequencies of a convolution-quadrature contour.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._quadrature import gauss_legendre_01, graded_panels, log_gauss_01
from .boundary_geometry import BoundaryMesh, moment_vectors
from .laplace_kernels import ComplexFrequency, ProblemConfig, _ab2, _pr2

#: largest |z| = |sqrt(s)| r admitted inside the logarithmic split; must stay
#: below the companion-series validity radius of the kernel profiles.
Z_SPLIT_CAP = 6.0

#: maximum span of z across one direct quadrature panel; panels are split
#: until the kernel variation per panel is resolved by the panel rule.
MAX_PANEL_Z_SPAN = 3.0

#: rule orders for the self-element strip scheme
SELF_LOG_ORDER = 16
SELF_SMOOTH_ORDER = 12
SELF_INNER_ORDER = 12

#: rule orders for the shared-vertex Duffy scheme
VERTEX_LOG_ORDER = 16
VERTEX_SMOOTH_ORDER = 12
VERTEX_ANGULAR_ORDER = 12

#: Gauss order on each graded direct panel
DIRECT_PANEL_ORDER = 8

#: reduced-integration (midpoint test rule) inner quadrature
DIAG_LOG_ORDER = 16
DIAG_SMOOTH_ORDER = 16
NEIGHBOR_PANEL_ORDER = 12
NEIGHBOR_BREAKS = (0.0, 0.0625, 0.125, 0.25, 0.5, 1.0)

#: separated-pair classes: (lower distance bound in element lengths,
#: Gauss order per direction, panels per direction)
SEPARATED_CLASSES = ((4.0, 6, 1), (2.0, 8, 1), (1.0, 12, 1), (0.0, 8, 2))

#: observation-point classes for the potential matrices
POTENTIAL_CLASSES = ((4.0, 6, 1), (2.0, 8, 1), (1.0, 12, 1), (0.0, 12, 4))

_KIND_BASIS = {"P0": 1, "P1_discontinuous": 2}


class ConstraintMode(enum.Enum):
    """How the one-dimensional gauge kernel of the operator is removed.

    ``none`` leaves the plain matrix.  ``multiplier_m`` appends one
    scalar multiplier enforcing ``<lam, m> = 0`` with ``m(x) = x``.
    ``multiplier_rigid`` appends two multipliers for ``<lam, e_1> =
    <lam, e_2> = 0`` (this does not remove the span of the normal field
    and is provided for structural comparison).  ``augmented_Vtilde``
    adds the rank-one term ``<., m> m`` to the operator instead of
    bordering the system.
    """

    none = "none"
    multiplier_m = "multiplier_m"
    multiplier_rigid = "multiplier_rigid"
    augmented_Vtilde = "augmented_Vtilde"


@dataclass(frozen=True)
class DensitySpace:
    """Vector-valued discontinuous piecewise-polynomial space on a mesh.

    Degrees of freedom are element-major: ``dof = 2 j + c`` for P0 and
    ``dof = 4 j + 2 a + c`` for P1_discontinuous, with element ``j``,
    local scalar function ``a`` (``1 - xi`` then ``xi``), Cartesian
    component ``c``.
    """

    mesh: BoundaryMesh
    kind: str
    dof_count: int
    dof_element: np.ndarray = field(repr=False)
    dof_local: np.ndarray = field(repr=False)
    dof_component: np.ndarray = field(repr=False)

    @property
    def n_basis(self) -> int:
        return _KIND_BASIS[self.kind]


def build_space(mesh: BoundaryMesh, kind: str) -> DensitySpace:
    """Create the density space of the given kind on ``mesh``."""
    if kind not in _KIND_BASIS:
        raise ValueError(f"unknown space kind {kind!r}; "
                         f"expected one of {sorted(_KIND_BASIS)}")
    nb = _KIND_BASIS[kind]
    n = mesh.n_elements
    dof = np.arange(2 * nb * n)
    return DensitySpace(mesh=mesh, kind=kind, dof_count=2 * nb * n,
                        dof_element=dof // (2 * nb),
                        dof_local=(dof // 2) % nb,
                        dof_component=dof % 2)


@dataclass(frozen=True)
class TransferMatrix:
    """A frequency-domain boundary system, possibly bordered by multipliers.

    ``entries`` is square of size ``dof_count + n_multipliers``; the
    density block comes first, multiplier rows and columns last.
    """

    s: ComplexFrequency
    entries: np.ndarray = field(repr=False)
    n_multipliers: int = 0

    def __post_init__(self) -> None:
        e = self.entries
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"entries must be square, got shape {e.shape}")


def _basis_values(n_basis: int, xi: np.ndarray) -> np.ndarray:
    """Local scalar basis functions sampled at ``xi``, shape (n_basis, ...)."""
    if n_basis == 1:
        return np.ones((1,) + xi.shape)
    return np.stack([1.0 - xi, xi])


def _element_points(mesh: BoundaryMesh, elems, xi):
    """Positions and parametric speeds for element-local coordinates.

    ``elems`` and ``xi`` broadcast; returns ``pos`` with a trailing
    length-2 axis and ``speed = |x'(xi)|`` (derivative with respect to
    the local coordinate).
    """
    th0 = mesh.param_endpoints[elems, 0]
    dth = mesh.param_endpoints[elems, 1] - th0
    theta = th0 + dth * xi
    pos = mesh.curve.point(theta)
    speed = np.linalg.norm(mesh.curve.velocity(theta), axis=-1) * dth
    return pos, speed


def _quantize_down(x: float) -> float:
    """Largest power of two that is <= x, clipped to [2^-16, 1]."""
    if x >= 1.0:
        return 1.0
    k = int(math.ceil(-math.log2(max(x, 2.0 ** -16))))
    return 2.0 ** -min(k, 16)


def _quantize_up(x: float) -> float:
    """Smallest power of two that is >= max(x, 1)."""
    if x <= 1.0:
        return 1.0
    return 2.0 ** int(math.ceil(math.log2(x)))


def _split_channels(cap: float, z_scale: float, n_log: int, n_smooth: int):
    """Quadrature channels on (0, 1) for a log-singular radial integrand.

    Returns ``(u, w, alpha, beta)``.  A kernel profile value at a node is
    reconstructed as ``alpha * A + beta * P`` (and ``alpha * B - beta *
    R`` for the transverse part), which realizes the identity
    ``A(z) = -log(u / cap) P(z) + [A(z) + log(u / cap) P(z)]`` with the
    first factor integrated by the log-weighted rule and the bracket,
    smooth in ``u``, by a Gauss rule.  Above ``cap``, graded direct
    panels evaluate the profiles themselves (``alpha = 1``); each panel
    is subdivided until its z-span ``z_scale * width`` is resolvable.
    """
    us, ws, als, bes = [], [], [], []
    tl, wl = log_gauss_01(n_log)
    us.append(cap * tl)
    ws.append(cap * wl)
    als.append(np.zeros(n_log))
    bes.append(np.ones(n_log))
    tg, wg = gauss_legendre_01(n_smooth)
    us.append(cap * tg)
    ws.append(cap * wg)
    als.append(np.ones(n_smooth))
    bes.append(np.log(tg))
    if cap < 1.0:
        xd, wd = gauss_legendre_01(DIRECT_PANEL_ORDER)
        breaks = graded_panels(cap, 1.0)
        for a, b in zip(breaks[:-1], breaks[1:]):
            n_sub = max(1, int(math.ceil((b - a) * z_scale / MAX_PANEL_Z_SPAN)))
            edges = np.linspace(a, b, n_sub + 1)
            for lo, hi in zip(edges[:-1], edges[1:]):
                us.append(lo + (hi - lo) * xd)
                ws.append((hi - lo) * wd)
                als.append(np.ones(xd.size))
                bes.append(np.zeros(xd.size))
    return (np.concatenate(us), np.concatenate(ws),
            np.concatenate(als), np.concatenate(bes))


@dataclass(frozen=True)
class _PairCloud:
    """Precomputed quadrature geometry for one class of element pairs.

    Per-point arrays are shaped ``(n_pairs, n_points)``; ``alpha`` and
    ``beta`` are shared across pairs (the split pattern depends only on
    the in-pair node, not on the pair).  ``wab`` stacks the basis-pair
    weights, ``rr`` the outer-product components (xx, xy, yy) of the
    unit separation vector.
    """

    pairs: np.ndarray
    r: np.ndarray
    rr: np.ndarray
    wab: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


def _finish_cloud(pairs, diff, r_weights, fx, fy, sp_x, sp_y, alpha, beta,
                  n_basis):
    """Assemble a _PairCloud from raw per-point geometry."""
    r = np.linalg.norm(diff, axis=-1)
    rhat = diff / r[..., None]
    rr = np.stack([rhat[..., 0] ** 2, rhat[..., 0] * rhat[..., 1],
                   rhat[..., 1] ** 2], axis=-1)
    base = r_weights * sp_x * sp_y
    wab = np.stack([base * fx[a] * fy[b]
                    for a in range(n_basis) for b in range(n_basis)])
    return _PairCloud(pairs=np.asarray(pairs), r=r, rr=rr, wab=wab,
                      alpha=np.asarray(alpha), beta=np.asarray(beta))


def _build_self_cloud(space: DensitySpace, cap: float, z_scale: float):
    """Strip-coordinate cloud for all diagonal (self) element pairs.

    With ``u = xi - eta`` the double integral over the reference square
    becomes two congruent strips ``v in (0, 1 - u)``, ``u in (0, 1)``;
    the distance vanishes linearly in ``u``, which carries the split.
    """
    mesh = space.mesh
    n = mesh.n_elements
    u, wu, al, be = _split_channels(cap, z_scale, SELF_LOG_ORDER,
                                    SELF_SMOOTH_ORDER)
    t, wt = gauss_legendre_01(SELF_INNER_ORDER)
    uu = u[:, None]
    eta_plus = (1.0 - uu) * t[None, :]
    xi_plus = eta_plus + uu
    w2 = (wu[:, None] * wt[None, :] * (1.0 - uu)).ravel()
    xi = np.concatenate([xi_plus.ravel(), eta_plus.ravel()])
    eta = np.concatenate([eta_plus.ravel(), xi_plus.ravel()])
    w_pt = np.concatenate([w2, w2])
    a2 = np.repeat(al, t.size)
    b2 = np.repeat(be, t.size)
    alpha = np.concatenate([a2, a2])
    beta = np.concatenate([b2, b2])
    elems = np.arange(n)[:, None]
    pos_x, sp_x = _element_points(mesh, elems, xi[None, :])
    pos_y, sp_y = _element_points(mesh, elems, eta[None, :])
    fb_x = _basis_values(space.n_basis, xi)
    fb_y = _basis_values(space.n_basis, eta)
    pairs = np.stack([np.arange(n), np.arange(n)], axis=1)
    return _finish_cloud(pairs, pos_x - pos_y, w_pt[None, :], fb_x, fb_y,
                         sp_x, sp_y, alpha, beta, space.n_basis)


def _build_vertex_cloud(space: DensitySpace, cap: float, z_scale: float):
    """Duffy-coordinate cloud for all ordered adjacent pairs (i, i+1).

    The shared vertex sits at the end of element i and the start of
    element i+1.  In corner coordinates ``(da, db)`` measured from the
    vertex, the unit square splits into two triangles mapped by
    ``(da, db) = p (1, q)`` and ``p (q, 1)`` with Jacobian ``p``; the
    distance vanishes linearly in ``p`` for straight, cornered, and
    curved adjacent pairs alike.
    """
    mesh = space.mesh
    n = mesh.n_elements
    p, wp, al, be = _split_channels(cap, z_scale, VERTEX_LOG_ORDER,
                                    VERTEX_SMOOTH_ORDER)
    q, wq = gauss_legendre_01(VERTEX_ANGULAR_ORDER)
    pp = p[:, None]
    da1, db1 = np.broadcast_arrays(pp, pp * q[None, :])
    da2, db2 = db1, da1
    w2 = (wp[:, None] * wq[None, :] * pp).ravel()
    da = np.concatenate([da1.ravel(), da2.ravel()])
    db = np.concatenate([db1.ravel(), db2.ravel()])
    w_pt = np.concatenate([w2, w2])
    a2 = np.repeat(al, q.size)
    b2 = np.repeat(be, q.size)
    alpha = np.concatenate([a2, a2])
    beta = np.concatenate([b2, b2])
    xi = 1.0 - da
    eta = db
    left = np.arange(n)[:, None]
    right = (np.arange(n)[:, None] + 1) % n
    pos_x, sp_x = _element_points(mesh, left, xi[None, :])
    pos_y, sp_y = _element_points(mesh, right, eta[None, :])
    fb_x = _basis_values(space.n_basis, xi)
    fb_y = _basis_values(space.n_basis, eta)
    pairs = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    return _finish_cloud(pairs, pos_x - pos_y, w_pt[None, :], fb_x, fb_y,
                         sp_x, sp_y, alpha, beta, space.n_basis)


def _composite_rule(order: int, n_panels: int):
    """Composite Gauss rule on (0, 1) with equal panels."""
    x, w = gauss_legendre_01(order)
    xs = ((np.arange(n_panels)[:, None] + x[None, :]) / n_panels).ravel()
    ws = np.tile(w / n_panels, n_panels)
    return xs, ws


def _separated_pairs(mesh: BoundaryMesh):
    """Unordered non-touching pairs (i < j) with their distance class."""
    n = mesh.n_elements
    i, j = np.triu_indices(n, k=1)
    adjacent = (j - i == 1) | ((i == 0) & (j == n - 1))
    i, j = i[~adjacent], j[~adjacent]
    dist = np.linalg.norm(mesh.midpoints[i] - mesh.midpoints[j], axis=1)
    scale = np.maximum(mesh.arclengths[i], mesh.arclengths[j])
    return i, j, dist / scale


def _build_separated_clouds(space: DensitySpace):
    """Tensor-rule clouds for separated pairs, one per distance class."""
    mesh = space.mesh
    i, j, ratio = _separated_pairs(mesh)
    clouds = []
    for lower, order, n_panels in SEPARATED_CLASSES:
        upper = np.inf if lower == SEPARATED_CLASSES[0][0] else prev_lower
        sel = (ratio >= lower) & (ratio < upper)
        prev_lower = lower
        if not sel.any():
            continue
        ii, jj = i[sel], j[sel]
        x, w = _composite_rule(order, n_panels)
        q = x.size
        pos_x, sp_x = _element_points(mesh, ii[:, None], x[None, :])
        pos_y, sp_y = _element_points(mesh, jj[:, None], x[None, :])
        fb = _basis_values(space.n_basis, x)
        diff = pos_x[:, :, None, :] - pos_y[:, None, :, :]
        npair = ii.size
        diff = diff.reshape(npair, q * q, 2)
        wxy = (w[:, None] * w[None, :]).reshape(q * q)
        fx = np.stack([np.repeat(fb[a], q) for a in range(space.n_basis)])
        fy = np.stack([np.tile(fb[a], q) for a in range(space.n_basis)])
        spx = np.repeat(sp_x, q, axis=1)
        spy = np.tile(sp_y, (1, q))
        clouds.append(_finish_cloud(np.stack([ii, jj], axis=1), diff,
                                    wxy[None, :], fx, fy, spx, spy,
                                    np.ones(q * q), np.zeros(q * q),
                                    space.n_basis))
    return clouds


#: cache of pair clouds keyed by (curve, N, kind, label, cap, z-span); the
#: dyadic quantization of the split caps keeps the key set small across a
#: convolution-quadrature contour.
_GEOMETRY_CACHE: dict = {}
_CACHE_LIMIT = 24


def _cached(key, builder):
    if key not in _GEOMETRY_CACHE:
        while len(_GEOMETRY_CACHE) >= _CACHE_LIMIT:
            _GEOMETRY_CACHE.pop(next(iter(_GEOMETRY_CACHE)))
        _GEOMETRY_CACHE[key] = builder()
    return _GEOMETRY_CACHE[key]


def _space_key(space: DensitySpace):
    return (space.mesh.curve, space.mesh.n_elements, space.kind)


def _channel_values(z, alpha, beta):
    """Per-point kernel profile values, combined per the channel weights.

    Returns ``val_I = alpha A_2 + beta P`` and ``val_T = alpha B_2 -
    beta R`` on an array ``z`` of shape (n_pairs, n_points), with the
    channel coefficients shared along the pair axis.
    """
    val_i = np.zeros(z.shape, dtype=complex)
    val_t = np.zeros(z.shape, dtype=complex)
    m_a = alpha != 0.0
    if m_a.any():
        a2, b2 = _ab2(z[:, m_a])
        val_i[:, m_a] = alpha[m_a] * a2
        val_t[:, m_a] = alpha[m_a] * b2
    m_b = beta != 0.0
    if m_b.any():
        p, r = _pr2(z[:, m_b])
        val_i[:, m_b] += beta[m_b] * p
        val_t[:, m_b] -= beta[m_b] * r
    return val_i, val_t


def _accumulate_blocks(V, cloud: _PairCloud, sqrt_s, pref, n_basis):
    """Add a cloud's 2x2 dof blocks into the matrix ``V`` (no mirroring)."""
    z = sqrt_s * cloud.r
    val_i, val_t = _channel_values(z, cloud.alpha, cloud.beta)
    nb2 = 2 * n_basis
    rows0 = nb2 * cloud.pairs[:, 0]
    cols0 = nb2 * cloud.pairs[:, 1]
    for a in range(n_basis):
        for b in range(n_basis):
            w = cloud.wab[a * n_basis + b]
            s_i = np.einsum("np,np->n", w, val_i)
            s_xx = np.einsum("np,np,np->n", w, cloud.rr[:, :, 0], val_t)
            s_xy = np.einsum("np,np,np->n", w, cloud.rr[:, :, 1], val_t)
            s_yy = np.einsum("np,np,np->n", w, cloud.rr[:, :, 2], val_t)
            rows = rows0 + 2 * a
            cols = cols0 + 2 * b
            V[rows, cols] += pref * (s_i + s_xx)
            V[rows, cols + 1] += pref * s_xy
            V[rows + 1, cols] += pref * s_xy
            V[rows + 1, cols + 1] += pref * (s_i + s_yy)


def _require_planar(cfg: ProblemConfig) -> None:
    if cfg.dimension != 2:
        raise NotImplementedError("matrix assembly is implemented for the "
                                  "planar problem only")


def _galerkin_matrix(space: DensitySpace, freq: ComplexFrequency,
                     cfg: ProblemConfig) -> np.ndarray:
    """Plain Galerkin matrix of the single-layer operator (no border)."""
    _require_planar(cfg)
    mesh = space.mesh
    s_abs = abs(freq.sqrt_s)
    l_max = float(mesh.arclengths.max())
    cap_u = _quantize_down(min(1.0, Z_SPLIT_CAP / (s_abs * l_max)))
    z_u = _quantize_up(s_abs * l_max) if cap_u < 1.0 else 1.0
    cap_p = _quantize_down(min(1.0, Z_SPLIT_CAP / (2.0 * s_abs * l_max)))
    z_p = _quantize_up(2.0 * s_abs * l_max) if cap_p < 1.0 else 1.0
    key = _space_key(space)
    self_cloud = _cached(key + ("self", cap_u, z_u),
                         lambda: _build_self_cloud(space, cap_u, z_u))
    vertex_cloud = _cached(key + ("vertex", cap_p, z_p),
                           lambda: _build_vertex_cloud(space, cap_p, z_p))
    separated = _cached(key + ("separated",),
                        lambda: _build_separated_clouds(space))
    ndof = space.dof_count
    pref = cfg.kernel_prefactor
    v_diag = np.zeros((ndof, ndof), dtype=complex)
    v_off = np.zeros((ndof, ndof), dtype=complex)
    _accumulate_blocks(v_diag, self_cloud, freq.sqrt_s, pref, space.n_basis)
    _accumulate_blocks(v_off, vertex_cloud, freq.sqrt_s, pref, space.n_basis)
    for cloud in separated:
        _accumulate_blocks(v_off, cloud, freq.sqrt_s, pref, space.n_basis)
    return v_diag + v_off + v_off.T


def _check_finite(V: np.ndarray, n_basis: int) -> None:
    if np.isfinite(V).all():
        return
    bad = np.argwhere(~np.isfinite(V))[0]
    ei, ej = bad[0] // (2 * n_basis), bad[1] // (2 * n_basis)
    raise RuntimeError(f"quadrature produced a non-finite entry for "
                       f"element pair ({ei}, {ej})")


def _border(V: np.ndarray, rows: np.ndarray, s: ComplexFrequency):
    """Append multiplier rows/columns (zero diagonal block) to ``V``."""
    rows = np.atleast_2d(rows)
    k, n = rows.shape
    out = np.zeros((n + k, n + k), dtype=complex)
    out[:n, :n] = V
    out[:n, n:] = rows.T
    out[n:, :n] = rows
    return TransferMatrix(s=s, entries=out, n_multipliers=k)


def assemble_galerkin_V(space: DensitySpace, freq: ComplexFrequency,
                        cfg: ProblemConfig,
                        constraints: ConstraintMode = ConstraintMode.none,
                        ) -> TransferMatrix:
    """Galerkin matrix ``V_ij(s) = <mu_i, V(s) mu_j>`` with optional border.

    The density block is complex symmetric by construction (each
    unordered element pair is integrated once and mirrored).  Constraint
    rows use the moment functionals of the basis; the ``multiplier_m``
    border enforces ``<lam, m> = 0``, removing the gauge kernel spanned
    by the outward normal field.

    Raises
    ------
    RuntimeError
        If quadrature produces a non-finite entry (reported with the
        offending element pair).
    """
    V = _galerkin_matrix(space, freq, cfg)
    _check_finite(V, space.n_basis)
    if constraints == ConstraintMode.none:
        return TransferMatrix(s=freq, entries=V, n_multipliers=0)
    vecs = moment_vectors(space.mesh, space.kind)
    if constraints == ConstraintMode.multiplier_m:
        return _border(V, vecs.moment, freq)
    if constraints == ConstraintMode.multiplier_rigid:
        return _border(V, vecs.rigid, freq)
    if constraints == ConstraintMode.augmented_Vtilde:
        b = vecs.moment
        return TransferMatrix(s=freq, entries=V + np.outer(b, b),
                              n_multipliers=0)
    raise ValueError(f"unknown constraint mode {constraints!r}")


def assemble_Vtilde(space: DensitySpace, freq: ComplexFrequency,
                    cfg: ProblemConfig) -> TransferMatrix:
    """Rank-one augmented operator ``V(s) + <., m> m`` (always invertible).

    Identical to the Galerkin matrix plus ``b b^T`` with ``b`` the moment
    vector of the basis against ``m(x) = x``; no multiplier border.
    """
    return assemble_galerkin_V(space, freq, cfg,
                               ConstraintMode.augmented_Vtilde)


# ---------------------------------------------------------------------------
# reduced integration (midpoint test rule)
# ---------------------------------------------------------------------------

def _build_diag_cloud(space: DensitySpace, cap: float, z_scale: float):
    """Self-element rows of the reduced scheme: midpoint against own element.

    The inner integral is folded into the two half-elements; with
    ``eta = 1/2 +- v/2`` the distance from the midpoint vanishes
    linearly in ``v``, which carries the split.
    """
    mesh = space.mesh
    n = mesh.n_elements
    v, wv, al, be = _split_channels(cap, z_scale, DIAG_LOG_ORDER,
                                    DIAG_SMOOTH_ORDER)
    eta = np.concatenate([0.5 + 0.5 * v, 0.5 - 0.5 * v])
    w_pt = np.concatenate([0.5 * wv, 0.5 * wv])
    alpha = np.concatenate([al, al])
    beta = np.concatenate([be, be])
    elems = np.arange(n)[:, None]
    pos_y, sp_y = _element_points(mesh, elems, eta[None, :])
    fb_y = _basis_values(space.n_basis, eta)
    ones = np.ones((1, eta.size))
    rows = mesh.arclengths[:, None]
    pairs = np.stack([np.arange(n), np.arange(n)], axis=1)
    return _finish_cloud(pairs, mesh.midpoints[:, None, :] - pos_y,
                         w_pt[None, :], ones, fb_y, rows, sp_y, alpha, beta,
                         space.n_basis)


def _build_neighbor_cloud(space: DensitySpace, offset: int):
    """Rows against an adjacent element, graded toward the shared vertex."""
    mesh = space.mesh
    n = mesh.n_elements
    x, w = gauss_legendre_01(NEIGHBOR_PANEL_ORDER)
    breaks = np.asarray(NEIGHBOR_BREAKS)
    eta_list, w_list = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        eta_list.append(lo + (hi - lo) * x)
        w_list.append((hi - lo) * w)
    eta = np.concatenate(eta_list)
    w_pt = np.concatenate(w_list)
    if offset == -1:
        # previous element: shared vertex at eta = 1
        eta = 1.0 - eta
    cols = (np.arange(n) + offset) % n
    pos_y, sp_y = _element_points(mesh, cols[:, None], eta[None, :])
    fb_y = _basis_values(space.n_basis, eta)
    ones = np.ones((1, eta.size))
    rows = mesh.arclengths[:, None]
    pairs = np.stack([np.arange(n), cols], axis=1)
    return _finish_cloud(pairs, mesh.midpoints[:, None, :] - pos_y,
                         w_pt[None, :], ones, fb_y, rows, sp_y,
                         np.ones(eta.size), np.zeros(eta.size), space.n_basis)


def _build_row_clouds(space: DensitySpace):
    """Separated columns of the reduced scheme, classed by distance."""
    mesh = space.mesh
    n = mesh.n_elements
    i, j = np.nonzero(np.ones((n, n), dtype=bool))
    off = (j - i) % n
    sep = (off != 0) & (off != 1) & (off != n - 1)
    i, j = i[sep], j[sep]
    dist = np.linalg.norm(mesh.midpoints[i] - mesh.midpoints[j], axis=1)
    ratio = dist / np.maximum(mesh.arclengths[i], mesh.arclengths[j])
    clouds = []
    for lower, order, n_panels in SEPARATED_CLASSES:
        upper = np.inf if lower == SEPARATED_CLASSES[0][0] else prev_lower
        sel = (ratio >= lower) & (ratio < upper)
        prev_lower = lower
        if not sel.any():
            continue
        ii, jj = i[sel], j[sel]
        x, w = _composite_rule(order, n_panels)
        pos_y, sp_y = _element_points(mesh, jj[:, None], x[None, :])
        fb_y = _basis_values(space.n_basis, x)
        ones = np.ones((1, x.size))
        rows = mesh.arclengths[ii][:, None]
        clouds.append(_finish_cloud(np.stack([ii, jj], axis=1),
                                    mesh.midpoints[ii][:, None, :] - pos_y,
                                    w[None, :], ones, fb_y, rows, sp_y,
                                    np.ones(x.size), np.zeros(x.size),
                                    space.n_basis))
    return clouds


def assemble_nystrom_V(space: DensitySpace, freq: ComplexFrequency,
                       cfg: ProblemConfig,
                       constraints: ConstraintMode = ConstraintMode.none,
                       ) -> TransferMatrix:
    """Reduced-integration matrix: midpoint test rule, accurate columns.

    Row ``i`` is the element arclength times the kernel integral against
    each basis function, evaluated at the element midpoint; this is the
    Nystrom-type scheme obtained from the Galerkin method by reduced
    integration of the outer (test) integral.  Restricted to piecewise
    constants on smooth curves; the diagonal uses the logarithmic split
    so its entries are finite and accurate.

    Constraint borders use the midpoint-rule moment functionals, which
    match the reduced bilinear form.
    """
    _require_planar(cfg)
    if space.kind != "P0":
        raise ValueError("reduced integration is defined for P0 densities")
    if space.mesh.curve.is_polygonal:
        raise ValueError("reduced integration requires a smooth curve; "
                         "corner elements are not supported")
    mesh = space.mesh
    s_abs = abs(freq.sqrt_s)
    l_max = float(mesh.arclengths.max())
    z_d = s_abs * l_max / 2.0
    cap_d = _quantize_down(min(1.0, Z_SPLIT_CAP / z_d))
    z_dq = _quantize_up(z_d) if cap_d < 1.0 else 1.0
    key = _space_key(space)
    diag = _cached(key + ("rdiag", cap_d, z_dq),
                   lambda: _build_diag_cloud(space, cap_d, z_dq))
    nb_next = _cached(key + ("rnext",),
                      lambda: _build_neighbor_cloud(space, +1))
    nb_prev = _cached(key + ("rprev",),
                      lambda: _build_neighbor_cloud(space, -1))
    far = _cached(key + ("rrows",), lambda: _build_row_clouds(space))
    ndof = space.dof_count
    pref = cfg.kernel_prefactor
    V = np.zeros((ndof, ndof), dtype=complex)
    for cloud in (diag, nb_next, nb_prev, *far):
        _accumulate_blocks(V, cloud, freq.sqrt_s, pref, space.n_basis)
    _check_finite(V, space.n_basis)
    if constraints == ConstraintMode.none:
        return TransferMatrix(s=freq, entries=V, n_multipliers=0)
    vecs = moment_vectors(mesh, space.kind, reduced=True)
    if constraints == ConstraintMode.multiplier_m:
        return _border(V, vecs.moment, freq)
    if constraints == ConstraintMode.multiplier_rigid:
        return _border(V, vecs.rigid, freq)
    if constraints == ConstraintMode.augmented_Vtilde:
        b = vecs.moment
        return TransferMatrix(s=freq, entries=V + np.outer(b, b),
                              n_multipliers=0)
    raise ValueError(f"unknown constraint mode {constraints!r}")


# ---------------------------------------------------------------------------
# potential evaluation off the boundary
# ---------------------------------------------------------------------------

def _check_points_off_boundary(mesh: BoundaryMesh, points: np.ndarray) -> None:
    samples = np.concatenate([mesh.midpoints, mesh.endpoints[:, 0, :]])
    d = np.linalg.norm(points[:, None, :] - samples[None, :, :], axis=-1)
    if d.min() < 1e-12:
        k = int(np.argwhere(d < 1e-12)[0][0])
        raise ValueError(f"observation point {k} lies on the boundary")


def _potential_classes(mesh: BoundaryMesh, points: np.ndarray):
    """(point, element) index pairs grouped by distance class."""
    dist = np.linalg.norm(points[:, None, :] - mesh.midpoints[None, :, :],
                          axis=-1)
    ratio = dist / mesh.arclengths[None, :]
    groups = []
    for lower, order, n_panels in POTENTIAL_CLASSES:
        upper = np.inf if lower == POTENTIAL_CLASSES[0][0] else prev_lower
        sel = (ratio >= lower) & (ratio < upper)
        prev_lower = lower
        if sel.any():
            kk, jj = np.nonzero(sel)
            groups.append((kk, jj, order, n_panels))
    return groups


def potential_velocity_matrix(space: DensitySpace, freq: ComplexFrequency,
                              cfg: ProblemConfig,
                              points) -> np.ndarray:
    """Evaluation matrix of the velocity potential at off-boundary points.

    Maps density coefficients to the complex velocity vectors
    ``(S(s) lam)(z_k)``; shape ``(2 K, dof_count)`` with rows ordered
    point-major (x then y component per point).  The kernel is smooth
    off the boundary; quadrature order follows the distance to each
    element in element lengths.
    """
    _require_planar(cfg)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = space.mesh
    _check_points_off_boundary(mesh, points)
    nb = space.n_basis
    out = np.zeros((2 * points.shape[0], space.dof_count), dtype=complex)
    pref = cfg.kernel_prefactor
    for kk, jj, order, n_panels in _potential_classes(mesh, points):
        x, w = _composite_rule(order, n_panels)
        pos_y, sp_y = _element_points(mesh, jj[:, None], x[None, :])
        fb = _basis_values(nb, x)
        diff = points[kk][:, None, :] - pos_y
        r = np.linalg.norm(diff, axis=-1)
        rhat = diff / r[..., None]
        a2, b2 = _ab2(freq.sqrt_s * r)
        base = w[None, :] * sp_y
        for b in range(nb):
            wb = base * fb[b]
            cols = 2 * nb * jj + 2 * b
            s_i = np.einsum("np,np->n", wb, a2)
            s_xx = np.einsum("np,np,np->n", wb, rhat[..., 0] ** 2, b2)
            s_xy = np.einsum("np,np,np->n", wb, rhat[..., 0] * rhat[..., 1], b2)
            s_yy = np.einsum("np,np,np->n", wb, rhat[..., 1] ** 2, b2)
            np.add.at(out, (2 * kk, cols), pref * (s_i + s_xx))
            np.add.at(out, (2 * kk, cols + 1), pref * s_xy)
            np.add.at(out, (2 * kk + 1, cols), pref * s_xy)
            np.add.at(out, (2 * kk + 1, cols + 1), pref * (s_i + s_yy))
    return out


def potential_pressure_matrix(space: DensitySpace, points) -> np.ndarray:
    """Evaluation matrix of the pressure potential at off-boundary points.

    The pressure kernel ``(x - y) / (2 pi |x - y|^2)`` does not depend
    on the frequency, so neither does this matrix; shape
    ``(K, dof_count)``, real.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = space.mesh
    _check_points_off_boundary(mesh, points)
    nb = space.n_basis
    out = np.zeros((points.shape[0], space.dof_count))
    for kk, jj, order, n_panels in _potential_classes(mesh, points):
        x, w = _composite_rule(order, n_panels)
        pos_y, sp_y = _element_points(mesh, jj[:, None], x[None, :])
        fb = _basis_values(nb, x)
        diff = points[kk][:, None, :] - pos_y
        r2 = np.sum(diff * diff, axis=-1)
        ker = diff / (2.0 * np.pi * r2[..., None])
        base = w[None, :] * sp_y
        for b in range(nb):
            wb = base * fb[b]
            cols = 2 * nb * jj + 2 * b
            np.add.at(out, (kk, cols),
                      np.einsum("np,np->n", wb, ker[..., 0]))
            np.add.at(out, (kk, cols + 1),
                      np.einsum("np,np->n", wb, ker[..., 1]))
    return out


def data_functional(space: DensitySpace, values_at, *,
                    reduced: bool = False) -> np.ndarray:
    """Test a boundary field against the basis: ``rhs_i = <mu_i, g>``.

    ``values_at`` maps positions of shape (..., 2) to vector values of
    the same shape.  With ``reduced`` the midpoint-times-arclength rule
    is used (matching the reduced-integration scheme); otherwise the
    element Gauss rule.
    """
    mesh = space.mesh
    nb = space.n_basis
    out = np.zeros(space.dof_count)
    if reduced:
        if nb != 1:
            raise ValueError("reduced testing is defined for P0 only")
        vals = np.asarray(values_at(mesh.midpoints))
        out[0::2] = mesh.arclengths * vals[:, 0]
        out[1::2] = mesh.arclengths * vals[:, 1]
        return out
    from .boundary_geometry import GEOMETRY_RULE_ORDER
    x, w = gauss_legendre_01(GEOMETRY_RULE_ORDER)
    elems = np.arange(mesh.n_elements)[:, None]
    pos, sp = _element_points(mesh, elems, x[None, :])
    vals = np.asarray(values_at(pos))
    fb = _basis_values(nb, x)
    for a in range(nb):
        jac = w[None, :] * sp * fb[a][None, :]
        for c in range(2):
            out[2 * nb * np.arange(mesh.n_elements) + 2 * a + c] = np.sum(
                jac * vals[:, :, c], axis=1)
    return out


def solve_transfer(matrix: TransferMatrix, rhs) -> np.ndarray:
    """Direct solve of a boundary system; multiplier components stripped.

    Raises
    ------
    numpy.linalg.LinAlgError
        If the system is numerically singular (the frequency is on or
        near the branch cut, or assembly is broken).
    """
    a = matrix.entries
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.shape[0] != a.shape[0]:
        raise ValueError(f"rhs length {rhs.shape[0]} does not match system "
                         f"size {a.shape[0]}")
    lu, piv = scipy.linalg.lu_factor(a)
    du = np.abs(np.diag(lu))
    if du.min() <= du.max() * 1e-14:
        raise np.linalg.LinAlgError(
            "transfer matrix is numerically singular")
    x = scipy.linalg.lu_solve((lu, piv), rhs)
    if matrix.n_multipliers:
        return x[:-matrix.n_multipliers]
    return x
