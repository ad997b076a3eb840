"""Transient Stokes flow driver: data sampling, marching, observables.

Solves the Dirichlet problem for the transient Stokes system

    u_t = nu Lap u - grad p,    div u = 0,    u = phi on Gamma,

starting from rest, with a single-layer ansatz for the pair ``(u, p)``.
In the Laplace domain the boundary density solves ``V(s) lam = phi-hat``
and the fields are recovered through the potential operators,
``u-hat = S(s) lam`` and ``p-hat = S_p lam``.  Multistep convolution
quadrature turns the density equation into the implicit recurrence

    W_0 lam_n = phi_n - sum_{m=1}^{n} W_m lam_{n-m},

with ``W_m`` the weights of the transfer ``s -> V(s)`` and ``phi_n`` the
Dirichlet trace at ``t_n`` tested against the boundary basis.  Velocity
observables convolve the weights of the potential transfer
``s -> S(s)`` against the density history; the pressure kernel carries
no frequency dependence, so the pressure observable is one fixed matrix
applied to each ``lam_n`` separately.

Gauge constraints (the operator kernel spanned by the normal field)
enter as bordered systems.  The border is frequency independent, so it
belongs to the leading weight alone: weights are generated for the
density block zero-padded to the bordered size, and the moment rows are
written into ``W_0`` afterwards.  The recurrence then enforces
``<lam_n, m> = 0`` at every step while the multiplier acts
instantaneously, never entering the convolution tail.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

from .bem_space import (
    ConstraintMode,
    DensitySpace,
    assemble_galerkin_V,
    assemble_nystrom_V,
    build_space,
    data_functional,
    potential_pressure_matrix,
    potential_velocity_matrix,
)
from ._quadrature import gauss_legendre_01
from .boundary_geometry import (
    BoundaryCurve,
    BoundaryMesh,
    build_mesh,
    moment_vectors,
)
from .cq_engine import CQScheme, TimeHistory, cq_march, cq_postprocess, cq_weights
from .laplace_kernels import ComplexFrequency, ProblemConfig

__all__ = [
    "DATA_COMPATIBILITY_TOL",
    "DATA_CAUSALITY_TOL",
    "MASK_SENTINEL",
    "DirichletData",
    "GridSpec",
    "FieldSnapshot",
    "SimulationResult",
    "exact_solution",
    "manufactured_dirichlet_data",
    "inside_obstacle",
    "run_simulation",
    "field_snapshot",
]

# Bound on |int_Gamma phi(t_n) . n ds| relative to max(1, max |phi|): the
# single-layer velocity has zero total flux through Gamma, so data with
# net flux is outside the range of the operator and the solve would
# chase an inconsistent right-hand side.
DATA_COMPATIBILITY_TOL = 1e-8

# Bound on |phi| at t <= 0 relative to max(1, max |phi|); the scheme
# starts from rest, so non-causal data contradicts the ansatz.
DATA_CAUSALITY_TOL = 1e-12

# Value stored in snapshot arrays at masked grid cells.  A finite
# sentinel keeps accidental arithmetic on masked cells finite (no NaN
# propagation); consumers must consult the mask, not the value.
MASK_SENTINEL = -1.0e30

# Gauss order and minimum panel count of the composite flux rule used
# for the compatibility check; panels align with polygon corners.
FLUX_RULE_ORDER = 8
FLUX_MIN_PANELS = 64

# Memory cap (bytes) for one block of velocity-potential weights during
# snapshot evaluation; grid points are processed in chunks under it.
SNAPSHOT_WEIGHT_BYTES = 1 << 28


@dataclasses.dataclass(frozen=True)
class DirichletData:
    """Causal velocity trace prescribed on the boundary.

    Attributes
    ----------
    boundary_values:
        Callback ``(t, positions) -> values`` mapping a time and an
        array of points of shape ``(..., 2)`` to real velocity vectors
        of the same shape.
    smoothness:
        Number of continuous causal time derivatives the caller
        guarantees at ``t = 0``; full order-``p`` convergence of the
        time discretization needs roughly ``p + 1``.
    """

    boundary_values: Callable[[float, np.ndarray], np.ndarray]
    smoothness: int = 0

    def __post_init__(self) -> None:
        if not callable(self.boundary_values):
            raise ValueError("boundary_values must be callable")
        if self.smoothness < 0:
            raise ValueError(
                f"smoothness must be nonnegative, got {self.smoothness}"
            )

    def sample(self, t: float, positions: np.ndarray) -> np.ndarray:
        """Evaluate the trace, validating shape and realness."""
        vals = np.asarray(self.boundary_values(float(t), positions))
        if vals.shape != positions.shape:
            raise ValueError(
                f"data callback returned shape {vals.shape} for positions "
                f"of shape {positions.shape}"
            )
        if np.iscomplexobj(vals):
            raise ValueError("Dirichlet data must be real valued")
        return np.asarray(vals, dtype=float)


@dataclasses.dataclass(frozen=True)
class GridSpec:
    """Uniform evaluation lattice ``x_j = x0 + j dx``, ``y_i = y0 + i dy``.

    Attributes
    ----------
    x0, y0:
        Coordinates of the first lattice point (row 0, column 0).
    dx, dy:
        Positive lattice spacings.
    n_rows, n_cols:
        Lattice extent; at least 2 in each direction so finite
        differences are defined.
    """

    x0: float
    y0: float
    dx: float
    dy: float
    n_rows: int
    n_cols: int

    def __post_init__(self) -> None:
        if not (self.dx > 0.0 and self.dy > 0.0):
            raise ValueError("grid spacings must be positive")
        if self.n_rows < 2 or self.n_cols < 2:
            raise ValueError("grid needs at least 2 points per direction")

    def points(self) -> np.ndarray:
        """Lattice points, shape ``(n_rows, n_cols, 2)``."""
        x = self.x0 + self.dx * np.arange(self.n_cols)
        y = self.y0 + self.dy * np.arange(self.n_rows)
        out = np.empty((self.n_rows, self.n_cols, 2))
        out[..., 0] = x[None, :]
        out[..., 1] = y[:, None]
        return out


@dataclasses.dataclass(frozen=True)
class FieldSnapshot:
    """Velocity, pressure, and vorticity on a grid at selected steps.

    Attributes
    ----------
    grid:
        The lattice the fields live on.
    step_indices:
        Time-step indices the snapshot was taken at, shape ``(K,)``.
    times:
        The corresponding times ``t_n``.
    mask:
        Boolean ``(n_rows, n_cols)``; True marks cells within one
        minimal element length of the boundary, where the potential
        quadrature degrades.  Masked cells hold ``MASK_SENTINEL`` in
        every field array.
    velocity:
        ``(K, n_rows, n_cols, 2)`` real.
    pressure:
        ``(K, n_rows, n_cols)`` real.
    vorticity:
        ``(K, n_rows, n_cols)`` real, central differences of the
        velocity with one-sided fallback next to masked cells.
    vorticity_mask:
        Cells where no difference stencil fit (masked, or no valid
        neighbor along one axis).
    """

    grid: GridSpec
    step_indices: np.ndarray
    times: np.ndarray
    mask: np.ndarray
    velocity: np.ndarray
    pressure: np.ndarray
    vorticity: np.ndarray
    vorticity_mask: np.ndarray


@dataclasses.dataclass(frozen=True)
class SimulationResult:
    """Everything one transient solve produces.

    Attributes
    ----------
    space:
        The discrete density space (carries mesh and curve).
    scheme:
        Time discretization parameters.
    cfg:
        Physical configuration (viscosity, dimension).
    observation_points:
        ``(K, 2)`` evaluation points off the boundary.
    history:
        Density coefficients per step, multipliers stripped.
    multipliers:
        ``(M + 1, k)`` multiplier values (``k = 0`` without
        constraints).
    velocity_series:
        ``(M + 1, K, 2)`` velocities at the observation points.
    pressure_series:
        ``(M + 1, K)`` pressures at the observation points.
    snapshots:
        Field snapshots attached after the run, possibly empty.
    """

    space: DensitySpace
    scheme: CQScheme
    cfg: ProblemConfig
    observation_points: np.ndarray
    history: TimeHistory
    multipliers: np.ndarray
    velocity_series: np.ndarray
    pressure_series: np.ndarray
    snapshots: tuple = ()

    def __post_init__(self) -> None:
        n = self.scheme.n_steps + 1
        k = self.observation_points.shape[0]
        if len(self.history) != n:
            raise ValueError("history length does not match the scheme")
        if self.velocity_series.shape != (n, k, 2):
            raise ValueError(
                f"velocity series must have shape {(n, k, 2)}, got "
                f"{self.velocity_series.shape}"
            )
        if self.pressure_series.shape != (n, k):
            raise ValueError(
                f"pressure series must have shape {(n, k)}, got "
                f"{self.pressure_series.shape}"
            )


def exact_solution(t: float, points) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form causal Stokes solution used by the convergence studies.

    .. math::

        u(t, x) = \\sin^9(t)\\, H(t) \\begin{pmatrix} 2 x_1 \\\\
            -2 x_2 \\end{pmatrix}, \\qquad
        p(t, x) = -9 \\sin^8(t) \\cos(t)\\, H(t) (x_1^2 - x_2^2),

    with ``H`` the Heaviside function.  The field is linear in space,
    so ``Lap u = 0`` and the pair solves the transient Stokes system
    for every viscosity; it is divergence free, hence compatible data.

    Parameters
    ----------
    t:
        Evaluation time; nonpositive times return zeros.
    points:
        Array of shape ``(..., 2)``.

    Returns
    -------
    tuple of numpy.ndarray
        Velocity of shape ``(..., 2)`` and pressure of shape ``(...)``.
    """
    pts = np.asarray(points, dtype=float)
    u = np.zeros(pts.shape)
    p = np.zeros(pts.shape[:-1])
    if t <= 0.0:
        return u, p
    amp = np.sin(t) ** 9
    u[..., 0] = 2.0 * amp * pts[..., 0]
    u[..., 1] = -2.0 * amp * pts[..., 1]
    p = -9.0 * np.sin(t) ** 8 * np.cos(t) * (pts[..., 0] ** 2 - pts[..., 1] ** 2)
    return u, p


def manufactured_dirichlet_data() -> DirichletData:
    """Trace of the manufactured solution (eight causal derivatives)."""
    return DirichletData(
        boundary_values=lambda t, pos: exact_solution(t, pos)[0],
        smoothness=8,
    )


def _flux_rule(curve: BoundaryCurve, n_elements: int):
    """Composite Gauss rule for boundary integrals in exact parameters.

    Panels are a multiple of 4 so polygon corners land on panel edges;
    returns parameter nodes, positions, tangential velocities, and the
    combined quadrature weights (Gauss weight times panel width).
    """
    n_panels = max(FLUX_MIN_PANELS, 4 * n_elements)
    xg, wg = gauss_legendre_01(FLUX_RULE_ORDER)
    width = 1.0 / n_panels
    theta = (np.arange(n_panels)[:, None] + xg[None, :]) * width
    pos = curve.point(theta)
    vel = curve.velocity(theta)
    weights = np.broadcast_to(wg[None, :] * width, theta.shape)
    return pos, vel, weights


def _check_data_admissible(
    data: DirichletData, curve: BoundaryCurve, n_elements: int, scheme: CQScheme
) -> None:
    """Causality at t <= 0 and zero net flux at every sample time.

    The flux uses the exact parametrization, ``n ds = (x2', -x1') d
    theta`` for the counterclockwise curves of this package, so
    divergence-free data passes at quadrature accuracy regardless of
    the mesh's discrete normals.
    """
    pos, vel, weights = _flux_rule(curve, n_elements)
    peak = 0.0
    fluxes = np.empty(scheme.n_steps + 1)
    for n, t in enumerate(scheme.times()):
        vals = data.sample(t, pos)
        peak = max(peak, float(np.abs(vals).max()))
        integrand = vals[..., 0] * vel[..., 1] - vals[..., 1] * vel[..., 0]
        fluxes[n] = float((integrand * weights).sum())
    scale = max(1.0, peak)
    worst = int(np.argmax(np.abs(fluxes)))
    if abs(fluxes[worst]) > DATA_COMPATIBILITY_TOL * scale:
        raise ValueError(
            f"Dirichlet data has net boundary flux {fluxes[worst]:.3e} at "
            f"t = {scheme.times()[worst]:.6g}; the single-layer velocity "
            "is flux free, so the data is incompatible"
        )
    for t in (0.0, -scheme.kappa):
        vals = data.sample(t, pos)
        if np.abs(vals).max() > DATA_CAUSALITY_TOL * scale:
            raise ValueError(
                f"Dirichlet data is not causal: |phi| = "
                f"{np.abs(vals).max():.3e} at t = {t:.6g}"
            )


def _constraint_border(
    mesh: BoundaryMesh, kind: str, constraint: ConstraintMode, reduced: bool
) -> np.ndarray:
    """Moment rows bordering the system; shape ``(k, dof)`` with k >= 0."""
    if constraint in (ConstraintMode.none, ConstraintMode.augmented_Vtilde):
        return np.zeros((0, 0))
    vecs = moment_vectors(mesh, kind, reduced=reduced)
    if constraint == ConstraintMode.multiplier_m:
        return np.atleast_2d(vecs.moment)
    if constraint == ConstraintMode.multiplier_rigid:
        return np.atleast_2d(vecs.rigid)
    raise ValueError(f"unknown constraint mode {constraint!r}")


def run_simulation(
    curve: BoundaryCurve,
    n_elements: int,
    kind: str,
    constraint: ConstraintMode,
    scheme: CQScheme,
    data: DirichletData,
    observation_points,
    cfg: ProblemConfig,
    *,
    assembly: str = "galerkin",
) -> SimulationResult:
    """Run the full pipeline: sample, march, and observe.

    Parameters
    ----------
    curve, n_elements, kind:
        Boundary, mesh resolution, and density family.
    constraint:
        Gauge handling; bordered modes append multipliers to the
        marched system.
    scheme:
        Time discretization.
    data:
        Causal, compatible Dirichlet trace.
    observation_points:
        ``(K, 2)`` points off the boundary where velocity and pressure
        are recorded at every step.
    cfg:
        Physical configuration.
    assembly:
        ``"galerkin"`` for the variational matrix, ``"reduced"`` for
        the midpoint-tested scheme (P0 on smooth curves only).

    Returns
    -------
    SimulationResult

    Raises
    ------
    ValueError
        For inadmissible data, an unknown assembly flag, or any
        violated component precondition.
    """
    if assembly not in ("galerkin", "reduced"):
        raise ValueError(
            f"assembly must be 'galerkin' or 'reduced', got {assembly!r}"
        )
    reduced = assembly == "reduced"
    mesh = build_mesh(curve, n_elements)
    space = build_space(mesh, kind)
    points = np.atleast_2d(np.asarray(observation_points, dtype=float))

    _check_data_admissible(data, curve, n_elements, scheme)

    n_keep = scheme.n_steps + 1
    dof = space.dof_count
    rhs = np.empty((n_keep, dof))
    for n, t in enumerate(scheme.times()):
        rhs[n] = data_functional(
            space, lambda pos: data.sample(t, pos), reduced=reduced
        )

    assemble = assemble_nystrom_V if reduced else assemble_galerkin_V
    border = _constraint_border(mesh, kind, constraint, reduced)
    n_mult = border.shape[0]
    operator_mode = (
        ConstraintMode.augmented_Vtilde
        if constraint == ConstraintMode.augmented_Vtilde
        else ConstraintMode.none
    )

    def transfer(s: complex) -> np.ndarray:
        entries = assemble(
            space, ComplexFrequency(s), cfg, constraints=operator_mode
        ).entries
        if not n_mult:
            return entries
        padded = np.zeros((dof + n_mult, dof + n_mult), dtype=complex)
        padded[:dof, :dof] = entries
        return padded

    seq = cq_weights(transfer, scheme)
    if n_mult:
        # the frequency-independent border has the weight expansion
        # B * delta_{m 0}, so it is written into W_0 exactly instead of
        # being pushed through the contour transform
        seq.weights[0, dof:, :dof] = border
        seq.weights[0, :dof, dof:] = border.T
        rhs = np.concatenate([rhs, np.zeros((n_keep, n_mult))], axis=1)

    marched = cq_march(seq, rhs)
    densities = TimeHistory(
        densities=np.ascontiguousarray(marched.densities[:, :dof]),
        kappa=scheme.kappa,
    )
    multipliers = np.ascontiguousarray(marched.densities[:, dof:])

    velocity = cq_postprocess(
        lambda s: potential_velocity_matrix(space, ComplexFrequency(s), cfg, points),
        scheme,
        densities,
    ).reshape(n_keep, points.shape[0], 2)
    pressure = densities.densities @ potential_pressure_matrix(space, points).T

    return SimulationResult(
        space=space,
        scheme=scheme,
        cfg=cfg,
        observation_points=points,
        history=densities,
        multipliers=multipliers,
        velocity_series=velocity,
        pressure_series=pressure,
    )


def _segment_distances(points: np.ndarray, mesh: BoundaryMesh) -> np.ndarray:
    """Distance from each point to the mesh's chord polygon."""
    a = mesh.endpoints[:, 0, :]
    d = mesh.endpoints[:, 1, :] - a
    rel = points[:, None, :] - a[None, :, :]
    t = np.einsum("pnc,nc->pn", rel, d) / np.einsum("nc,nc->n", d, d)
    np.clip(t, 0.0, 1.0, out=t)
    nearest = rel - t[:, :, None] * d[None, :, :]
    return np.sqrt(np.einsum("pnc,pnc->pn", nearest, nearest)).min(axis=1)


def inside_obstacle(mesh: BoundaryMesh, points) -> np.ndarray:
    """Even-odd test of points against the mesh's chord polygon.

    Points on or extremely near the polygon land on either side,
    but such points sit inside the masked boundary band wherever this
    helper feeds the snapshot machinery.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = mesh.endpoints[:, 0, :]
    b = mesh.endpoints[:, 1, :]
    y1, y2 = a[None, :, 1], b[None, :, 1]
    x1, x2 = a[None, :, 0], b[None, :, 0]
    py = pts[:, None, 1]
    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    hits = straddles & (pts[:, None, 0] < x_cross)
    return (hits.sum(axis=1) % 2).astype(bool)


def _masked_derivative(field: np.ndarray, invalid: np.ndarray, spacing: float,
                       axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Central difference with one-sided fallback next to invalid cells.

    Returns the derivative and the cells where some stencil applied;
    entries without any valid neighbor along ``axis`` stay zero and
    are reported invalid.
    """
    f = np.moveaxis(field, axis, 0)
    bad = np.moveaxis(invalid, axis, 0)
    n = f.shape[0]
    prev_ok = np.zeros_like(bad)
    next_ok = np.zeros_like(bad)
    prev_ok[1:] = ~bad[:-1]
    next_ok[:-1] = ~bad[1:]
    f_prev = np.zeros_like(f)
    f_next = np.zeros_like(f)
    f_prev[1:] = f[:-1]
    f_next[:-1] = f[1:]
    out = np.zeros_like(f)
    central = prev_ok & next_ok
    out[central] = (f_next[central] - f_prev[central]) / (2.0 * spacing)
    forward = next_ok & ~prev_ok
    out[forward] = (f_next[forward] - f[forward]) / spacing
    backward = prev_ok & ~next_ok
    out[backward] = (f[backward] - f_prev[backward]) / spacing
    ok = (prev_ok | next_ok) & ~bad
    return np.moveaxis(out, 0, axis), np.moveaxis(ok, 0, axis)


def field_snapshot(result: SimulationResult, grid: GridSpec,
                   step_indices) -> FieldSnapshot:
    """Evaluate velocity, pressure, and vorticity on a lattice.

    Cells within one minimal element length of the boundary are masked
    (the potential quadrature loses accuracy there); all other cells,
    on both sides of the boundary, are evaluated through the same
    potential matrices as the observation points.  Vorticity is
    ``d(u_y)/dx - d(u_x)/dy`` by central differences with one-sided
    fallback where a neighbor is masked.

    Parameters
    ----------
    result:
        A completed simulation.
    grid:
        Evaluation lattice.
    step_indices:
        Time steps to snapshot, each in ``0 .. M``.

    Returns
    -------
    FieldSnapshot

    Raises
    ------
    ValueError
        If a step index is out of range or every cell is masked.
    """
    steps = np.asarray(step_indices, dtype=int).ravel()
    n_keep = result.scheme.n_steps + 1
    if steps.size == 0:
        raise ValueError("need at least one step index")
    if steps.min() < 0 or steps.max() >= n_keep:
        raise ValueError(
            f"step indices must lie in 0..{n_keep - 1}, got {steps.tolist()}"
        )
    mesh = result.space.mesh
    pts = grid.points()
    flat = pts.reshape(-1, 2)
    h_min = float(mesh.arclengths.min())
    masked_flat = _segment_distances(flat, mesh) <= h_min
    if masked_flat.all():
        raise ValueError(
            "every grid cell lies within one element length of the "
            "boundary; nothing to evaluate"
        )
    keep = np.flatnonzero(~masked_flat)

    n_sel = steps.size
    vel_flat = np.full((n_sel, flat.shape[0], 2), MASK_SENTINEL)
    p_flat = np.full((n_sel, flat.shape[0]), MASK_SENTINEL)

    p_rows = potential_pressure_matrix(result.space, flat[keep])
    p_flat[:, keep] = result.history.densities[steps] @ p_rows.T

    dof = result.space.dof_count
    per_point = (result.scheme.n_steps + 1) * 2 * dof * 8
    chunk = max(8, SNAPSHOT_WEIGHT_BYTES // per_point)
    for start in range(0, keep.size, chunk):
        idx = keep[start : start + chunk]
        block = cq_postprocess(
            lambda s: potential_velocity_matrix(
                result.space, ComplexFrequency(s), result.cfg, flat[idx]
            ),
            result.scheme,
            result.history,
        )
        vel_flat[:, idx, :] = block[steps].reshape(n_sel, idx.size, 2)

    mask = masked_flat.reshape(grid.n_rows, grid.n_cols)
    velocity = vel_flat.reshape(n_sel, grid.n_rows, grid.n_cols, 2)
    pressure = p_flat.reshape(n_sel, grid.n_rows, grid.n_cols)

    vorticity = np.full((n_sel, grid.n_rows, grid.n_cols), MASK_SENTINEL)
    vort_ok = np.zeros((grid.n_rows, grid.n_cols), dtype=bool)
    for k in range(n_sel):
        duy_dx, ok_x = _masked_derivative(velocity[k, :, :, 1], mask,
                                          grid.dx, axis=1)
        dux_dy, ok_y = _masked_derivative(velocity[k, :, :, 0], mask,
                                          grid.dy, axis=0)
        ok = ok_x & ok_y & ~mask
        vorticity[k][ok] = duy_dx[ok] - dux_dy[ok]
        vort_ok = ok if k == 0 else (vort_ok & ok)
    velocity[:, mask, :] = MASK_SENTINEL
    pressure[:, mask] = MASK_SENTINEL

    return FieldSnapshot(
        grid=grid,
        step_indices=steps,
        times=result.scheme.times()[steps],
        mask=mask,
        velocity=velocity,
        pressure=pressure,
        vorticity=vorticity,
        vorticity_mask=~vort_ok,
    )
