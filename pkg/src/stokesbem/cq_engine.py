"""Multistep convolution quadrature for operator-valued transfer functions.

Approximates a causal convolution ``u(t) = int_0^t k(t - tau) g(tau) dtau``
whose kernel is known only through its Laplace transform ``F(s)`` by the
discrete convolution

    u_n ~= sum_{m=0}^{n} W_m g_{n-m},      g_m = g(m kappa),

where the weights are the Taylor coefficients of the transfer function
composed with the characteristic function of a backward differentiation
formula,

    F(delta(zeta) / kappa) = sum_{n>=0} W_n zeta^n,
    delta(zeta) = sum_{l=1}^{p} (1 - zeta)^l / l.

The coefficients are recovered by a scaled discrete Fourier transform on
the circle ``|zeta| = R < 1``,

    W_n ~= R^{-n} / L * sum_{l=0}^{L-1} F(delta(zeta_l) / kappa)
                                        exp(-2 pi i n l / L),

with ``zeta_l = R exp(2 pi i l / L)``.  The radius balances the aliasing
error ``O(R^L)`` against roundoff amplified by ``R^{-M}``; with
``R = eps^{1/(2 (M + 1))}`` and ``L = M + 1`` both contributions land
near ``sqrt(eps) * max_l ||F||``, which is therefore the accuracy floor
of the computed weights.  For transfer functions with real symbols
(``F(conj s) = conj F(s)``) the integrand is Hermitian in ``l``, so only
``floor(L / 2) + 1`` evaluations are needed and the weights come out
real up to that floor.

The implicit one-sided recurrence

    W_0 lam_n = phi_n - sum_{m=1}^{n} W_m lam_{n-m}

then marches a discretized operator equation forward in time with a
single factorization of ``W_0``, and observables are recovered by one
more discrete convolution against the weights of the observation
transfer function.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg

__all__ = [
    "CONTOUR_EPSILON",
    "IMAG_RESIDUE_TOL",
    "CQScheme",
    "WeightSequence",
    "TimeHistory",
    "bdf_delta",
    "cq_weights",
    "cq_march",
    "cq_postprocess",
]

# Target accuracy parameter for the contour radius R = eps^{1/(2(M+1))}.
# The weight error floor is sqrt(CONTOUR_EPSILON) * max ||F|| on the
# contour, reached when aliasing and amplified roundoff balance.
CONTOUR_EPSILON = 1e-15

# Relative bound on the imaginary residue of weights computed for a
# real-symbol transfer function.  The Hermitian symmetrization makes the
# exact coefficients real; anything beyond roundoff signals a transfer
# callback that is not a real symbol, so it is an error, not noise.  The
# residue is compared against this fraction of the largest weight or
# against the rigorous FFT roundoff bound ``8 L eps R^{-M} max||F||``,
# whichever is larger: the scaling ``R^{-n}`` amplifies machine noise in
# the late coefficients above any fixed relative threshold.
IMAG_RESIDUE_TOL = 1e-10

# Column block size for the weight transform.  The contour evaluations
# are stored once (half the nodes), and the Hermitian extension plus FFT
# run over column slices of this width so the complex work buffer stays
# a few megabytes even for large boundary systems.
WEIGHT_CHUNK_COLUMNS = 64

# Largest multistep order with a convergence theory for operator
# convolution quadrature; BDF methods of higher order are not zero
# stable anyway.
MAX_BDF_ORDER = 6


def bdf_delta(order: int, zeta: complex | np.ndarray) -> complex | np.ndarray:
    """Characteristic function of the backward differentiation formula.

    Evaluates ``delta(zeta) = sum_{l=1}^{p} (1 - zeta)^l / l``, the
    generating polynomial whose truncation order sets the convergence
    order of the time discretization.

    Parameters
    ----------
    order:
        Multistep order ``p`` with ``1 <= p <= 6``.
    zeta:
        Evaluation point or array of points in the complex plane.

    Returns
    -------
    complex or numpy.ndarray
        ``delta(zeta)``, matching the shape of ``zeta``.

    Raises
    ------
    ValueError
        If ``order`` lies outside ``{1, ..., 6}``.
    """
    if not 1 <= order <= MAX_BDF_ORDER:
        raise ValueError(f"BDF order must lie in 1..{MAX_BDF_ORDER}, got {order}")
    w = np.asarray(zeta)
    u = 1.0 - w
    acc = np.zeros_like(u)
    power = np.ones_like(u)
    for ell in range(1, order + 1):
        power = power * u
        acc = acc + power / ell
    if np.isscalar(zeta) or np.ndim(zeta) == 0:
        return complex(acc)
    return acc


@dataclasses.dataclass(frozen=True)
class CQScheme:
    """Parameters of one BDF convolution-quadrature discretization.

    Attributes
    ----------
    order:
        BDF order ``p`` in ``{1, ..., 6}``.
    kappa:
        Time step ``kappa > 0``; the discrete times are ``t_n = n kappa``.
    n_steps:
        Number of steps ``M``; histories carry ``M + 1`` samples.
    contour_radius:
        Radius ``R`` of the coefficient-recovery circle, in ``(0, 1)``.
        Defaults to the error-balancing choice
        ``CONTOUR_EPSILON ** (1 / (2 (M + 1)))``.
    n_contour_nodes:
        Number of transform nodes ``L >= M + 1``; defaults to ``M + 1``.

    Raises
    ------
    ValueError
        For an out-of-range order, a nonpositive step, a radius outside
        ``(0, 1)``, too few contour nodes, or a contour node whose
        scaled frequency ``delta(zeta_l) / kappa`` falls on the closed
        negative real axis, where the transfer functions of interest
        are not defined.  BDF orders up to 2 keep ``Re delta > 0`` on
        the whole disk; orders 3 to 6 are only A(alpha)-stable, so for
        small steps part of the contour maps into the left half plane
        and only the cut ``(-inf, 0]`` can be excluded.
    """

    order: int
    kappa: float
    n_steps: int
    contour_radius: float | None = None
    n_contour_nodes: int | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.order <= MAX_BDF_ORDER:
            raise ValueError(
                f"BDF order must lie in 1..{MAX_BDF_ORDER}, got {self.order}"
            )
        if not self.kappa > 0.0:
            raise ValueError(f"time step must be positive, got {self.kappa}")
        if self.n_steps < 1:
            raise ValueError(f"need at least one step, got {self.n_steps}")
        if self.contour_radius is None:
            radius = CONTOUR_EPSILON ** (1.0 / (2.0 * (self.n_steps + 1)))
            object.__setattr__(self, "contour_radius", radius)
        if not 0.0 < self.contour_radius < 1.0:
            raise ValueError(
                f"contour radius must lie in (0, 1), got {self.contour_radius}"
            )
        if self.n_contour_nodes is None:
            object.__setattr__(self, "n_contour_nodes", self.n_steps + 1)
        if self.n_contour_nodes < self.n_steps + 1:
            raise ValueError(
                f"need at least n_steps + 1 = {self.n_steps + 1} contour "
                f"nodes, got {self.n_contour_nodes}"
            )
        bad = self._cut_nodes()
        if bad.size:
            raise ValueError(
                f"contour nodes {bad.tolist()} map onto the closed negative "
                "real axis; shrink the radius or change the node count"
            )

    def _cut_nodes(self) -> np.ndarray:
        """Indices of contour nodes with ``delta(zeta_l)/kappa`` on ``(-inf, 0]``."""
        s = self.frequencies()
        scale = np.abs(s)
        on_axis = np.abs(s.imag) <= 1e-14 * np.maximum(scale, 1e-300)
        return np.nonzero(on_axis & (s.real <= 0.0))[0]

    def times(self) -> np.ndarray:
        """Sample times ``t_n = n kappa`` for ``n = 0, ..., M``."""
        return self.kappa * np.arange(self.n_steps + 1, dtype=float)

    def contour_points(self) -> np.ndarray:
        """The transform nodes ``zeta_l = R exp(2 pi i l / L)``."""
        angles = 2.0 * np.pi * np.arange(self.n_contour_nodes) / self.n_contour_nodes
        return self.contour_radius * np.exp(1j * angles)

    def frequencies(self) -> np.ndarray:
        """Scaled frequencies ``s_l = delta(zeta_l) / kappa`` at all nodes."""
        return bdf_delta(self.order, self.contour_points()) / self.kappa

    @property
    def n_half_nodes(self) -> int:
        """Evaluations needed for a real symbol: ``floor(L / 2) + 1``."""
        return self.n_contour_nodes // 2 + 1


@dataclasses.dataclass(frozen=True)
class WeightSequence:
    """Convolution weights ``W_0, ..., W_M`` of one transfer function.

    Attributes
    ----------
    weights:
        Real array of shape ``(M + 1,)`` for scalar transfer functions
        or ``(M + 1, rows, cols)`` for matrix-valued ones.
    kappa:
        Time step the weights were generated for.
    order:
        BDF order of the underlying scheme.
    """

    weights: np.ndarray
    kappa: float
    order: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.weights)
        if arr.ndim not in (1, 3):
            raise ValueError(
                f"weights must have shape (M+1,) or (M+1, rows, cols), "
                f"got {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise ValueError("weight sequence contains non-finite entries")

    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def is_scalar(self) -> bool:
        """Whether the weights are plain numbers rather than matrices."""
        return self.weights.ndim == 1


@dataclasses.dataclass(frozen=True)
class TimeHistory:
    """Real coefficient vectors ``lam_0, ..., lam_M`` at ``t_n = n kappa``.

    Attributes
    ----------
    densities:
        Real array of shape ``(M + 1, n_dof)``, or ``(M + 1,)`` for a
        scalar unknown.
    kappa:
        Time step between consecutive samples.
    """

    densities: np.ndarray
    kappa: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.densities)
        if arr.ndim not in (1, 2):
            raise ValueError(f"densities must be 1- or 2-D, got shape {arr.shape}")
        if np.iscomplexobj(arr):
            raise ValueError("history densities must be real")
        if not np.isfinite(arr).all():
            raise ValueError("history contains non-finite entries")
        if not self.kappa > 0.0:
            raise ValueError(f"time step must be positive, got {self.kappa}")

    def __len__(self) -> int:
        return self.densities.shape[0]

    def times(self) -> np.ndarray:
        """Sample times ``t_n = n kappa``."""
        return self.kappa * np.arange(len(self), dtype=float)


def _evaluate_contour(transfer, scheme: CQScheme) -> np.ndarray:
    """Evaluate the transfer callback on the first half of the contour.

    Returns a complex array of shape ``(n_half,)`` or
    ``(n_half, rows, cols)``.  Failures inside the callback are
    re-raised with the offending node index attached; non-finite return
    values are rejected for the same reason (a frequency off the domain
    of the symbol).
    """
    freqs = scheme.frequencies()[: scheme.n_half_nodes]
    values = None
    for node, s in enumerate(freqs):
        try:
            val = np.asarray(transfer(complex(s)), dtype=complex)
        except Exception as exc:
            raise RuntimeError(
                f"transfer evaluation failed at contour node {node} "
                f"(s = {complex(s):.6g})"
            ) from exc
        if val.ndim not in (0, 2):
            raise ValueError(
                f"transfer must return a scalar or a 2-D matrix, got shape "
                f"{val.shape} at contour node {node}"
            )
        if not np.isfinite(val).all():
            raise RuntimeError(
                f"transfer returned non-finite values at contour node {node} "
                f"(s = {complex(s):.6g})"
            )
        if values is None:
            values = np.empty((freqs.size,) + val.shape, dtype=complex)
        elif val.shape != values.shape[1:]:
            raise ValueError(
                f"transfer changed output shape at contour node {node}: "
                f"{val.shape} != {values.shape[1:]}"
            )
        values[node] = val
    return values


def _hermitian_transform(half: np.ndarray, scheme: CQScheme) -> np.ndarray:
    """Scaled FFT of the Hermitian extension of half-contour samples.

    ``half`` holds ``F_l`` for ``l = 0, ..., floor(L/2)``; the remaining
    nodes follow from ``F_{L-l} = conj(F_l)``.  Returns the complex
    coefficient estimates ``W_n = R^{-n}/L * sum_l F_l e^{-2 pi i nl/L}``
    for ``n = 0, ..., M``.
    """
    n_nodes = scheme.n_contour_nodes
    n_keep = scheme.n_steps + 1
    scale = scheme.contour_radius ** -np.arange(n_keep, dtype=float) / n_nodes
    full = np.empty((n_nodes,) + half.shape[1:], dtype=complex)
    full[: half.shape[0]] = half
    for l in range(1, (n_nodes + 1) // 2):
        full[n_nodes - l] = np.conj(full[l])
    spectrum = np.fft.fft(full, axis=0)[:n_keep]
    return spectrum * scale.reshape((n_keep,) + (1,) * (half.ndim - 1))


def cq_weights(transfer, scheme: CQScheme) -> WeightSequence:
    """Generate the convolution weights of a transfer function.

    Samples ``F(delta(zeta_l) / kappa)`` on the recovery circle and
    applies the scaled discrete Fourier transform.  The callback is
    assumed to be a real symbol (``F(conj s) = conj F(s)``), which holds
    for every Laplace-domain operator of a real time-domain kernel; only
    half the contour is evaluated and the weights are returned real.

    Parameters
    ----------
    transfer:
        Callback mapping a complex frequency to a scalar or to a complex
        matrix of fixed shape.
    scheme:
        Contour and multistep parameters.

    Returns
    -------
    WeightSequence
        Real weights ``W_0, ..., W_M``; accuracy is limited by the floor
        ``sqrt(CONTOUR_EPSILON) * max_l ||F||`` of the balanced contour.

    Raises
    ------
    RuntimeError
        If the callback raises or returns non-finite values at some node
        (reported with its index), or if the imaginary residue exceeds
        ``IMAG_RESIDUE_TOL`` relative to the largest weight, indicating
        a symbol that is not real.
    """
    half = _evaluate_contour(transfer, scheme)
    roundoff = _roundoff_floor(half, scheme)
    if half.ndim == 1:
        spectrum = _hermitian_transform(half, scheme)
        resid = float(np.abs(spectrum.imag).max())
        magnitude = float(np.abs(spectrum.real).max())
        _check_imag_residue(resid, magnitude, roundoff)
        return WeightSequence(
            weights=np.ascontiguousarray(spectrum.real),
            kappa=scheme.kappa,
            order=scheme.order,
        )

    n_keep = scheme.n_steps + 1
    rows, cols = half.shape[1:]
    weights = np.empty((n_keep, rows, cols), dtype=float)
    resid = 0.0
    magnitude = 0.0
    for start in range(0, cols, WEIGHT_CHUNK_COLUMNS):
        stop = min(start + WEIGHT_CHUNK_COLUMNS, cols)
        spectrum = _hermitian_transform(
            np.ascontiguousarray(half[:, :, start:stop]), scheme
        )
        resid = max(resid, float(np.abs(spectrum.imag).max()))
        magnitude = max(magnitude, float(np.abs(spectrum.real).max()))
        weights[:, :, start:stop] = spectrum.real
    _check_imag_residue(resid, magnitude, roundoff)
    return WeightSequence(weights=weights, kappa=scheme.kappa, order=scheme.order)


def _roundoff_floor(half: np.ndarray, scheme: CQScheme) -> float:
    """Largest imaginary residue attributable to transform roundoff.

    Machine noise of size ``eps * max||F||`` per sample passes through
    the length-``L`` transform and is amplified by ``R^{-n}``, worst at
    ``n = M``; the leading factor 8 is margin over the textbook bound.
    """
    max_transfer = float(np.abs(half).max())
    amplification = scheme.contour_radius ** -scheme.n_steps
    eps = float(np.finfo(float).eps)
    return 8.0 * scheme.n_contour_nodes * eps * amplification * max_transfer


def _check_imag_residue(resid: float, magnitude: float, roundoff: float) -> None:
    if resid > max(IMAG_RESIDUE_TOL * max(magnitude, 1e-300), roundoff):
        raise RuntimeError(
            f"imaginary weight residue {resid:.3e} exceeds both "
            f"{IMAG_RESIDUE_TOL:.1e} x max weight {magnitude:.3e} and the "
            f"roundoff floor {roundoff:.3e}; the transfer function is not "
            "a real symbol"
        )


def cq_march(weights: WeightSequence, rhs_samples: np.ndarray) -> TimeHistory:
    """Solve the implicit convolution recurrence forward in time.

    Computes ``lam_n`` from
    ``W_0 lam_n = phi_n - sum_{m=1}^{n} W_m lam_{n-m}`` with a single
    factorization of ``W_0``.

    Parameters
    ----------
    weights:
        Weights of the boundary system; matrices must be square.
    rhs_samples:
        Real data samples ``phi_0, ..., phi_M``, shaped ``(M + 1,)`` for
        scalar systems or ``(M + 1, n)`` for matrix ones.

    Returns
    -------
    TimeHistory
        The real solution samples, one per step.

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``W_0`` is singular to working precision.
    ValueError
        On shape mismatches or complex data.
    """
    w = weights.weights
    rhs = np.asarray(rhs_samples)
    if np.iscomplexobj(rhs):
        if np.abs(rhs.imag).max() > IMAG_RESIDUE_TOL * max(
            float(np.abs(rhs.real).max()), 1e-300
        ):
            raise ValueError("right-hand side samples must be real")
        rhs = rhs.real
    rhs = np.ascontiguousarray(rhs, dtype=float)
    n_steps = w.shape[0] - 1

    if weights.is_scalar:
        if rhs.shape != (n_steps + 1,):
            raise ValueError(
                f"scalar system needs rhs of shape ({n_steps + 1},), "
                f"got {rhs.shape}"
            )
        if w[0] == 0.0:
            raise np.linalg.LinAlgError("leading scalar weight W_0 is zero")
        lam = np.empty(n_steps + 1)
        for n in range(n_steps + 1):
            tail = float(np.dot(w[1 : n + 1], lam[n - 1 :: -1])) if n else 0.0
            lam[n] = (rhs[n] - tail) / w[0]
        return TimeHistory(densities=lam, kappa=weights.kappa)

    n_sys = w.shape[1]
    if w.shape[2] != n_sys:
        raise ValueError(f"marching needs square weight matrices, got {w.shape[1:]}")
    if rhs.shape != (n_steps + 1, n_sys):
        raise ValueError(
            f"rhs must have shape ({n_steps + 1}, {n_sys}), got {rhs.shape}"
        )
    lu, piv = scipy.linalg.lu_factor(w[0])
    diag = np.abs(np.diag(lu))
    if diag.min() <= diag.max() * 1e-14:
        raise np.linalg.LinAlgError(
            "leading weight matrix W_0 is numerically singular"
        )
    lam = np.empty((n_steps + 1, n_sys))
    for n in range(n_steps + 1):
        if n:
            tail = np.einsum("mij,mj->i", w[1 : n + 1], lam[n - 1 :: -1])
        else:
            tail = 0.0
        lam[n] = scipy.linalg.lu_solve((lu, piv), rhs[n] - tail)
    return TimeHistory(densities=lam, kappa=weights.kappa)


def cq_postprocess(transfer, scheme: CQScheme, history: TimeHistory) -> np.ndarray:
    """Convolve observation weights against a computed history.

    Generates the weights ``S_0, ..., S_M`` of the observation transfer
    function and returns ``u_n = sum_{m=0}^{n} S_m lam_{n-m}``.

    Parameters
    ----------
    transfer:
        Callback for the observation operator; may return rectangular
        matrices (observables x unknowns) or scalars.
    scheme:
        The scheme the history was marched with.
    history:
        Solution samples ``lam_0, ..., lam_M``.

    Returns
    -------
    numpy.ndarray
        Array of shape ``(M + 1, rows)`` of real observables, or
        ``(M + 1,)`` when both transfer and history are scalar.

    Raises
    ------
    ValueError
        If the history length does not match the scheme or the matrix
        columns do not match the history width.
    """
    if len(history) != scheme.n_steps + 1:
        raise ValueError(
            f"history length {len(history)} does not match scheme with "
            f"{scheme.n_steps + 1} samples"
        )
    obs = cq_weights(transfer, scheme)
    w = obs.weights
    lam = history.densities
    n_keep = scheme.n_steps + 1

    if obs.is_scalar:
        if lam.ndim != 1:
            raise ValueError("scalar observation weights need a scalar history")
        return np.convolve(w, lam)[:n_keep]

    if lam.ndim != 2 or lam.shape[1] != w.shape[2]:
        raise ValueError(
            f"observation weights expect {w.shape[2]} unknowns, history has "
            f"shape {lam.shape}"
        )
    rows = w.shape[1]
    # One BLAS product gives B[m, :, k] = S_m lam_k; the causal
    # convolution is then the sum over the anti-diagonals n = m + k.
    b = (w.reshape(n_keep * rows, -1) @ lam.T).reshape(n_keep, rows, n_keep)
    out = np.zeros((n_keep, rows))
    for m in range(n_keep):
        out[m:] += b[m, :, : n_keep - m].T
    return out
