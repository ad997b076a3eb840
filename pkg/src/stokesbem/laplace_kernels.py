"""Laplace-domain kernels of the transient Stokes single-layer operator.

Applying the Laplace transform to the time-dependent Stokes system yields
the resolvent (Brinkman) problem, whose fundamental velocity tensor is

    E_u(r; s) = 1 / (4 (d-1) pi nu) * [ A_d(z) / r^(d-2) * I
                                        + B_d(z) / r^d * (r x r) ],

with ``r = |r|``, ``z = sqrt(s) r``, and ``I`` the d x d identity.  The
accompanying pressure vector

    e_p(r) = r / (2 (d-1) pi r^d)

is the negative gradient of the fundamental solution of the Laplacian and
does not depend on ``s``.  The scalar profiles are

    A_2(z) = 2 (K_0(z) + K_1(z)/z - 1/z^2),
    B_2(z) = 2 (2/z^2 - K_2(z)),
    A_3(z) = 2 z^{-2} (e^{-z} (z^2 + z + 1) - 1),
    B_3(z) = -2 z^{-2} (e^{-z} (z^2 + 3z + 3) - 3),

where ``K_l`` is the modified Bessel function of order ``l``.  All four are
numerically delicate near ``z = 0``: the closed forms subtract nearly equal
terms of size ``|z|^-2`` while the limits are finite (all four tend to 1).
Below ``SERIES_SWITCH_RADIUS`` the implementation therefore switches to
explicit power series in which the cancellation has been carried out
analytically.

The frequency ``s`` may be any complex number off the half-line
``(-inf, 0]``; its square root is always taken with the principal
determination, so that ``Re sqrt(s) > 0`` and the kernels decay
exponentially in ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

# Euler-Mascheroni constant, to double precision.
EULER_GAMMA = 0.5772156649015328606

#: below this |z| the scalar profiles A_d, B_d use their cancellation-free
#: power series; above it the closed forms built on Bessel/exponential
#: evaluations are stable.
SERIES_SWITCH_RADIUS = 0.5

#: |z| at which K_0/K_1 switch from the ascending series to the
#: continued-fraction evaluation.  The series keeps 12 significant digits
#: up to here (mild log/series cancellation); the continued fraction is
#: slowest just above its lower range, so the switch sits where both are
#: accurate and neither is slow.
BESSEL_SWITCH_RADIUS = 4.0

#: |z| beyond which K_0/K_1 use the divergent asymptotic expansion,
#: truncated at a fixed depth chosen so the smallest term is below
#: roundoff throughout the branch.
ASYMPTOTIC_SWITCH_RADIUS = 30.0

#: Re(z) beyond which exp(-z) underflows in double precision; the Bessel
#: factors are flushed to exact zero there (the algebraic 1/z^2 tails of
#: A_2, B_2 survive).
UNDERFLOW_REAL_PART = 745.0

#: power-series terms are accumulated until they drop below this magnitude.
SERIES_TERM_FLOOR = 1e-18

_MAX_SERIES_TERMS = 34
_CF_MAX_ITER = 400


def principal_sqrt(s: complex) -> complex:
    """Principal square root of a frequency off the negative real axis.

    Parameters
    ----------
    s : complex
        Laplace parameter; must not lie on ``(-inf, 0]``.

    Returns
    -------
    complex
        ``|s|^(1/2) exp(i Arg(s) / 2)`` with ``Arg`` in ``(-pi, pi)``; the
        real part is strictly positive.

    Raises
    ------
    ValueError
        If ``s`` lies on the branch cut ``(-inf, 0]``.
    """
    s = complex(s)
    if s.imag == 0.0 and s.real <= 0.0:
        raise ValueError(f"frequency {s} lies on the cut (-inf, 0]")
    root = complex(np.sqrt(complex(s)))
    # numpy's principal branch lands exactly on Arg/2; guard the sign anyway
    if root.real < 0.0:
        root = -root
    return root


@dataclass(frozen=True)
class ComplexFrequency:
    """A Laplace frequency with its principal root and sector data.

    Attributes
    ----------
    s : complex
        The frequency itself, any point of ``C \\ (-inf, 0]``.
    sqrt_s : complex
        Principal square root, ``Re sqrt_s > 0``.
    omega : float
        ``Re sqrt_s``; controls the exponential decay rate of the kernels.
    omega_lower : float
        ``min(1, omega)``.
    """

    s: complex
    sqrt_s: complex = field(init=False)
    omega: float = field(init=False)
    omega_lower: float = field(init=False)

    def __post_init__(self) -> None:
        root = principal_sqrt(self.s)
        object.__setattr__(self, "s", complex(self.s))
        object.__setattr__(self, "sqrt_s", root)
        object.__setattr__(self, "omega", root.real)
        object.__setattr__(self, "omega_lower", min(1.0, root.real))


@dataclass(frozen=True)
class ProblemConfig:
    """Physical configuration: viscosity and space dimension."""

    nu: float = 1.0
    dimension: int = 2

    def __post_init__(self) -> None:
        if not self.nu > 0.0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")

    @property
    def kernel_prefactor(self) -> float:
        """The scaling ``1 / (4 (d-1) pi nu)`` of the velocity kernel."""
        return 1.0 / (4.0 * (self.dimension - 1) * math.pi * self.nu)


@dataclass(frozen=True)
class KernelTensor:
    """Value of the velocity kernel ``E_u(r; s)``: a symmetric d x d matrix."""

    entries: np.ndarray
    dimension: int

    def __post_init__(self) -> None:
        e = np.asarray(self.entries, dtype=complex)
        if e.shape != (self.dimension, self.dimension):
            raise ValueError(f"entries shape {e.shape} does not match d={self.dimension}")
        object.__setattr__(self, "entries", e)


def _require_right_half_plane(z: np.ndarray) -> None:
    if np.any(z.real <= 0.0):
        bad = z.flat[np.argmax(z.real <= 0.0)]
        raise ValueError(f"argument {bad} has Re <= 0; kernels need Re z > 0")


def _k01_series(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending series for K_0, K_1 (complex z, |z| up to the switch).

    Uses the standard log-type expansions

        K_0 = -(log(z/2) + g) I_0 + sum_{k>=1} H_k u^k / (k!)^2,
        K_1 = 1/z + log(z/2) I_1 - (z/4) sum (H_k + H_{k+1} - 2g) u^k / (k!(k+1)!),

    with ``u = z^2/4``, ``H_k`` the harmonic numbers and ``g`` Euler's
    constant.
    """
    u = z * z / 4.0
    logz2 = np.log(z / 2.0)
    i0 = np.zeros_like(z)
    i1s = np.zeros_like(z)          # I_1 / (z/2)
    k0s = np.zeros_like(z)
    k1s = np.zeros_like(z)
    term0 = np.ones_like(z)         # u^k / (k!)^2
    term1 = np.ones_like(z)         # u^k / (k!(k+1)!)
    harmonic = 0.0
    for k in range(_MAX_SERIES_TERMS):
        i0 += term0
        i1s += term1
        if k >= 1:
            k0s += harmonic * term0
        k1s += (2.0 * harmonic + 1.0 / (k + 1.0) - 2.0 * EULER_GAMMA) * term1
        term0 = term0 * u / ((k + 1.0) ** 2)
        term1 = term1 * u / ((k + 1.0) * (k + 2.0))
        harmonic += 1.0 / (k + 1.0)
        if np.max(np.abs(term0)) < SERIES_TERM_FLOOR:
            break
    i1 = 0.5 * z * i1s
    k0 = -(logz2 + EULER_GAMMA) * i0 + k0s
    k1 = 1.0 / z + logz2 * i1 - 0.25 * z * k1s
    return k0, k1


def _k01_continued_fraction(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Steed/Lentz continued fraction for K_0, K_1 (Re z > 0, large |z|).

    Evaluates the second continued fraction of the Bessel K recurrences
    with vectorized Lentz iteration.  Converged lanes are retired from
    the working set each sweep, so the cost is governed by the mean
    iteration count (small arguments near the switch radius converge
    slowest) rather than the worst lane.
    """
    zf = np.asarray(z, dtype=complex).ravel()
    n = zf.size
    h_out = np.empty(n, dtype=complex)
    s_out = np.empty(n, dtype=complex)
    idx = np.arange(n)
    b = 2.0 * (1.0 + zf)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros(n, dtype=complex)
    q2 = np.ones(n, dtype=complex)
    a1 = 0.25
    q = np.full(n, a1, dtype=complex)
    c = np.full(n, a1, dtype=complex)
    a = -a1
    ssum = 1.0 + q * delh
    for i in range(2, _CF_MAX_ITER):
        a -= 2.0 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = h + delh
        dels = q * delh
        ssum = ssum + dels
        done = np.abs(dels) <= 1e-16 * np.abs(ssum)
        n_done = int(done.sum())
        # retire converged lanes in batches to keep slicing cost low
        if n_done == idx.size or n_done >= max(512, idx.size // 4):
            h_out[idx[done]] = h[done]
            s_out[idx[done]] = ssum[done]
            keep = ~done
            idx = idx[keep]
            if idx.size == 0:
                break
            b, d, h, delh = b[keep], d[keep], h[keep], delh[keep]
            q1, q2, q, c = q1[keep], q2[keep], q[keep], c[keep]
            ssum = ssum[keep]
    if idx.size:
        raise ValueError("continued fraction for K_0/K_1 did not converge")
    h_out = a1 * h_out
    k0 = np.sqrt(np.pi / (2.0 * zf)) * np.exp(-zf) / s_out
    k1 = k0 * (zf + 0.5 - h_out) / zf
    shape = np.asarray(z).shape
    return k0.reshape(shape), k1.reshape(shape)


def _k01_asymptotic_coefficients(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients a_k(nu) of K_nu(z) ~ sqrt(pi/2z) e^-z sum a_k z^-k."""
    a0 = np.empty(n)
    a1 = np.empty(n)
    a0[0] = a1[0] = 1.0
    for k in range(1, n):
        j = 2 * k - 1
        a0[k] = a0[k - 1] * (0.0 - j * j) / (8.0 * k)
        a1[k] = a1[k - 1] * (4.0 - j * j) / (8.0 * k)
    return a0, a1


_K0_ASYMPTOTIC, _K1_ASYMPTOTIC = _k01_asymptotic_coefficients(19)


def _k01_asymptotic(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Large-argument expansion of K_0, K_1; |z| above the asymptotic switch.

    The fixed truncation depth keeps the first omitted term below
    roundoff at the switch radius and beyond.
    """
    w = 1.0 / z
    p0 = np.full_like(z, _K0_ASYMPTOTIC[-1])
    p1 = np.full_like(z, _K1_ASYMPTOTIC[-1])
    for c0, c1 in zip(_K0_ASYMPTOTIC[-2::-1], _K1_ASYMPTOTIC[-2::-1]):
        p0 = p0 * w + c0
        p1 = p1 * w + c1
    front = np.sqrt(np.pi / (2.0 * z)) * np.exp(-z)
    return front * p0, front * p1


def _k01(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """K_0 and K_1 on an array of complex arguments with Re z > 0."""
    z = np.asarray(z, dtype=complex)
    k0 = np.zeros_like(z)
    k1 = np.zeros_like(z)
    live = z.real <= UNDERFLOW_REAL_PART    # beyond: exp(-z) underflows, K ~ 0
    mag = np.abs(z)
    small = live & (mag <= BESSEL_SWITCH_RADIUS)
    mid = live & ~small & (mag < ASYMPTOTIC_SWITCH_RADIUS)
    far = live & (mag >= ASYMPTOTIC_SWITCH_RADIUS)
    if small.any():
        k0[small], k1[small] = _k01_series(z[small])
    if mid.any():
        k0[mid], k1[mid] = _k01_continued_fraction(z[mid])
    if far.any():
        k0[far], k1[far] = _k01_asymptotic(z[far])
    return k0, k1


def bessel_k(order: int, z):
    """Modified Bessel function ``K_order(z)`` for complex ``z``, Re z > 0.

    Parameters
    ----------
    order : int
        0, 1 or 2.
    z : complex or array_like
        Argument(s) in the open right half-plane.

    Returns
    -------
    complex or ndarray
        Function values; exact 0 where ``Re z > 745`` (underflow of the
        exponential factor).

    Raises
    ------
    ValueError
        For an unsupported order or an argument with ``Re z <= 0``.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    za = np.atleast_1d(np.asarray(z, dtype=complex))
    _require_right_half_plane(za)
    k0, k1 = _k01(za)
    if order == 0:
        out = k0
    elif order == 1:
        out = k1
    else:
        out = k0 + 2.0 * k1 / za
    if np.isscalar(z) or np.asarray(z).ndim == 0:
        return complex(out[0])
    return out.reshape(np.asarray(z).shape)


def _ab2_series(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cancellation-free power series for A_2, B_2 (|z| <= ~0.5).

    Derived by inserting the Bessel series into the closed forms and
    cancelling the 1/z^2 and log singularities analytically:

        A_2 = -2 (L + g) I_0 + L * S_1 + 2 sum_{k>=1} H_k u^k/(k!)^2
              - (1/2) sum (2H_k + 1/(k+1) - 2g) u^k/(k!(k+1)!),
        B_2 = 1 + 2 L I_2 - u sum (2H_k + 1/(k+1) + 1/(k+2) - 2g) u^k/(k!(k+2)!),

    with ``u = z^2/4``, ``L = log(z/2)`` and ``S_1 = sum u^k/(k!(k+1)!)``.
    """
    u = z * z / 4.0
    logz2 = np.log(z / 2.0)
    s_i0 = np.zeros_like(z)
    s_j = np.zeros_like(z)
    s_h = np.zeros_like(z)
    s_m1 = np.zeros_like(z)
    s_i2 = np.zeros_like(z)
    s_m2 = np.zeros_like(z)
    t0 = np.ones_like(z)            # u^k / (k!)^2
    t1 = np.ones_like(z)            # u^k / (k!(k+1)!)
    t2 = np.full_like(z, 0.5)       # u^k / (k!(k+2)!)
    harmonic = 0.0
    for k in range(_MAX_SERIES_TERMS):
        s_i0 += t0
        s_j += t1
        if k >= 1:
            s_h += harmonic * t0
        s_m1 += (2.0 * harmonic + 1.0 / (k + 1.0) - 2.0 * EULER_GAMMA) * t1
        s_i2 += t2
        s_m2 += (2.0 * harmonic + 1.0 / (k + 1.0) + 1.0 / (k + 2.0)
                 - 2.0 * EULER_GAMMA) * t2
        t0 = t0 * u / ((k + 1.0) ** 2)
        t1 = t1 * u / ((k + 1.0) * (k + 2.0))
        t2 = t2 * u / ((k + 1.0) * (k + 3.0))
        harmonic += 1.0 / (k + 1.0)
        if np.max(np.abs(t0)) < SERIES_TERM_FLOOR:
            break
    a2 = -2.0 * (logz2 + EULER_GAMMA) * s_i0 + logz2 * s_j + 2.0 * s_h - 0.5 * s_m1
    b2 = 1.0 + 2.0 * logz2 * (u * s_i2) - u * s_m2
    return a2, b2


def _ab2_closed(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A_2, B_2 from Bessel evaluations (|z| above the series switch)."""
    k0, k1 = _k01(z)
    a2 = 2.0 * (k0 + k1 / z - 1.0 / (z * z))
    b2 = 2.0 * (2.0 / (z * z) - (k0 + 2.0 * k1 / z))
    return a2, b2


def _ab2(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A_2 and B_2 on an array with Re z > 0, branch-switched at 0.5."""
    z = np.asarray(z, dtype=complex)
    a2 = np.empty_like(z)
    b2 = np.empty_like(z)
    small = np.abs(z) <= SERIES_SWITCH_RADIUS
    if small.any():
        a2[small], b2[small] = _ab2_series(z[small])
    if (~small).any():
        a2[~small], b2[~small] = _ab2_closed(z[~small])
    return a2, b2


# Taylor coefficients of A_3 and B_3: coefficient of z^m is _a3_coeff[m].
def _a3b3_coefficients(n: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.empty(n)
    b = np.empty(n)
    for m in range(n):
        k = m + 2
        sign = -1.0 if k % 2 else 1.0
        a[m] = 2.0 * sign * (1.0 / math.factorial(k) - 1.0 / math.factorial(k - 1)
                             + 1.0 / math.factorial(k - 2))
        b[m] = -2.0 * sign * (3.0 / math.factorial(k) - 3.0 / math.factorial(k - 1)
                              + 1.0 / math.factorial(k - 2))
    return a, b


_A3_COEFF, _B3_COEFF = _a3b3_coefficients(30)


def _ab3(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A_3 and B_3 on an array; entire functions, series below 0.5."""
    z = np.asarray(z, dtype=complex)
    a3 = np.empty_like(z)
    b3 = np.empty_like(z)
    small = np.abs(z) <= SERIES_SWITCH_RADIUS
    if small.any():
        zs = z[small]
        pa = np.zeros_like(zs)
        pb = np.zeros_like(zs)
        zp = np.ones_like(zs)
        for m in range(_A3_COEFF.size):
            pa += _A3_COEFF[m] * zp
            pb += _B3_COEFF[m] * zp
            zp = zp * zs
        a3[small] = pa
        b3[small] = pb
    if (~small).any():
        zl = z[~small]
        ez = np.exp(-zl)
        a3[~small] = 2.0 / (zl * zl) * (ez * (zl * zl + zl + 1.0) - 1.0)
        b3[~small] = -2.0 / (zl * zl) * (ez * (zl * zl + 3.0 * zl + 3.0) - 3.0)
    return a3, b3


#: largest |z| for which the log-split companion series below are accurate;
#: callers cap their split region well inside this.
SPLIT_SERIES_RADIUS = 8.0


def _pr2(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Companions of the logarithmic split of the planar profiles.

    ``A_2(z) = -log(z) P(z) + (smooth)`` and ``B_2(z) = log(z) R(z) + (smooth)``
    with

        P(z) = 2 (I_0(z) - I_1(z)/z),      P(0) = 1,
        R(z) = 2 I_2(z),                   R(0) = 0,

    in terms of modified Bessel functions of the first kind.  Evaluated by
    plain series, valid for |z| up to ``SPLIT_SERIES_RADIUS``; the split is
    never used beyond that.
    """
    z = np.asarray(z, dtype=complex)
    u = z * z / 4.0
    i0 = np.zeros_like(z)
    i1s = np.zeros_like(z)          # I_1 / (z/2)
    i2s = np.zeros_like(z)          # I_2 / u
    t0 = np.ones_like(z)
    t1 = np.ones_like(z)
    t2 = np.full_like(z, 0.5)
    for k in range(_MAX_SERIES_TERMS):
        i0 += t0
        i1s += t1
        i2s += t2
        t0 = t0 * u / ((k + 1.0) ** 2)
        t1 = t1 * u / ((k + 1.0) * (k + 2.0))
        t2 = t2 * u / ((k + 1.0) * (k + 3.0))
        if np.max(np.abs(t0)) < SERIES_TERM_FLOOR:
            break
    p = 2.0 * i0 - i1s
    r = 2.0 * u * i2s
    return p, r


def _scalar_pair(dimension: int, z) -> tuple[np.ndarray, np.ndarray]:
    """(A_d, B_d) on an array of arguments, with domain validation."""
    za = np.atleast_1d(np.asarray(z, dtype=complex))
    if dimension == 2:
        _require_right_half_plane(za)
        return _ab2(za)
    if dimension == 3:
        if np.any(za.real < 0.0):
            raise ValueError("A_3/B_3 are evaluated only for Re z >= 0")
        return _ab3(za)
    raise ValueError(f"dimension must be 2 or 3, got {dimension}")


def scalar_A(dimension: int, z):
    """Profile ``A_d(z)`` of the velocity kernel; see the module docstring."""
    a, _ = _scalar_pair(dimension, z)
    if np.isscalar(z) or np.asarray(z).ndim == 0:
        return complex(a[0])
    return a.reshape(np.asarray(z).shape)


def scalar_B(dimension: int, z):
    """Profile ``B_d(z)`` of the velocity kernel; see the module docstring."""
    _, b = _scalar_pair(dimension, z)
    if np.isscalar(z) or np.asarray(z).ndim == 0:
        return complex(b[0])
    return b.reshape(np.asarray(z).shape)


def velocity_kernel(r_vec, freq: ComplexFrequency, cfg: ProblemConfig) -> KernelTensor:
    """Evaluate ``E_u(r; s)`` at a single displacement.

    Parameters
    ----------
    r_vec : array_like
        Displacement vector of length ``cfg.dimension``; must be nonzero.
    freq : ComplexFrequency
        Laplace frequency.
    cfg : ProblemConfig
        Viscosity and dimension.

    Returns
    -------
    KernelTensor
        Symmetric d x d tensor ``1/(4(d-1) pi nu) [A_d(z)/r^{d-2} I
        + B_d(z)/r^d r x r]`` with ``z = sqrt(s) r``.
    """
    r = np.asarray(r_vec, dtype=float)
    if r.shape != (cfg.dimension,):
        raise ValueError(f"displacement shape {r.shape} does not match d={cfg.dimension}")
    dist = float(np.hypot.reduce(r) if cfg.dimension == 2 else np.linalg.norm(r))
    if dist == 0.0:
        raise ValueError("velocity kernel is singular at r = 0")
    z = freq.sqrt_s * dist
    a, b = _scalar_pair(cfg.dimension, z)
    a, b = complex(a[0]), complex(b[0])
    rhat = r / dist
    eye = np.eye(cfg.dimension)
    entries = cfg.kernel_prefactor / dist ** (cfg.dimension - 2) * (
        a * eye + b * np.outer(rhat, rhat))
    return KernelTensor(entries=entries, dimension=cfg.dimension)


def pressure_kernel(r_vec, dimension: int) -> np.ndarray:
    """Evaluate the pressure vector ``e_p(r) = r / (2 (d-1) pi r^d)``.

    Real-valued and independent of the frequency; odd in ``r``.
    """
    if dimension not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {dimension}")
    r = np.asarray(r_vec, dtype=float)
    if r.shape != (dimension,):
        raise ValueError(f"displacement shape {r.shape} does not match d={dimension}")
    dist = float(np.linalg.norm(r))
    if dist == 0.0:
        raise ValueError("pressure kernel is singular at r = 0")
    return r / (2.0 * (dimension - 1) * math.pi * dist ** dimension)
