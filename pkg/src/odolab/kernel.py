"""Bilaplacian covariance kernel on the unit torus T^d.

Two independent evaluation routes:

* direct lattice sums over the cube ``0 < |nu|_inf <= M`` (compiled kernel),
  used for ``d <= 3`` where ``sum |nu|^-4`` converges;
* a heat-kernel representation.  Writing ``|w|^-4 = int_0^inf t e^{-t|w|^2} dt``
  turns the Gaussian-mollified sum into a one-dimensional integral of a
  product of 1D theta series::

      K_kappa(theta) = int_0^inf t (prod_i th(t + kappa^2, theta_i) - 1) dt,
      th(s, x)       = sum_k exp(-s k^2) cos(2 pi k x)

  and ``th`` is evaluated through its Jacobi transform for small ``s``.
  With ``kappa = 0`` and ``theta != 0`` the integral is the periodized
  kernel itself, in any dimension.

For ``d >= 5`` the periodized kernel has the leading singularity
``pi^(4-d/2) Gamma((d-4)/2) |theta|^(4-d)`` at the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from odolab._backend import kernels

__all__ = [
    "KernelValue",
    "DivergentSum",
    "SingularPoint",
    "DEFAULT_CUTOFF",
    "bernoulli4",
    "kernel_d1_closed_form",
    "lowdim_tail_bound",
    "kernel_lowdim",
    "theta_series",
    "kernel_mollified",
    "kernel_mollified_direct",
    "kernel_periodized",
    "richardson_kappa",
    "singularity_coefficient",
    "periodized_singularity",
]

DEFAULT_CUTOFF = {1: 10**4, 2: 200, 3: 200}
HIGH_DIM_CUTOFF = 64

# log-variable grid for the heat-kernel integral
_U_MIN, _U_MAX, _U_STEP = -80.0, math.log(80.0), 0.01


class DivergentSum(ValueError):
    pass


class SingularPoint(ValueError):
    pass


@dataclass
class KernelValue:
    value: float
    error_bound: float
    cutoff: int | None = None

    def __float__(self):
        return self.value


def _as_theta(theta, d: int | None = None) -> np.ndarray:
    th = np.atleast_1d(np.asarray(theta, dtype=np.float64)).reshape(-1)
    if d is not None and th.size != d:
        raise ValueError(f"theta has {th.size} components, expected {d}")
    # reduce to [-1/2, 1/2)
    return th - np.floor(th + 0.5)


def bernoulli4(x):
    x = np.asarray(x, dtype=np.float64)
    return x**4 - 2 * x**3 + x**2 - 1.0 / 30.0


def kernel_d1_closed_form(theta) -> float:
    """sum_{nu != 0} e^{2 pi i nu theta} / nu^4 = -(2 pi^4 / 3) B_4({theta})."""
    frac = float(np.mod(theta, 1.0))
    return float(-(2 * math.pi**4 / 3) * bernoulli4(frac))


def _shell_count(k: int, d: int) -> int:
    return (2 * k + 1) ** d - (2 * k - 1) ** d


def lowdim_tail_bound(d: int, M: int) -> float:
    """Upper bound on sum_{|nu|_inf > M} |nu|^-4 for d <= 3."""
    if d == 1:
        return 2.0 / (3.0 * M**3)
    if d == 2:
        # shell of 8k points, |nu| >= k
        return 4.0 / M**2
    if d == 3:
        # shell of 24 k^2 + 2 points
        return 24.0 / M + 2.0 / (3.0 * M**3)
    raise DivergentSum(f"sum of |nu|^-4 diverges in d={d}")


def kernel_lowdim(d: int, theta, cutoff: int | None = None) -> KernelValue:
    """K(theta) = sum_{nu != 0} e^{2 pi i theta.nu} / |nu|^4 by direct summation."""
    if d >= 4:
        raise DivergentSum(f"bare kernel sum diverges for d={d}; use kernel_mollified")
    M = DEFAULT_CUTOFF[d] if cutoff is None else int(cutoff)
    if M < 1:
        raise ValueError("cutoff must be >= 1")
    th = _as_theta(theta, d)
    val = kernels.lattice_cosine_sum(th, M, 4.0, 0.0)
    return KernelValue(float(val), lowdim_tail_bound(d, M), M)


def theta_series(s, x, cutoff: int | None = None) -> np.ndarray:
    """th(s, x) = sum_{|k| <= cutoff} exp(-s k^2) cos(2 pi k x), vectorized over ``s``.

    Without a cutoff the full series is summed, switching to the Jacobi form
    ``sqrt(pi/s) sum_m exp(-pi^2 (x+m)^2 / s)`` for ``s < pi``.
    """
    s = np.asarray(s, dtype=np.float64)
    x = float(x) - math.floor(float(x) + 0.5)
    if cutoff is not None:
        k = np.arange(1, int(cutoff) + 1, dtype=np.float64)
        return 1.0 + 2.0 * (np.exp(-np.multiply.outer(s, k * k)) @ np.cos(2 * np.pi * k * x))
    out = np.empty_like(s)
    small = s < math.pi
    # exp(-s k^2) < 1e-18 beyond k^2 = 42 / s
    if np.any(~small):
        sb = s[~small]
        kmax = int(math.ceil(math.sqrt(42.0 / sb.min())))
        k = np.arange(1, kmax + 1, dtype=np.float64)
        out[~small] = 1.0 + 2.0 * (np.exp(-np.multiply.outer(sb, k * k)) @ np.cos(2 * np.pi * k * x))
    if np.any(small):
        ss = s[small]
        # image terms with pi^2 (x+m)^2 / s < 42 for the largest s (< pi)
        mmax = int(math.ceil(math.sqrt(42.0 * math.pi) / math.pi)) + 1
        m = np.arange(-mmax, mmax + 1, dtype=np.float64)
        arg = -(math.pi**2) * np.divide.outer((x + m) ** 2, ss)
        out[small] = np.sqrt(math.pi / ss) * np.exp(arg).sum(axis=0)
    return out


def _heat_integral(theta: np.ndarray, kappa: float, cutoff: int | None) -> float:
    u = np.arange(_U_MIN, _U_MAX + _U_STEP / 2, _U_STEP)
    t = np.exp(u)
    s = t + kappa * kappa
    prod = np.ones_like(s)
    for x in theta:
        prod = prod * theta_series(s, x, cutoff)
    # dt = t du, integrand t (prod - 1) dt; trapezoid in u is spectrally accurate
    f = t * t * (prod - 1.0)
    return float(_U_STEP * (f.sum() - 0.5 * (f[0] + f[-1])))


def kernel_mollified(d: int, theta, kappa: float, cutoff: int | None = None) -> KernelValue:
    """sum_{w != 0} exp(-kappa^2 |w|^2) e^{2 pi i theta.w} / |w|^4.

    ``cutoff=None`` sums all of Z^d; an integer ``M`` restricts to the cube
    ``|w|_inf <= M`` (the partial sum is then exact, not an approximation).
    The reported error bound is the quadrature resolution plus, for a
    finite cutoff, nothing further.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive; use kernel_periodized for kappa = 0")
    th = _as_theta(theta, d)
    val = _heat_integral(th, float(kappa), cutoff)
    return KernelValue(val, 1e-9 * max(1.0, abs(val)), cutoff)


def kernel_mollified_direct(d: int, theta, kappa: float, cutoff: int) -> float:
    """Same cube partial sum as :func:`kernel_mollified`, by brute force."""
    th = _as_theta(theta, d)
    return float(kernels.lattice_cosine_sum(th, int(cutoff), 4.0, float(kappa)))


def kernel_periodized(d: int, theta) -> float:
    """kappa -> 0 limit of :func:`kernel_mollified` (the periodized kernel).

    Finite for ``theta != 0`` in every dimension, and at ``theta = 0`` for
    ``d <= 3``.
    """
    th = _as_theta(theta, d)
    if d >= 4 and not np.any(th):
        raise SingularPoint(f"periodized kernel is infinite at theta = 0 for d={d}")
    return _heat_integral(th, 0.0, None)


def richardson_kappa(d: int, theta, kappa0: float, levels: int = 4) -> KernelValue:
    """Extrapolate kernel_mollified to kappa -> 0 from kappa0 / 2^j, j < levels.

    The mollified value is a smooth function of ``kappa^2`` away from the
    origin, so the table eliminates powers of ``kappa^2`` (ratio 4).  The
    error estimate is the change made by the last column.
    """
    if levels < 2:
        raise ValueError("need at least two levels")
    table = [[kernel_mollified(d, theta, kappa0 / 2**j).value] for j in range(levels)]
    for j in range(1, levels):
        for k in range(1, j + 1):
            f = 4.0**k
            table[j].append((f * table[j][k - 1] - table[j - 1][k - 1]) / (f - 1.0))
    best = table[-1][-1]
    err = max(abs(best - table[-1][-2]), 1e-15 * abs(best))
    return KernelValue(best, err)


def singularity_coefficient(d: int) -> float:
    """pi^(4 - d/2) Gamma((d-4)/2); equals pi^2 for d = 5."""
    if d < 5:
        raise ValueError("singular expansion is stated for d >= 5")
    return math.pi ** (4 - d / 2) * math.gamma((d - 4) / 2)


def periodized_singularity(d: int, theta, shells: int = 1) -> float:
    """Leading singular part summed over images ``|w|_inf <= shells``."""
    if shells < 1:
        raise ValueError("shells must be >= 1")
    th = _as_theta(theta, d)
    if not np.any(th):
        raise SingularPoint("theta = 0 mod Z^d")
    rng = np.arange(-shells, shells + 1)
    images = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), axis=-1).reshape(-1, d)
    r = np.linalg.norm(th + images, axis=1)
    # pairwise summation in numpy keeps the result reproducible
    return float(singularity_coefficient(d) * np.sum(r ** (4.0 - d)))
