"""Green's function of simple random walk on Z_n^d and the spectral odometer.

``g(x, y)`` is the average over targets ``z`` of the expected number of
visits to ``y`` before hitting ``z``, for the walk started at ``x``.  Its
zero-frequency value is the constant ``L``; away from zero,
``lambda_a * g_hat_x(a) = -2d n^-d psi_{-a}(x)``, which gives::

    g(x, y) = L + (2d / n^d) sum_{a != 0} psi_a(y - x) / (-lambda_a)
    L       = (2d / n^d) sum_{a != 0} 1 / (-lambda_a)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from odolab.sandpile import Odometer, SandpileConfig
from odolab.torus import TorusLattice, dft, eigenvalue_grid, idft, neighbor_table

__all__ = [
    "SolveFailure",
    "ZeroMeanViolation",
    "GreenTable",
    "hitting_times_to",
    "expected_hitting_time",
    "mass_constant_L",
    "green_function",
    "poisson_solve",
    "spectral_odometer",
    "w_field",
]

HITTING_SIZE_LIMIT = 10**4


class SolveFailure(RuntimeError):
    pass


class ZeroMeanViolation(ValueError):
    pass


def _inverse_eigs(lattice: TorusLattice) -> np.ndarray:
    """1 / (-lambda_a) with the zero frequency set to 0."""
    lam = eigenvalue_grid(lattice)
    inv = np.zeros_like(lam)
    nz = lam != 0
    inv[nz] = 1.0 / -lam[nz]
    return inv


def hitting_times_to(lattice: TorusLattice, z) -> np.ndarray:
    """E_x[tau_z] for every start ``x``, by a sparse linear solve.

    ``h(z) = 0`` and ``2d h(x) - sum_{y~x} h(y) = 2d`` for ``x != z``.
    """
    if lattice.size > HITTING_SIZE_LIMIT:
        raise ValueError(f"hitting-time solve limited to {HITTING_SIZE_LIMIT} sites")
    size, deg = lattice.size, lattice.degree
    zi = lattice.index(z)
    nbr = neighbor_table(lattice)
    rows = np.repeat(np.arange(size), deg)
    A = sp.coo_matrix((-np.ones(size * deg), (rows, nbr.ravel())), shape=(size, size)).tocsr()
    A = A + deg * sp.identity(size, format="csr")
    keep = np.flatnonzero(np.arange(size) != zi)
    A = A[keep][:, keep]
    rhs = np.full(keep.size, float(deg))
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            sol = spsolve(A.tocsc(), rhs)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise SolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SolveFailure("non-finite hitting times")
    h = np.zeros(size)
    h[keep] = sol
    return h.reshape(lattice.shape)


def expected_hitting_time(lattice: TorusLattice, x, z) -> float:
    return float(hitting_times_to(lattice, z)[lattice.wrap(x)])


def mass_constant_L(lattice: TorusLattice, x=None, method: str = "auto") -> float:
    """L = n^-2d sum_q E_x[tau_q].

    ``method="hitting"`` averages absorbing-walk solves (one per target),
    ``"spectral"`` uses the closed form in the module docstring; ``"auto"``
    takes the former only on small lattices.
    """
    if method == "auto":
        method = "hitting" if lattice.size <= 256 else "spectral"
    if method == "spectral":
        return float(lattice.degree * _inverse_eigs(lattice).sum() / lattice.size)
    if method != "hitting":
        raise ValueError(f"unknown method {method!r}")
    x = lattice.wrap(x if x is not None else (0,) * lattice.d)
    total = sum(hitting_times_to(lattice, q)[x] for q in lattice.sites())
    return float(total / lattice.size**2)


@dataclass
class GreenTable:
    """Translation-invariant ``g`` stored as its difference table ``g(0, r)``."""

    lattice: TorusLattice
    values: np.ndarray
    L: float

    def __call__(self, x, y) -> float:
        lat = self.lattice
        r = tuple((int(b) - int(a)) % lat.n for a, b in zip(lat.wrap(x), lat.wrap(y)))
        return float(self.values[r])

    def matrix(self) -> np.ndarray:
        """Dense ``size x size`` matrix ``g(x, y)``; for small lattices only."""
        lat = self.lattice
        out = np.empty((lat.size, lat.size))
        for i, x in enumerate(lat.sites()):
            out[i] = np.roll(self.values, x, axis=tuple(range(lat.d))).ravel()
        return out


def green_function(lattice: TorusLattice) -> GreenTable:
    size = lattice.size
    coeffs = lattice.degree * _inverse_eigs(lattice) / size
    L = float(coeffs.sum())
    coeffs.flat[0] = L
    values = idft(coeffs).real
    return GreenTable(lattice, values, L)


def poisson_solve(rhs: np.ndarray, lattice: TorusLattice) -> np.ndarray:
    """Solve ``Delta_g v = rhs`` in the gauge ``v_hat(0) = 0``.

    ``rhs`` must have zero sum up to ``1e-6 * size``.
    """
    rhs = np.asarray(lattice.check(rhs), dtype=np.float64)
    if abs(rhs.sum()) > 1e-6 * lattice.size:
        raise ZeroMeanViolation(f"right-hand side sums to {rhs.sum():.3e}")
    lam = eigenvalue_grid(lattice)
    R = dft(rhs)
    V = np.zeros_like(R)
    nz = lam != 0
    V[nz] = R[nz] / lam[nz]
    return idft(V).real


def spectral_odometer(s: SandpileConfig) -> Odometer:
    """Odometer from the Poisson equation ``Delta_g e = 2d (1 - s)``, ``min e = 0``.

    Equivalently ``Delta_g (e / 2d) = 1 - s`` for the per-edge odometer.
    """
    lat = s.lattice
    v = poisson_solve(lat.degree * (1.0 - s.mass), lat)
    return Odometer(lat, v - v.min())


def w_field(sigma: np.ndarray, lattice: TorusLattice | None = None) -> np.ndarray:
    """w(y) = (2d)^-1 sum_x g(x, y) sigma(x), as a circular convolution."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if lattice is None:
        lattice = TorusLattice(sigma.ndim, sigma.shape[0])
    sigma = lattice.check(sigma)
    S = dft(sigma)
    W = _inverse_eigs(lattice) * S
    W.flat[0] = lattice.size * mass_constant_L(lattice, method="spectral") * S.flat[0] / lattice.degree
    return idft(W).real
