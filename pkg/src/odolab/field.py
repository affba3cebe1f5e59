"""Discrete bilaplacian Gaussian fields chi and eta on Z_n^d.

``chi`` is centered with covariance::

    H(x, y) = n^-d / 16 * sum_{a != 0} psi_a(y - x) / (sum_i sin^2(pi a_i / n))^2

and ``eta = Y + chi`` with an independent ``Y ~ N(0, (2d)^-2 n^d L^2)``.
Samples are synthesized in frequency space from Hermitian-paired complex
Gaussians; the dense Cholesky route is kept for cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from odolab.green import mass_constant_L
from odolab.sandpile import make_rng
from odolab.torus import TorusLattice, eigenvalue_grid, idft, sin2_sum_grid

__all__ = [
    "FieldSample",
    "covariance_table",
    "covariance_H",
    "covariance_matrix",
    "hermitian_pairing",
    "chi_from_normals",
    "sample_chi",
    "sample_chi_batch",
    "sample_eta",
    "eta_shift_variance",
    "dense_chi_from_normals",
]

IMAG_TOL = 1e-10


@dataclass
class FieldSample:
    lattice: TorusLattice
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("chi", "eta", "w"):
            raise ValueError(f"unknown field kind {self.kind!r}")


def _spectral_weights(lattice: TorusLattice) -> np.ndarray:
    """n^-d / (16 S(a)^2) with S = sum sin^2, zero at a = 0."""
    S = sin2_sum_grid(lattice)
    out = np.zeros_like(S)
    nz = S > 0
    out[nz] = 1.0 / (16.0 * S[nz] ** 2 * lattice.size)
    return out


def covariance_table(lattice: TorusLattice) -> np.ndarray:
    """H(0, r) for every difference ``r``."""
    return idft(_spectral_weights(lattice)).real


def covariance_H(lattice: TorusLattice, x, y) -> float:
    lat = lattice
    r = tuple((int(b) - int(a)) % lat.n for a, b in zip(lat.wrap(x), lat.wrap(y)))
    return float(covariance_table(lat)[r])


def covariance_matrix(lattice: TorusLattice) -> np.ndarray:
    """Dense ``size x size`` covariance; intended for small lattices."""
    if lattice.size > 4096:
        raise ValueError("dense covariance limited to 4096 sites")
    table = covariance_table(lattice)
    axes = tuple(range(lattice.d))
    return np.stack([np.roll(table, x, axis=axes).ravel() for x in lattice.sites()])


@lru_cache(maxsize=64)
def hermitian_pairing(lattice: TorusLattice) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split nonzero frequencies into ``(reps, partners, self_conjugate)``.

    ``reps[i]`` and ``partners[i]`` are flat indices of ``a`` and ``-a`` with
    ``reps[i] < partners[i]``; ``self_conjugate`` lists the nonzero ``a``
    with ``2a = 0 mod n``.  All arrays are in increasing flat order.
    """
    grid = np.indices(lattice.shape).reshape(lattice.d, -1)
    neg = np.ravel_multi_index(tuple((-grid) % lattice.n), lattice.shape)
    flat = np.arange(lattice.size)
    reps = flat[(flat < neg) & (flat != 0)]
    selfc = flat[(flat == neg) & (flat != 0)]
    return reps, neg[reps], selfc


def n_normals(lattice: TorusLattice) -> int:
    """Real standard normals consumed by one chi sample."""
    reps, _, selfc = hermitian_pairing(lattice)
    return 2 * reps.size + selfc.size


def chi_from_normals(lattice: TorusLattice, xi: np.ndarray) -> np.ndarray:
    """Spectral synthesis of chi from ``n_normals`` real standard normals.

    Accepts a leading batch axis.  ``chi_hat(a) = n^-d/2 Z_a / (-lambda_a)``
    with ``Z_a = (xi_1 + i xi_2) / sqrt(2)`` on paired frequencies, ``Z_-a =
    conj(Z_a)``, and ``Z_a = xi`` on self-conjugate ones.
    """
    reps, partners, selfc = hermitian_pairing(lattice)
    xi = np.asarray(xi, dtype=np.float64)
    batch = xi.shape[:-1]
    m = reps.size
    coeff = np.zeros(batch + (lattice.size,), dtype=np.complex128)
    z = (xi[..., :m] + 1j * xi[..., m : 2 * m]) / np.sqrt(2.0)
    coeff[..., reps] = z
    coeff[..., partners] = np.conj(z)
    coeff[..., selfc] = xi[..., 2 * m :]
    scale = np.zeros(lattice.size)
    lam = eigenvalue_grid(lattice).ravel()
    nz = lam != 0
    scale[nz] = 1.0 / (np.sqrt(lattice.size) * -lam[nz])
    coeff = (coeff * scale).reshape(batch + lattice.shape)
    axes = tuple(range(-lattice.d, 0))
    chi = np.fft.ifftn(coeff, axes=axes) * lattice.size
    resid = np.max(np.abs(chi.imag)) if chi.size else 0.0
    if resid > IMAG_TOL:
        raise ArithmeticError(f"imaginary residue {resid:.2e} in real field synthesis")
    return chi.real


def sample_chi(lattice: TorusLattice, seed) -> FieldSample:
    xi = make_rng(seed).standard_normal(n_normals(lattice))
    return FieldSample(lattice, chi_from_normals(lattice, xi), "chi")


def sample_chi_batch(lattice: TorusLattice, count: int, seed) -> np.ndarray:
    """``count`` independent chi samples drawn from one generator."""
    xi = make_rng(seed).standard_normal((count, n_normals(lattice)))
    return chi_from_normals(lattice, xi)


def eta_shift_variance(lattice: TorusLattice) -> float:
    """Variance (2d)^-2 n^d L^2 of the constant shift Y."""
    L = mass_constant_L(lattice, method="spectral")
    return lattice.size * L**2 / lattice.degree**2


def sample_eta(lattice: TorusLattice, seed) -> FieldSample:
    rng = make_rng(seed)
    xi = rng.standard_normal(n_normals(lattice))
    y = rng.standard_normal() * np.sqrt(eta_shift_variance(lattice))
    return FieldSample(lattice, chi_from_normals(lattice, xi) + y, "eta")


def dense_chi_from_normals(lattice: TorusLattice, xi: np.ndarray) -> np.ndarray:
    """Cholesky-style synthesis ``chi = A xi`` with ``A A^T = H``.

    ``H`` is singular (constants are in its kernel), so ``A`` comes from
    the symmetric eigendecomposition with negative round-off clipped.
    """
    C = covariance_matrix(lattice)
    w, V = np.linalg.eigh(C)
    A = V * np.sqrt(np.clip(w, 0.0, None))
    xi = np.asarray(xi, dtype=np.float64)
    return (xi @ A.T).reshape(xi.shape[:-1] + lattice.shape)
