"""Geometry, Fourier analysis and Laplacian spectrum of the discrete torus Z_n^d.

Sites are stored as canonical coordinates ``{0, ..., n-1}^d`` in row-major
order, so a grid function is simply a numpy array of shape ``(n,) * d``.
Frequencies use the same storage layout; their *centered* representative
lies in ``(-n/2, n/2]`` and is the one used for every Euclidean norm.

Transform convention::

    f_hat(a) = n^-d * sum_x f(x) * exp(-2 pi i x.a / n)
    f(x)     = sum_a f_hat(a) * exp(+2 pi i x.a / n)
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "TorusLattice",
    "centered",
    "laplacian_eigenvalue",
    "eigenvalue_grid",
    "sin2_sum_grid",
    "centered_norm2_grid",
    "character",
    "dft",
    "idft",
    "discrete_laplacian",
    "neighbor_table",
    "EigenvalueBoundsReport",
    "eigenvalue_bounds",
]

# Keeps n**d well inside int64 and float64-exact integer range.
_MAX_SIZE = 2**52


@dataclass(frozen=True)
class TorusLattice:
    """The discrete torus Z_n^d with ``n >= 2`` and ``d >= 1``.

    For ``n == 2`` both directional neighbours along an axis are the same
    site, so every site still has ``2d`` neighbours counted with
    multiplicity.
    """

    d: int
    n: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be an integer >= 1, got {self.d!r}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"side length must be an integer >= 2, got {self.n!r}")
        # exact integer arithmetic, no float overflow
        if int(self.n) ** int(self.d) > _MAX_SIZE:
            raise OverflowError(f"lattice size {self.n}^{self.d} exceeds {_MAX_SIZE}")

    @property
    def size(self) -> int:
        return int(self.n) ** int(self.d)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def degree(self) -> int:
        return 2 * self.d

    def index(self, x: Sequence[int]) -> int:
        """Flat row-major index of site ``x`` (coordinates taken mod n)."""
        x = self._coords(x)
        return int(np.ravel_multi_index(tuple(c % self.n for c in x), self.shape))

    def coords(self, i: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(int(i), self.shape))

    def sites(self) -> Iterator[tuple[int, ...]]:
        for i in range(self.size):
            yield self.coords(i)

    def wrap(self, x: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(c) % self.n for c in self._coords(x))

    def _coords(self, x) -> tuple[int, ...]:
        x = tuple(np.atleast_1d(x).tolist())
        if len(x) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(x)}")
        return x

    def zeros(self, dtype=float) -> np.ndarray:
        return np.zeros(self.shape, dtype=dtype)

    def check(self, f: np.ndarray) -> np.ndarray:
        """Return ``f`` as an array of the lattice shape, or raise."""
        f = np.asarray(f)
        if f.shape != self.shape:
            if f.size == self.size and f.ndim == 1:
                return f.reshape(self.shape)
            raise ValueError(f"grid function of shape {f.shape} does not live on {self}")
        return f

    @cached_property
    def axis_centered(self) -> np.ndarray:
        """Centered representatives of the storage frequencies 0..n-1."""
        return centered(np.arange(self.n), self.n)


def centered(a, n: int):
    """Centered representative in ``(-n/2, n/2]``; ``n/2`` maps to ``+n/2``."""
    a = np.mod(a, n)
    return np.where(2 * a > n, a - n, a)


def laplacian_eigenvalue(lattice: TorusLattice, a: Sequence[int]) -> float:
    """lambda_a = -4 * sum_i sin^2(pi a_i / n)."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != lattice.d:
        raise ValueError(f"frequency must have {lattice.d} components")
    return float(-4.0 * np.sum(np.sin(np.pi * a / lattice.n) ** 2))


def _axis_broadcast(values: np.ndarray, axis: int, d: int) -> np.ndarray:
    shape = [1] * d
    shape[axis] = values.size
    return values.reshape(shape)


def sin2_sum_grid(lattice: TorusLattice) -> np.ndarray:
    """sum_i sin^2(pi a_i / n) on the storage frequency grid (= -lambda_a / 4)."""
    s1 = np.sin(np.pi * np.arange(lattice.n) / lattice.n) ** 2
    out = np.zeros(lattice.shape)
    for ax in range(lattice.d):
        out = out + _axis_broadcast(s1, ax, lattice.d)
    return out


def eigenvalue_grid(lattice: TorusLattice) -> np.ndarray:
    return -4.0 * sin2_sum_grid(lattice)


def centered_norm2_grid(lattice: TorusLattice) -> np.ndarray:
    """Squared Euclidean norm of the centered representative of each frequency."""
    c2 = lattice.axis_centered.astype(float) ** 2
    out = np.zeros(lattice.shape)
    for ax in range(lattice.d):
        out = out + _axis_broadcast(c2, ax, lattice.d)
    return out


def character(lattice: TorusLattice, a: Sequence[int]) -> np.ndarray:
    """psi_a(x) = exp(2 pi i x.a / n) as a complex grid function."""
    a = np.asarray(a).reshape(-1)
    phase = np.zeros(lattice.shape)
    x = np.arange(lattice.n)
    for ax in range(lattice.d):
        phase = phase + _axis_broadcast(x * a[ax], ax, lattice.d)
    return np.exp(2j * np.pi * phase / lattice.n)


def dft(f: np.ndarray, lattice: TorusLattice | None = None) -> np.ndarray:
    f = np.asarray(f)
    if lattice is not None:
        f = lattice.check(f)
    return np.fft.fftn(f) / f.size


def idft(F: np.ndarray, lattice: TorusLattice | None = None) -> np.ndarray:
    F = np.asarray(F)
    if lattice is not None:
        F = lattice.check(F)
    return np.fft.ifftn(F) * F.size


def discrete_laplacian(f: np.ndarray) -> np.ndarray:
    """Graph Laplacian sum_{y~x} (f(y) - f(x)) with periodic wrap.

    Works for any ``f`` of shape ``(n,) * d``; for ``n == 2`` the two rolls
    along an axis hit the same neighbour, which is the multiplicity-2 edge.
    """
    f = np.asarray(f)
    out = -2 * f.ndim * f
    for ax in range(f.ndim):
        out = out + np.roll(f, 1, axis=ax) + np.roll(f, -1, axis=ax)
    return out


def neighbor_table(lattice: TorusLattice) -> np.ndarray:
    """``(size, 2d)`` int64 table of flat neighbour indices, with multiplicity."""
    idx = np.arange(lattice.size, dtype=np.int64).reshape(lattice.shape)
    cols = []
    for ax in range(lattice.d):
        cols.append(np.roll(idx, -1, axis=ax).ravel())
        cols.append(np.roll(idx, 1, axis=ax).ravel())
    return np.ascontiguousarray(np.stack(cols, axis=1))


@dataclass
class EigenvalueBoundsReport:
    d: int
    n_max: int
    checked: int
    lower_ok: bool
    mongoose_ok: bool
    c_empirical: float
    worst_lower_ratio: float
    worst_mongoose_ratio: float

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.mongoose_ok and np.isfinite(self.c_empirical)


def eigenvalue_bounds(d: int, n_max: int, n_min: int = 2) -> EigenvalueBoundsReport:
    """Exhaustively check the eigenvalue sandwich and the ``4 |w|^2`` lower bound.

    With ``q(w) = n^2 sum_i sin^2(pi w_i / n)`` and centered ``w != 0``:

    * lower:    ``1/|pi w|^4 <= 1/q^2``, i.e. ``q <= pi^2 |w|^2``
    * upper:    ``1/q <= 1/|pi w|^2 + c/n^2``; ``c`` is the smallest constant
      that works for every ``(n, w)`` checked, reported as ``c_empirical``
    * mongoose: ``q >= 4 |w|^2``
    """
    checked = 0
    lower_ok = mongoose_ok = True
    c_emp = 0.0
    worst_lower = 0.0
    worst_mong = np.inf
    for n in range(n_min, n_max + 1):
        lat = TorusLattice(d, n)
        q = n * n * sin2_sum_grid(lat)
        w2 = centered_norm2_grid(lat)
        mask = w2 > 0
        q, w2 = q[mask], w2[mask]
        checked += q.size
        pw2 = np.pi**2 * w2
        ratio_lower = q / pw2
        worst_lower = max(worst_lower, float(ratio_lower.max()))
        # sin(x) < x strictly for x != 0, so no slack is needed here
        lower_ok &= bool(np.all(q <= pw2))
        # equality holds at w_i = n/2; allow one ulp-scale relative slack
        ratio_mong = q / (4.0 * w2)
        worst_mong = min(worst_mong, float(ratio_mong.min()))
        mongoose_ok &= bool(np.all(ratio_mong >= 1.0 - 1e-12))
        c_emp = max(c_emp, float(np.max(n * n * (1.0 / q - 1.0 / pw2))))
    return EigenvalueBoundsReport(
        d=d,
        n_max=n_max,
        checked=checked,
        lower_ok=lower_ok,
        mongoose_ok=mongoose_ok,
        c_empirical=c_emp,
        worst_lower_ratio=worst_lower,
        worst_mongoose_ratio=worst_mong,
    )
