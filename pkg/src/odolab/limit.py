"""Rescaled pairings <Xi_n, u>, their exact variances and Monte Carlo moments.

Lattice site ``x`` is the torus point ``x / n``; the rescaled field puts
``4 pi^2 n^((d-4)/2) h(x)`` on the cube of side ``1/n`` centred there, so
against a test function ``u``::

    <Xi_n, u> = 4 pi^2 n^((d-4)/2) sum_x h(x) T_n(x),   T_n(x) = integral of u over the cube

Test functions are real zero-mean trigonometric polynomials, which makes
``T_n`` and ``||u||_{-1}`` exact finite sums.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from odolab.field import _spectral_weights, sample_chi
from odolab.green import _inverse_eigs, mass_constant_L
from odolab.sandpile import (
    WeightDistribution,
    draw_weights,
    init_configuration,
    stabilize_many,
)
from odolab.torus import TorusLattice, dft

__all__ = [
    "TestFunction",
    "PairingReport",
    "MomentReport",
    "SobolevReport",
    "EpsilonTooSmall",
    "cell_average_T",
    "remainder_K",
    "sobolev_norm_minus1",
    "pair_field",
    "pairing_weights",
    "quadratic_form_H",
    "exact_pairing_variance",
    "remainder_variance",
    "pairing_samples",
    "empirical_moment",
    "sobolev_threshold",
    "sobolev_norm_field",
]

PREFACTOR = 4.0 * math.pi**2


class EpsilonTooSmall(ValueError):
    pass


class TestFunction:
    """Real zero-mean trigonometric polynomial ``u(x) = sum_nu c_nu exp(2 pi i nu.x)``.

    Coefficients must be Hermitian (``c_{-nu} = conj(c_nu)``); a missing
    partner is filled in by conjugation.  ``nu = 0`` is rejected.
    """

    __test__ = False  # not a pytest class

    def __init__(self, d: int, coeffs: Mapping):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.d = int(d)
        table: dict[tuple[int, ...], complex] = {}
        for nu, c in coeffs.items():
            nu = tuple(int(v) for v in np.atleast_1d(nu))
            if len(nu) != self.d:
                raise ValueError(f"frequency {nu} is not {self.d}-dimensional")
            if not any(nu):
                raise ValueError("zero frequency not allowed: test functions have zero mean")
            table[nu] = complex(c)
        for nu, c in list(table.items()):
            neg = tuple(-v for v in nu)
            if neg not in table:
                table[neg] = c.conjugate()
            elif abs(table[neg] - c.conjugate()) > 1e-12 * max(1.0, abs(c)):
                raise ValueError(f"coefficients at {nu} and {neg} are not conjugate")
        table = {nu: c for nu, c in table.items() if c != 0}
        if not table:
            raise ValueError("test function has no nonzero coefficients")
        order = sorted(table)
        self.freqs = np.array(order, dtype=np.int64).reshape(-1, self.d)
        self.coefs = np.array([table[nu] for nu in order], dtype=np.complex128)

    @classmethod
    def cosine(cls, nu, amplitude: float = 1.0) -> "TestFunction":
        """``amplitude * cos(2 pi nu.x)``."""
        nu = tuple(np.atleast_1d(nu))
        return cls(len(nu), {nu: amplitude / 2.0})

    @classmethod
    def parse(cls, text: str, d: int) -> "TestFunction":
        """Parse ``"nu:coeff,..."``; vector components of ``nu`` separated by ``;``.

        Example for d=2: ``"1;1:1,-1;-1:1"`` is ``2 cos(2 pi (x1 + x2))``.
        """
        coeffs = {}
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            nu, sep, c = item.rpartition(":")
            if not sep:
                raise ValueError(f"malformed term {item!r}, expected nu:coeff")
            key = tuple(int(v) for v in nu.split(";"))
            coeffs[key] = complex(c.replace(" ", ""))
        return cls(d, coeffs)

    def to_text(self) -> str:
        def fmt(c):
            return repr(float(c.real)) if c.imag == 0 else repr(complex(c))

        return ",".join(
            ";".join(str(v) for v in nu) + ":" + fmt(c) for nu, c in zip(self.freqs.tolist(), self.coefs)
        )

    def __call__(self, x) -> np.ndarray:
        """Evaluate at torus points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=np.float64)
        phase = 2j * np.pi * (x @ self.freqs.T)
        return (np.exp(phase) @ self.coefs).real

    def scaled(self, c: float) -> "TestFunction":
        return TestFunction(self.d, {tuple(nu): c * v for nu, v in zip(self.freqs.tolist(), self.coefs)})

    def __repr__(self):
        return f"TestFunction(d={self.d}, {self.to_text()!r})"


@dataclass
class PairingReport:
    n: int
    d: int
    mode: str
    value: float
    seed: int | None = None


@dataclass
class MomentReport:
    m: int
    trials: int
    mean: float
    se: float
    values: np.ndarray | None = None

    def within(self, target: float, k: float = 3.0, slack: float = 0.0) -> bool:
        return abs(self.mean - target) <= k * self.se + slack


@dataclass
class SobolevReport:
    value: float
    tail_bound: float
    cutoff: int
    eps: float


def _check_dims(u: TestFunction, lattice: TorusLattice):
    if u.d != lattice.d:
        raise ValueError(f"test function is {u.d}-dimensional, lattice is {lattice.d}-dimensional")


def _cell_factor(nu: np.ndarray, n: int) -> np.ndarray:
    """prod_i sin(pi nu_i / n) / (pi nu_i), with 1/n where nu_i = 0."""
    nu = np.asarray(nu, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(nu == 0, 1.0 / n, np.sin(np.pi * nu / n) / (np.pi * nu))
    return np.prod(f, axis=-1)


def cell_average_T(u: TestFunction, lattice: TorusLattice, z=None):
    """Integral of ``u`` over the cube of side ``1/n`` centred at ``z / n``.

    Returns the whole grid when ``z`` is None.
    """
    _check_dims(u, lattice)
    n = lattice.n
    amp = u.coefs * _cell_factor(u.freqs, n)
    if z is not None:
        z = np.asarray(lattice.wrap(z), dtype=np.float64)
        return float((np.exp(2j * np.pi * (u.freqs @ z) / n) @ amp).real)
    grid = np.indices(lattice.shape).reshape(lattice.d, -1).T.astype(np.float64)
    phase = np.exp(2j * np.pi * (grid @ u.freqs.T) / n)
    return (phase @ amp).real.reshape(lattice.shape)


def _grid_points(lattice: TorusLattice) -> np.ndarray:
    return np.moveaxis(np.indices(lattice.shape), 0, -1) / lattice.n


def remainder_K(u: TestFunction, lattice: TorusLattice, z=None):
    """K_n(z) = n^d T_n(z) - u(z / n)."""
    if z is not None:
        pt = np.asarray(lattice.wrap(z), dtype=np.float64) / lattice.n
        return lattice.size * cell_average_T(u, lattice, z) - float(u(pt))
    return lattice.size * cell_average_T(u, lattice) - u(_grid_points(lattice))


def sobolev_norm_minus1(u: TestFunction) -> float:
    """Squared norm ``||u||_{-1}^2 = sum_nu |u_hat(nu)|^2 / |nu|^4``."""
    n2 = np.sum(u.freqs.astype(np.float64) ** 2, axis=1)
    return float(np.sum(np.abs(u.coefs) ** 2 / n2**2))


def pair_field(h: np.ndarray, u: TestFunction, lattice: TorusLattice) -> np.ndarray | float:
    """<Xi_n, u> for a grid function ``h`` (leading batch axes allowed)."""
    T = cell_average_T(u, lattice)
    h = np.asarray(h, dtype=np.float64)
    if h.shape[h.ndim - lattice.d :] != lattice.shape:
        raise ValueError(f"grid function of shape {h.shape} does not live on {lattice}")
    axes = tuple(range(h.ndim - lattice.d, h.ndim))
    val = PREFACTOR * lattice.n ** ((lattice.d - 4) / 2) * np.sum(h * T, axis=axes)
    return float(val) if np.ndim(val) == 0 else val


def pairing_weights(u: TestFunction, lattice: TorusLattice) -> np.ndarray:
    """Vector ``c`` with ``<Xi_{w_n}, u> = sum_x c(x) sigma(x)``.

    ``w_n`` is linear in ``sigma`` and the Green table is symmetric, so
    ``c`` is the w-field of ``T_n`` scaled by the pairing prefactor.
    """
    T = cell_average_T(u, lattice)
    F = dft(T)
    C = _inverse_eigs(lattice) * F
    C.flat[0] = lattice.size * mass_constant_L(lattice, method="spectral") * F.flat[0] / lattice.degree
    c = np.fft.ifftn(C).real * lattice.size
    return PREFACTOR * lattice.n ** ((lattice.d - 4) / 2) * c


def quadratic_form_H(f: np.ndarray, lattice: TorusLattice) -> float:
    """sum_{x,y} H(x, y) f(x) f(y), evaluated in frequency space."""
    F = np.fft.fftn(lattice.check(f))
    return float(np.sum(_spectral_weights(lattice) * np.abs(F) ** 2))


def exact_pairing_variance(u: TestFunction, lattice: TorusLattice) -> float:
    """Var <Xi_n, u> = 16 pi^4 n^(d-4) sum H(x, y) T_n(x) T_n(y)."""
    T = cell_average_T(u, lattice)
    return PREFACTOR**2 * lattice.n ** (lattice.d - 4) * quadratic_form_H(T, lattice)


def remainder_variance(u: TestFunction, lattice: TorusLattice) -> float:
    """E[R_n(u)^2] = 16 pi^4 n^-(d+4) sum H(x, y) K_n(x) K_n(y)."""
    K = remainder_K(u, lattice)
    return PREFACTOR**2 * lattice.n ** (-(lattice.d + 4)) * quadratic_form_H(K, lattice)


# ---------------------------------------------------------------- Monte Carlo

def _odometer_pairings(args) -> np.ndarray:
    u_text, d, n, dist_text, seed, trials, tol, max_sweeps = args
    lat = TorusLattice(d, n)
    u = TestFunction.parse(u_text, d)
    dist = WeightDistribution.parse(dist_text)
    T = cell_average_T(u, lat)
    scale = PREFACTOR * n ** ((d - 4) / 2) / lat.degree
    masses = np.stack([init_configuration(draw_weights(lat, dist, (seed, t)), lat).mass for t in trials])
    raw, _, _ = stabilize_many(masses, lat, tol=tol, max_sweeps=max_sweeps)
    axes = tuple(range(1, d + 1))
    # raw total-emitted odometer; the min-shift drops out against zero-mean u
    return scale * np.sum(raw * T, axis=axes)


def pairing_samples(
    u: TestFunction,
    lattice: TorusLattice,
    trials: int,
    dist: WeightDistribution | None = None,
    seed: int = 0,
    mode: str = "w",
    workers: int = 1,
    tol: float = 1e-10,
    max_sweeps: int = 10**7,
    chunk: int = 256,
) -> np.ndarray:
    """Independent draws of <Xi_n, u>.

    Modes: ``"w"`` (w-field of fresh weights), ``"odometer"`` (stabilize the
    sandpile and pair the per-edge odometer), ``"chi"`` (spectral chi
    samples).  Trial ``t`` is keyed by ``(seed, t)`` so results do not
    depend on ``workers`` or ``chunk``.
    """
    _check_dims(u, lattice)
    dist = dist or WeightDistribution()
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if mode == "w":
        c = pairing_weights(u, lattice).ravel()
        return np.array([draw_weights(lattice, dist, (seed, t)).ravel() @ c for t in range(trials)])
    if mode == "chi":
        out = []
        for start in range(0, trials, chunk):
            stop = min(start + chunk, trials)
            fields = np.stack([sample_chi(lattice, (seed, t)).values for t in range(start, stop)])
            out.append(pair_field(fields, u, lattice))
        return np.concatenate(out)
    if mode == "odometer":
        blocks = [list(range(s, min(s + chunk, trials))) for s in range(0, trials, chunk)]
        jobs = [
            (u.to_text(), lattice.d, lattice.n, str(dist), seed, b, tol, max_sweeps) for b in blocks
        ]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_odometer_pairings, jobs))
        else:
            parts = [_odometer_pairings(j) for j in jobs]
        return np.concatenate(parts)
    raise ValueError(f"unknown pairing mode {mode!r}")


def empirical_moment(
    u: TestFunction,
    lattice: TorusLattice,
    m: int,
    trials: int,
    dist: WeightDistribution | None = None,
    seed: int = 0,
    mode: str = "w",
    workers: int = 1,
    samples: np.ndarray | None = None,
) -> MomentReport:
    """Monte Carlo estimate of E[<Xi_n, u>^m] with its standard error."""
    if m < 1:
        raise ValueError("moment order must be >= 1")
    if samples is None:
        samples = pairing_samples(u, lattice, trials, dist, seed, mode, workers)
    p = np.asarray(samples, dtype=np.float64) ** m
    se = float(p.std(ddof=1) / math.sqrt(p.size)) if p.size > 1 else math.inf
    return MomentReport(m, int(p.size), float(p.mean()), se, np.asarray(samples))


# ------------------------------------------------------------- Sobolev norms

def sobolev_threshold(d: int) -> float:
    return max(1.0 + d / 4.0, d / 2.0)


def sobolev_norm_field(
    h: np.ndarray,
    lattice: TorusLattice,
    eps: float,
    cutoff: int | None = None,
) -> SobolevReport:
    """Truncated ``||Xi_n||^2`` in H_{-eps/2}: sum over 0 < |nu|_inf <= M of
    ``|nu|^(-2 eps) |Xi_n_hat(nu)|^2``, plus an upper bound on the dropped tail.

    ``Xi_n_hat(nu)`` factors as the cube integral of ``exp(2 pi i nu.x)``
    times the lattice DFT of ``h`` at ``nu mod n``.
    """
    d, n = lattice.d, lattice.n
    if eps <= sobolev_threshold(d):
        raise EpsilonTooSmall(f"eps={eps} must exceed max(1 + d/4, d/2) = {sobolev_threshold(d)}")
    M = 4 * n if cutoff is None else int(cutoff)
    if M < n:
        raise ValueError(f"cutoff {M} must be at least n={n}")
    h = np.asarray(lattice.check(h), dtype=np.float64)
    Hk2 = np.abs(np.fft.fftn(h)) ** 2
    pref2 = PREFACTOR**2 * n ** (d - 4)

    k = np.arange(-M, M + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(k == 0, 1.0 / n, np.sin(np.pi * k / n) / (np.pi * k))
    total = 0.0
    # accumulate one slab along the first axis at a time
    rest_shape = (2 * M + 1,) * (d - 1)
    if d > 1:
        mesh = np.meshgrid(*([k] * (d - 1)), indexing="ij")
        rest_n2 = sum(m.astype(np.float64) ** 2 for m in mesh)
        rest_f2 = np.ones(rest_shape)
        for m in mesh:
            rest_f2 = rest_f2 * (f1[m + M] ** 2)
        rest_idx = tuple(m % n for m in mesh)
    else:
        rest_n2 = np.zeros(())
        rest_f2 = np.ones(())
        rest_idx = ()
    for i, k0 in enumerate(k):
        n2 = k0 * k0 + rest_n2
        with np.errstate(divide="ignore"):
            wgt = np.where(n2 > 0, n2 ** (-eps), 0.0)
        Hk = Hk2[(k0 % n,) + rest_idx] if d > 1 else Hk2[k0 % n]
        total += float(np.sum(wgt * f1[i] ** 2 * rest_f2 * Hk))
    value = pref2 * total

    # Tail over |nu|_inf = j > M: the largest coordinate contributes at most
    # 1/(pi j)^2, the others at most 1/n^2 each, |nu| >= j, and the shell
    # holds at most 2d (2j+1)^(d-1) <= 2d 3^(d-1) j^(d-1) points.
    hmax2 = float(Hk2.max())
    expo = 2 * eps + 3 - d  # exponent of j in the summand, > 1 when eps > d/2
    tail_sum = M ** (1 - expo) / (expo - 1)
    tail = pref2 * hmax2 * n ** (-2 * (d - 1)) / math.pi**2 * 2 * d * 3 ** (d - 1) * tail_sum
    return SobolevReport(value, tail, M, eps)
