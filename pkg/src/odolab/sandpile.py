"""Divisible sandpile on Z_n^d with synchronous toppling.

An unstable site (mass > 1) keeps mass 1 and splits the excess equally
among its ``2d`` neighbours; all unstable sites topple at once.  The
odometer accumulates the mass each site emits.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from odolab._backend import kernels
from odolab.torus import TorusLattice, neighbor_table

__all__ = [
    "WeightDistribution",
    "SandpileConfig",
    "Odometer",
    "NonConvergence",
    "StabilizeResult",
    "make_rng",
    "draw_weights",
    "init_configuration",
    "parallel_topple_sweep",
    "stabilize",
    "stabilize_many",
]

log = logging.getLogger(__name__)

KINDS = ("gaussian", "rademacher", "uniform", "truncated_gaussian")


@dataclass(frozen=True)
class WeightDistribution:
    """Law of the i.i.d. weights sigma(x).

    ``truncated_gaussian`` draws ``sigma * 1{|sigma| < R} - m_R`` for a standard
    Gaussian ``sigma``; ``m_R`` and ``v_R`` are the mean and variance of
    ``sigma * 1{|sigma| < R}``.
    """

    kind: str = "gaussian"
    R: float | None = None
    m_R: float = field(init=False, default=0.0)
    v_R: float = field(init=False, default=1.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight distribution {self.kind!r}; choose from {KINDS}")
        if self.kind == "truncated_gaussian":
            if self.R is None or not self.R > 0:
                raise ValueError("truncated_gaussian needs a positive threshold R")
            R = float(self.R)
            # symmetric truncation of a centered law
            object.__setattr__(self, "m_R", 0.0)
            second = (2.0 * stats.norm.cdf(R) - 1.0) - 2.0 * R * stats.norm.pdf(R)
            object.__setattr__(self, "v_R", float(second))
        elif self.R is not None:
            raise ValueError(f"R only applies to truncated_gaussian, not {self.kind}")

    @property
    def variance(self) -> float:
        return self.v_R

    @classmethod
    def parse(cls, text: str) -> "WeightDistribution":
        """Parse ``gaussian``, ``rademacher``, ``uniform`` or ``truncated_gaussian:R``."""
        kind, _, arg = text.partition(":")
        kind = kind.strip().replace("-", "_")
        if kind == "truncated_gaussian":
            return cls(kind, float(arg) if arg else None)
        if arg:
            raise ValueError(f"{kind} takes no parameter")
        return cls(kind)

    def __str__(self):
        return f"{self.kind}:{self.R:g}" if self.kind == "truncated_gaussian" else self.kind


def make_rng(seed) -> np.random.Generator:
    """Generator keyed by an int seed or a tuple such as ``(seed, trial)``."""
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng([int(s) for s in seed])
    return np.random.default_rng(int(seed))


def draw_weights(lattice: TorusLattice, dist: WeightDistribution, seed) -> np.ndarray:
    rng = make_rng(seed)
    shape = lattice.shape
    if dist.kind == "gaussian":
        return rng.standard_normal(shape)
    if dist.kind == "rademacher":
        return 2.0 * rng.integers(0, 2, size=shape) - 1.0
    if dist.kind == "uniform":
        r3 = math.sqrt(3.0)
        return rng.uniform(-r3, r3, size=shape)
    sigma = rng.standard_normal(shape)
    return np.where(np.abs(sigma) < dist.R, sigma, 0.0) - dist.m_R


@dataclass
class SandpileConfig:
    lattice: TorusLattice
    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.lattice.check(self.mass), dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @property
    def max_excess(self) -> float:
        return float(np.max(self.mass - 1.0))


@dataclass
class Odometer:
    """Total mass emitted per site.

    ``e`` is min-shifted (``min e == 0``); ``raw`` keeps the accumulated
    values from the dynamics when available.  ``per_edge`` is the mass sent
    along each single edge, ``e / 2d``; it solves ``Delta_g e = 1 - s`` and
    is the normalization entering the rescaled field.
    """

    lattice: TorusLattice
    e: np.ndarray
    raw: np.ndarray | None = None

    @classmethod
    def from_raw(cls, lattice: TorusLattice, raw: np.ndarray) -> "Odometer":
        raw = np.asarray(lattice.check(raw), dtype=np.float64)
        e = raw - raw.min()
        return cls(lattice, e, raw)

    @property
    def per_edge(self) -> np.ndarray:
        return self.e / self.lattice.degree


class StabilizeResult(NamedTuple):
    odometer: Odometer
    final: SandpileConfig
    sweeps: int
    residual: float


class NonConvergence(RuntimeError):
    def __init__(self, residual: float, sweeps: int, result: StabilizeResult | None = None):
        super().__init__(f"max excess {residual:.3e} after {sweeps} sweeps")
        self.residual = residual
        self.sweeps = sweeps
        self.result = result


def init_configuration(sigma: np.ndarray, lattice: TorusLattice | None = None) -> SandpileConfig:
    """s(x) = 1 + sigma(x) - mean(sigma)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if lattice is None:
        lattice = TorusLattice(sigma.ndim, sigma.shape[0])
    sigma = lattice.check(sigma)
    return SandpileConfig(lattice, 1.0 + (sigma - sigma.mean()))


def parallel_topple_sweep(s: SandpileConfig) -> tuple[SandpileConfig, np.ndarray]:
    """One synchronous sweep; returns the new configuration and emitted mass."""
    lat = s.lattice
    new, emitted = kernels.topple_sweep(s.mass.ravel(), neighbor_table(lat))
    return SandpileConfig(lat, new.reshape(lat.shape)), emitted.reshape(lat.shape)


def stabilize(
    s: SandpileConfig,
    tol: float = 1e-10,
    max_sweeps: int = 10**7,
    log_every: int = 10**4,
) -> StabilizeResult:
    """Topple until ``max(s - 1) <= tol``.

    Raises :class:`NonConvergence` (carrying the partial result) when the
    budget runs out.  Mass that is not mean one never settles, so callers
    are expected to pass ``sum(s) == size``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    lat = s.lattice
    nbr = neighbor_table(lat)
    mass = np.array(s.mass, dtype=np.float64).ravel()
    odo = np.zeros_like(mass)
    sweeps = 0
    residual = float(np.max(mass - 1.0))
    while residual > tol and sweeps < max_sweeps:
        chunk = min(log_every, max_sweeps - sweeps)
        done, residual = kernels.stabilize_run(mass, odo, nbr, tol, chunk)
        sweeps += done
        if residual > tol:
            log.info("stabilize: %d sweeps, max excess %.3e", sweeps, residual)
    result = StabilizeResult(
        Odometer.from_raw(lat, odo.reshape(lat.shape)),
        SandpileConfig(lat, mass.reshape(lat.shape)),
        sweeps,
        residual,
    )
    if residual > tol:
        raise NonConvergence(residual, sweeps, result)
    return result


def stabilize_many(
    masses: np.ndarray,
    lattice: TorusLattice,
    tol: float = 1e-10,
    max_sweeps: int = 10**7,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stabilize a ``(batch, *lattice.shape)`` stack of configurations.

    Returns raw odometers, sweep counts and residuals; each row matches a
    standalone :func:`stabilize` run on the same input.
    """
    S = np.array(masses, dtype=np.float64).reshape(-1, lattice.size)
    ODO = np.zeros_like(S)
    sweeps, residual = kernels.stabilize_batch(S, ODO, neighbor_table(lattice), tol, max_sweeps)
    bad = residual > tol
    if np.any(bad):
        raise NonConvergence(float(residual.max()), int(sweeps.max()))
    return ODO.reshape((-1,) + lattice.shape), sweeps, residual
