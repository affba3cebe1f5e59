"""Pure numpy implementations of the hot loops.

Mirrors ``_ckernels.pyx`` function for function; used when the compiled
extension is unavailable or ``ODOLAB_BACKEND=python`` is set.
"""

from __future__ import annotations

import numpy as np


def topple_sweep(s, nbr):
    s = np.asarray(s, dtype=np.float64)
    deg = nbr.shape[1]
    emitted = np.maximum(s - 1.0, 0.0)
    s_new = np.minimum(s, 1.0) + emitted[nbr].sum(axis=1) / deg
    return s_new, emitted


def stabilize_run(s, odo, nbr, tol, max_sweeps):
    """Sweep ``s`` in place until ``max(s - 1) <= tol``; accumulate into ``odo``.

    Returns ``(sweeps, residual)``.
    """
    deg = nbr.shape[1]
    residual = float(np.max(s - 1.0))
    sweeps = 0
    while residual > tol and sweeps < max_sweeps:
        emitted = np.maximum(s - 1.0, 0.0)
        s[:] = np.minimum(s, 1.0) + emitted[nbr].sum(axis=1) / deg
        odo += emitted
        residual = float(np.max(s - 1.0))
        sweeps += 1
    return sweeps, residual


def stabilize_batch(S, ODO, nbr, tol, max_sweeps):
    """Row-wise :func:`stabilize_run` on a ``(batch, size)`` array, vectorized.

    Rows freeze as soon as they meet ``tol``, so each row ends exactly where
    a standalone run would.
    """
    deg = nbr.shape[1]
    batch = S.shape[0]
    sweeps = np.zeros(batch, dtype=np.int64)
    residual = np.max(S - 1.0, axis=1)
    active = np.flatnonzero(residual > tol)
    done = 0
    while active.size and done < max_sweeps:
        s = S[active]
        emitted = np.maximum(s - 1.0, 0.0)
        s = np.minimum(s, 1.0) + emitted[:, nbr].sum(axis=2) / deg
        S[active] = s
        ODO[active] += emitted
        residual[active] = np.max(s - 1.0, axis=1)
        sweeps[active] += 1
        done += 1
        active = active[residual[active] > tol]
    return sweeps, residual


def lattice_cosine_sum(theta, M, power=4.0, kappa=0.0):
    """sum over 0 < |nu|_inf <= M of cos(2 pi theta.nu) exp(-kappa^2 |nu|^2) / |nu|^power."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    d = theta.size
    k = np.arange(-M, M + 1, dtype=np.float64)
    k2 = k * k
    ph = np.exp(2j * np.pi * np.outer(theta, k))
    g = np.exp(-(kappa**2) * k2)

    # innermost block: last min(d, 2) axes as a dense grid
    inner = min(d, 2)
    if inner == 1:
        blk_ph = ph[-1]
        blk_n2 = k2
        blk_g = g
    else:
        blk_ph = np.outer(ph[-2], ph[-1])
        blk_n2 = k2[:, None] + k2[None, :]
        blk_g = np.outer(g, g)

    total = 0.0
    outer = d - inner
    for idx in np.ndindex(*([2 * M + 1] * outer)):
        pre_ph = 1.0 + 0.0j
        pre_n2 = 0.0
        pre_g = 1.0
        for ax, i in enumerate(idx):
            pre_ph *= ph[ax, i]
            pre_n2 += k2[i]
            pre_g *= g[i]
        n2 = pre_n2 + blk_n2
        with np.errstate(divide="ignore"):
            w = np.where(n2 > 0, n2 ** (-0.5 * power), 0.0)
        total += float(np.sum((pre_ph * blk_ph).real * w * (pre_g * blk_g)))
    return total
