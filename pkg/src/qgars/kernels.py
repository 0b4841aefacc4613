"""Metropolis sweep kernels for the annealers.

The sweep is the hot loop of the whole package: it runs millions of times
inside the Monte Carlo harness. It is compiled with numba @njit by default;
setting QGARS_DISABLE_NUMBA=1 selects the uncompiled pure-numpy path. Both
paths execute the same function body on the same pre-drawn random stream, so
they produce bit-identical results (the benchmark CLI compares their speed).

State layout per solver replica set (P slices over a K*K spin grid):
    spins[p, v, r]   +-1 spin of variable (task position v, rank r+1)
    rowsum[p, v]     sum of spins over ranks (feasible rows sum to 2 - K)
    colsum[p, r]     sum of spins over task positions
    gconv[p, u, r]   sum_s g(|r - s|) * spins[p, u, s], with g(0) = 0
    energies[p]      classical energy of the slice in QUBO units
"""

from __future__ import annotations

import math
import os

import numpy as np


def _numba_disabled() -> bool:
    return os.environ.get("QGARS_DISABLE_NUMBA", "").strip().lower() in (
        "1",
        "true",
        "yes",
        "on",
    )


NUMBA_ENABLED = False
if not _numba_disabled():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):  # noqa: D103 - fallback decorator, identity
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


def _sweep_chunk(
    spins,
    rowsum,
    colsum,
    gconv,
    energies,
    hmat,
    qmat,
    gvec,
    two_a,
    two_b,
    inv_p,
    jperps,
    temps,
    uniforms,
    best_raw,
    best_feas,
    best_vals,
    feas_target,
):
    """Run a chunk of full Metropolis sweeps; returns nothing, mutates state.

    One sweep visits every spin of every slice once, in index order. A flip
    of (v, r) touches the local field of other spins only through rowsum,
    colsum and gconv, all of which are updated in O(K).
    """
    n_slices = spins.shape[0]
    k = spins.shape[1]
    for t in range(jperps.shape[0]):
        jp = jperps[t]
        temp = temps[t]
        for p in range(n_slices):
            up = p - 1 if p > 0 else n_slices - 1
            dn = p + 1 if p < n_slices - 1 else 0
            for v in range(k):
                for r in range(k):
                    s = spins[p, v, r]
                    qterm = 0.0
                    for u in range(k):
                        qterm += qmat[v, u] * gconv[p, u, r]
                    field = hmat[v, r] + 0.25 * (
                        two_a * (rowsum[p, v] - s)
                        + two_b * (colsum[p, r] - s)
                        + qterm
                    )
                    d_cl = -2.0 * s * field
                    d_eff = inv_p * d_cl
                    if n_slices > 1:
                        d_eff += 2.0 * jp * s * (spins[up, v, r] + spins[dn, v, r])
                    if d_eff <= 0.0 or uniforms[t, p, v * k + r] < math.exp(
                        -d_eff / temp
                    ):
                        spins[p, v, r] = -s
                        delta = -2 * s
                        rowsum[p, v] += delta
                        colsum[p, r] += delta
                        for rr in range(k):
                            gconv[p, v, rr] += delta * gvec[abs(r - rr)]
                        energies[p] += d_cl
        # Readout at sweep end: track the best raw and best feasible slice.
        for p in range(n_slices):
            e = energies[p]
            if e < best_vals[0]:
                best_vals[0] = e
                for v in range(k):
                    for r in range(k):
                        best_raw[v * k + r] = spins[p, v, r]
            feasible = True
            for v in range(k):
                if rowsum[p, v] != feas_target:
                    feasible = False
                    break
            if feasible:
                for r in range(k):
                    if colsum[p, r] != feas_target:
                        feasible = False
                        break
            if feasible and e < best_vals[1]:
                best_vals[1] = e
                for v in range(k):
                    for r in range(k):
                        best_feas[v * k + r] = spins[p, v, r]


_BACKENDS = {"numpy": _sweep_chunk}
if NUMBA_ENABLED:
    _BACKENDS["numba"] = njit(cache=True)(_sweep_chunk)

_active_name = "numba" if NUMBA_ENABLED else "numpy"


def set_backend(name: str) -> None:
    """Select the sweep implementation: 'numba' or 'numpy'."""
    global _active_name
    if name not in _BACKENDS:
        raise ValueError(
            f"backend {name!r} unavailable (have: {sorted(_BACKENDS)}); "
            f"numba may be disabled via QGARS_DISABLE_NUMBA"
        )
    _active_name = name


def current_backend() -> str:
    return _active_name


def available_backends():
    return sorted(_BACKENDS)


def sweep_chunk(*args):
    return _BACKENDS[_active_name](*args)


def init_slice_state(spins: np.ndarray, gvec: np.ndarray):
    """Derive rowsum/colsum/gconv aggregates for freshly initialized spins."""
    k = spins.shape[1]
    idx = np.arange(k)
    gmat = gvec[np.abs(idx[:, None] - idx[None, :])]
    rowsum = spins.sum(axis=2).astype(np.int64)
    colsum = spins.sum(axis=1).astype(np.int64)
    gconv = spins.astype(np.float64) @ gmat
    return rowsum, colsum, gconv


def splitmix64(value: int) -> int:
    """Deterministic 64-bit mixer used to derive child seeds."""
    value = (value + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = value
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    """Combine integers into one 64-bit seed, order-sensitively."""
    acc = 0x51_7C_C1_B7_27_22_0A_95
    for part in parts:
        acc = splitmix64(acc ^ (part & 0xFFFFFFFFFFFFFFFF))
    return acc
