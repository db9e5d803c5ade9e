"""Pure-Python/numpy implementations of the numerical hot loops.

These are the reference implementations; ``_kernels.pyx`` mirrors them
loop for loop. Both backends expose the same functions:

- ``all_nonnegative(values)``
- ``waterfill(nonflexible, need, weights)``
- ``waterfill_rows(nonflexible, needs, weights)``
- ``repair_negatives(flexible, max_iter, tol)``
- ``disaggregate(local, row_sums, col_sums, max_iter, tol)``
- ``aggregate_schedule(nonflexible, needs, weights, max_iter, tol)``
- ``solve_power_flow_batch(ybus, s_spec, v0, slack, tol, max_iter)``
"""

import numpy as np


def all_nonnegative(values):
    """True when every entry is finite and >= 0."""
    a = np.asarray(values, dtype=float)
    return bool(a.size == 0 or (a.min() >= 0.0 and np.isfinite(a.max())))


def waterfill(nonflexible, need, weights):
    """Minimise ``sum(w * (l0 + l)**2)`` s.t. ``sum(l) == need``, ``l >= 0``.

    Slots are sorted by ``w * l0``; the thresholds
    ``L_t = w_t * l0_t * sum_{s<=t} 1/w_s - sum_{s<=t} l0_s`` are then
    nondecreasing and the charged slots are those before the first
    ``L_t >= need``.
    Charged slots reach the common weighted level ``lam`` with
    ``l0_t + l_t = lam / w_t``.
    """
    l0 = np.asarray(nonflexible, dtype=float)
    w = np.asarray(weights, dtype=float)
    out = np.zeros_like(l0)
    if need <= 0.0:
        return out
    order = np.argsort(w * l0, kind="stable")
    l0s = l0[order]
    ws = w[order]
    inv_cum = np.cumsum(1.0 / ws)
    base_cum = np.cumsum(l0s)
    thresholds = ws * l0s * inv_cum - base_cum
    reached = np.flatnonzero(thresholds >= need)
    active = int(reached[0]) if reached.size else l0.size
    level = (need + base_cum[active - 1]) / inv_cum[active - 1]
    fill = np.maximum(level / ws[:active] - l0s[:active], 0.0)
    out[order[:active]] = fill
    return out


def waterfill_rows(nonflexible, needs, weights):
    """Row-wise ``waterfill`` of an (n, T) matrix with per-row needs."""
    l0 = np.asarray(nonflexible, dtype=float)
    out = np.empty_like(l0)
    for i in range(l0.shape[0]):
        out[i] = waterfill(l0[i], float(needs[i]), weights)
    return out


def repair_negatives(flexible, max_iter, tol):
    """Remove negative entries while preserving every row and column sum.

    Operates in place on ``flexible`` (EVCS x slot). Each pass picks the
    most negative entry ``v`` at ``(i, t)``, spreads it over the other
    stations in slot ``t`` and over the other slots of station ``i``,
    compensates the cross block, and zeroes ``(i, t)``.

    Returns
    -------
    (iterations, converged) : (int, bool)
    """
    n, T = flexible.shape
    if n < 2 or T < 2:
        return 0, bool(flexible.min(initial=0.0) >= -tol)
    for it in range(max_iter):
        flat = int(np.argmin(flexible))
        i, t = divmod(flat, T)
        v = flexible[i, t]
        if v >= -tol:
            return it, True
        others = np.arange(n) != i
        rest = np.arange(T) != t
        flexible[others, t] += v / (n - 1)
        flexible[i, rest] += v / (T - 1)
        flexible[np.ix_(others, rest)] -= v / ((T - 1) * (n - 1))
        flexible[i, t] = 0.0
    return max_iter, bool(flexible.min() >= -tol)


def disaggregate(local, row_sums, col_sums, max_iter, tol):
    """Correct ``local`` onto the given margins, then repair negatives.

    Only rows and columns with positive target sums are corrected; every
    other entry is zero in any nonnegative matrix with those margins.
    The correction is the least-squares one, which for ``local`` with the
    right row sums is the equal split of each column's gap over the rows.

    Returns
    -------
    (flexible, iterations, converged)
    """
    local = np.asarray(local, dtype=float)
    row_sums = np.asarray(row_sums, dtype=float)
    col_sums = np.asarray(col_sums, dtype=float)
    rows = np.flatnonzero(row_sums > 0.0)
    cols = np.flatnonzero(col_sums > 0.0)
    out = np.zeros_like(local)
    nr, nc = rows.size, cols.size
    if nr == 0 or nc == 0:
        return out, 0, True
    sub = local[np.ix_(rows, cols)]
    sub = np.ascontiguousarray(
        sub + (row_sums[rows] - sub.sum(axis=1))[:, None] / nc
        + (col_sums[cols] - sub.sum(axis=0))[None, :] / nr
        - (row_sums[rows].sum() - sub.sum()) / (nr * nc))
    iterations, ok = repair_negatives(sub, max_iter, tol)
    out[np.ix_(rows, cols)] = sub
    return out, iterations, ok


def aggregate_schedule(nonflexible, needs, weights, max_iter, tol):
    """Local water-fills disaggregated onto the aggregate water-fill.

    Returns
    -------
    (flexible, aggregate_target, iterations, converged)
    """
    l0 = np.asarray(nonflexible, dtype=float)
    local = waterfill_rows(l0, needs, weights)
    target = waterfill(l0.sum(axis=0), float(np.sum(needs)), weights)
    flex, iterations, ok = disaggregate(local, needs, target, max_iter, tol)
    return flex, target, iterations, ok


def _mismatch(ybus, v, s_spec):
    return s_spec - v * np.conj(ybus @ v)


def solve_power_flow_batch(ybus, s_spec, v0, slack, tol, max_iter):
    """Newton-Raphson (polar) for a batch of injection vectors.

    Parameters
    ----------
    ybus : (n, n) complex ndarray
    s_spec : (K, n) complex ndarray
        Specified injections in per-unit (loads negative). The slack entry
        is ignored.
    v0 : (n,) complex ndarray
        Start voltages; ``v0[slack]`` is held fixed.
    slack : int
    tol : float
        Max |dP|, |dQ| over non-slack buses, per-unit.
    max_iter : int

    Returns
    -------
    voltages : (K, n) complex ndarray
    iterations : (K,) int ndarray
    residuals : (K,) float ndarray
    converged : (K,) bool ndarray
    """
    ybus = np.asarray(ybus, dtype=complex)
    s_spec = np.atleast_2d(np.asarray(s_spec, dtype=complex))
    K, n = s_spec.shape
    pq = np.array([k for k in range(n) if k != slack], dtype=int)
    m = pq.size
    volts = np.empty((K, n), dtype=complex)
    iters = np.zeros(K, dtype=np.int64)
    resid = np.zeros(K)
    conv = np.zeros(K, dtype=bool)
    for row in range(K):
        v = np.array(v0, dtype=complex)
        vm = np.abs(v)
        va = np.angle(v)
        res = np.inf
        it = 0
        ok = False
        while True:
            mis = _mismatch(ybus, v, s_spec[row])[pq]
            res = max(np.abs(mis.real).max(initial=0.0), np.abs(mis.imag).max(initial=0.0))
            if not np.isfinite(res):
                break
            if res <= tol:
                ok = True
                break
            if it >= max_iter:
                break
            ibus = ybus @ v
            diag_v = np.diag(v)
            ds_dva = 1j * diag_v @ np.conj(np.diag(ibus) - ybus @ diag_v)
            vnorm = v / vm
            ds_dvm = diag_v @ np.conj(ybus @ np.diag(vnorm)) + np.conj(np.diag(ibus)) @ np.diag(vnorm)
            jac = np.block([
                [ds_dva.real[np.ix_(pq, pq)], ds_dvm.real[np.ix_(pq, pq)]],
                [ds_dva.imag[np.ix_(pq, pq)], ds_dvm.imag[np.ix_(pq, pq)]],
            ])
            try:
                dx = np.linalg.solve(jac, np.concatenate([mis.real, mis.imag]))
            except np.linalg.LinAlgError:
                break
            va[pq] += dx[:m]
            vm[pq] += dx[m:]
            v = vm * np.exp(1j * va)
            it += 1
        volts[row] = v
        iters[row] = it
        resid[row] = res
        conv[row] = ok
    return volts, iters, resid, conv
