# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; mirrors evgrid._kernels_py function for function."""

import numpy as np

from libc.math cimport fabs, sin, cos, sqrt, atan2, isfinite, INFINITY
from libc.stdlib cimport malloc, free


def all_nonnegative(values):
    cdef const double[::1] a = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t k
    cdef double x
    for k in range(a.shape[0]):
        x = a[k]
        if not (x >= 0.0 and x < INFINITY):
            return False
    return True


cdef void _argsort_insertion(const double* key, Py_ssize_t* idx, Py_ssize_t n) noexcept nogil:
    # stable; n is the number of time slots
    cdef Py_ssize_t i, j, cur
    for i in range(n):
        idx[i] = i
    for i in range(1, n):
        cur = idx[i]
        j = i - 1
        while j >= 0 and key[idx[j]] > key[cur]:
            idx[j + 1] = idx[j]
            j -= 1
        idx[j + 1] = cur


cdef void _waterfill(const double* l0, double need, const double* w, double* out,
                     Py_ssize_t T, double* key, Py_ssize_t* idx) noexcept nogil:
    cdef Py_ssize_t t, active = 0
    cdef double inv_cum = 0.0, base_cum = 0.0, thr, level
    cdef double inv_at = 0.0, base_at = 0.0, val
    for t in range(T):
        out[t] = 0.0
    if need <= 0.0:
        return
    for t in range(T):
        key[t] = w[t] * l0[t]
    _argsort_insertion(key, idx, T)
    for t in range(T):
        inv_cum += 1.0 / w[idx[t]]
        base_cum += l0[idx[t]]
        thr = w[idx[t]] * l0[idx[t]] * inv_cum - base_cum
        if thr < need:
            active = t + 1
            inv_at = inv_cum
            base_at = base_cum
        else:
            break
    level = (need + base_at) / inv_at
    for t in range(active):
        val = level / w[idx[t]] - l0[idx[t]]
        out[idx[t]] = val if val > 0.0 else 0.0


def waterfill(nonflexible, double need, weights):
    cdef const double[::1] l0 = np.ascontiguousarray(nonflexible, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t T = l0.shape[0]
    out_arr = np.zeros(T, dtype=np.float64)
    cdef double[::1] out = out_arr
    if T == 0:
        return out_arr
    cdef double* key = <double*> malloc(T * sizeof(double))
    cdef Py_ssize_t* idx = <Py_ssize_t*> malloc(T * sizeof(Py_ssize_t))
    try:
        _waterfill(&l0[0], need, &w[0], &out[0], T, key, idx)
    finally:
        free(key)
        free(idx)
    return out_arr


def waterfill_rows(nonflexible, needs, weights):
    cdef const double[:, ::1] l0 = np.ascontiguousarray(nonflexible, dtype=np.float64)
    cdef const double[::1] L = np.ascontiguousarray(needs, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = l0.shape[0], T = l0.shape[1], i
    out_arr = np.zeros((n, T), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if T == 0 or n == 0:
        return out_arr
    cdef double* key = <double*> malloc(T * sizeof(double))
    cdef Py_ssize_t* idx = <Py_ssize_t*> malloc(T * sizeof(Py_ssize_t))
    try:
        for i in range(n):
            _waterfill(&l0[i, 0], L[i], &w[0], &out[i, 0], T, key, idx)
    finally:
        free(key)
        free(idx)
    return out_arr


cdef Py_ssize_t _repair(double* f, Py_ssize_t n, Py_ssize_t T, Py_ssize_t max_iter,
                        double tol, double* best_out) noexcept nogil:
    # f is row-major n x T; returns the number of compensation passes
    cdef Py_ssize_t it = 0, i, t, j, s, bi, bt
    cdef double v, best = 0.0, a, b, c
    if n < 2 or T < 2:
        for j in range(n * T):
            if f[j] < best:
                best = f[j]
        best_out[0] = best
        return 0
    for it in range(max_iter + 1):
        best = f[0]
        bi = 0
        bt = 0
        for j in range(n):
            for s in range(T):
                if f[j * T + s] < best:
                    best = f[j * T + s]
                    bi = j
                    bt = s
        if best >= -tol or it == max_iter:
            break
        i = bi
        t = bt
        v = best
        a = v / (n - 1)
        b = v / (T - 1)
        c = v / ((T - 1) * (n - 1))
        for j in range(n):
            if j == i:
                for s in range(T):
                    if s != t:
                        f[j * T + s] += b
            else:
                for s in range(T):
                    if s == t:
                        f[j * T + s] += a
                    else:
                        f[j * T + s] -= c
        f[i * T + t] = 0.0
    best_out[0] = best
    return it


def repair_negatives(double[:, ::1] flexible, Py_ssize_t max_iter, double tol):
    cdef Py_ssize_t n = flexible.shape[0], T = flexible.shape[1], it
    cdef double best = 0.0
    if n == 0 or T == 0:
        return 0, True
    with nogil:
        it = _repair(&flexible[0, 0], n, T, max_iter, tol, &best)
    return it, best >= -tol


cdef Py_ssize_t _disaggregate(const double* loc, const double* rs, const double* cs,
                              Py_ssize_t n, Py_ssize_t T, double* out, Py_ssize_t max_iter,
                              double tol, double* best, Py_ssize_t* rows, Py_ssize_t* cols,
                              double* sub, double* rgap, double* cgap) noexcept nogil:
    # out must be zeroed by the caller
    cdef Py_ssize_t nr = 0, nc = 0, a, b, it = 0
    cdef double rtot = 0.0, stot = 0.0, x
    best[0] = 0.0
    for a in range(n):
        if rs[a] > 0.0:
            rows[nr] = a
            nr += 1
    for b in range(T):
        if cs[b] > 0.0:
            cols[nc] = b
            nc += 1
    if nr == 0 or nc == 0:
        return 0
    for a in range(nr):
        rgap[a] = rs[rows[a]]
        rtot += rs[rows[a]]
    for b in range(nc):
        cgap[b] = cs[cols[b]]
    for a in range(nr):
        for b in range(nc):
            x = loc[rows[a] * T + cols[b]]
            sub[a * nc + b] = x
            rgap[a] -= x
            cgap[b] -= x
            stot += x
    for a in range(nr):
        for b in range(nc):
            sub[a * nc + b] += rgap[a] / nc + cgap[b] / nr - (rtot - stot) / (nr * nc)
    it = _repair(sub, nr, nc, max_iter, tol, best)
    for a in range(nr):
        for b in range(nc):
            out[rows[a] * T + cols[b]] = sub[a * nc + b]
    return it


def disaggregate(local, row_sums, col_sums, Py_ssize_t max_iter, double tol):
    cdef const double[:, ::1] loc = np.ascontiguousarray(local, dtype=np.float64)
    cdef const double[::1] rs = np.ascontiguousarray(row_sums, dtype=np.float64)
    cdef const double[::1] cs = np.ascontiguousarray(col_sums, dtype=np.float64)
    cdef Py_ssize_t n = loc.shape[0], T = loc.shape[1], it = 0
    cdef double best = 0.0
    out_arr = np.zeros((n, T), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n == 0 or T == 0:
        return out_arr, 0, True
    cdef Py_ssize_t* idx = <Py_ssize_t*> malloc((n + T) * sizeof(Py_ssize_t))
    cdef double* buf = <double*> malloc((n * T + n + T) * sizeof(double))
    try:
        with nogil:
            it = _disaggregate(&loc[0, 0], &rs[0], &cs[0], n, T, &out[0, 0], max_iter, tol,
                               &best, idx, idx + n, buf, buf + n * T, buf + n * T + n)
    finally:
        free(idx)
        free(buf)
    return out_arr, it, best >= -tol


def aggregate_schedule(nonflexible, needs, weights, Py_ssize_t max_iter, double tol):
    cdef const double[:, ::1] l0 = np.ascontiguousarray(nonflexible, dtype=np.float64)
    cdef const double[::1] L = np.ascontiguousarray(needs, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = l0.shape[0], T = l0.shape[1], i, t, it = 0
    cdef double best = 0.0, total = 0.0
    out_arr = np.zeros((n, T), dtype=np.float64)
    target_arr = np.zeros(T, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] target = target_arr
    if n == 0 or T == 0:
        return out_arr, target_arr, 0, True
    cdef Py_ssize_t* idx = <Py_ssize_t*> malloc((n + 2 * T) * sizeof(Py_ssize_t))
    cdef double* buf = <double*> malloc((2 * n * T + n + 3 * T) * sizeof(double))
    cdef double* local = buf + n * T + n + T
    cdef double* key = local + n * T
    cdef double* agg = key + T
    try:
        with nogil:
            for t in range(T):
                agg[t] = 0.0
            for i in range(n):
                _waterfill(&l0[i, 0], L[i], &w[0], local + i * T, T, key, idx + n + T)
                total += L[i]
                for t in range(T):
                    agg[t] += l0[i, t]
            _waterfill(agg, total, &w[0], &target[0], T, key, idx + n + T)
            it = _disaggregate(local, &L[0], &target[0], n, T, &out[0, 0], max_iter, tol,
                               &best, idx, idx + n, buf, buf + n * T, buf + n * T + n)
    finally:
        free(idx)
        free(buf)
    return out_arr, target_arr, it, best >= -tol


cdef int _solve_dense(double* A, double* b, Py_ssize_t n) noexcept nogil:
    # Gaussian elimination with partial pivoting; A is row-major n x n.
    cdef Py_ssize_t k, r, c, piv
    cdef double amax, tmp, f
    for k in range(n):
        piv = k
        amax = fabs(A[k * n + k])
        for r in range(k + 1, n):
            if fabs(A[r * n + k]) > amax:
                amax = fabs(A[r * n + k])
                piv = r
        if amax == 0.0:
            return -1
        if piv != k:
            for c in range(n):
                tmp = A[k * n + c]
                A[k * n + c] = A[piv * n + c]
                A[piv * n + c] = tmp
            tmp = b[k]
            b[k] = b[piv]
            b[piv] = tmp
        for r in range(k + 1, n):
            f = A[r * n + k] / A[k * n + k]
            if f != 0.0:
                for c in range(k, n):
                    A[r * n + c] -= f * A[k * n + c]
                b[r] -= f * b[k]
    for k in range(n - 1, -1, -1):
        tmp = b[k]
        for c in range(k + 1, n):
            tmp -= A[k * n + c] * b[c]
        b[k] = tmp / A[k * n + k]
    return 0


cdef void _injections(const double* G, const double* B, const double* vm, const double* va,
                      double* p, double* q, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k, m
    cdef double th, pk, qk
    for k in range(n):
        pk = 0.0
        qk = 0.0
        for m in range(n):
            th = va[k] - va[m]
            pk += vm[m] * (G[k * n + m] * cos(th) + B[k * n + m] * sin(th))
            qk += vm[m] * (G[k * n + m] * sin(th) - B[k * n + m] * cos(th))
        p[k] = vm[k] * pk
        q[k] = vm[k] * qk


cdef int _newton(const double* G, const double* B, const double* ps, const double* qs,
                 double* vm, double* va, Py_ssize_t n, Py_ssize_t slack, double tol,
                 Py_ssize_t max_iter, double* work, Py_ssize_t* pq,
                 double* res_out, Py_ssize_t* it_out) noexcept nogil:
    cdef Py_ssize_t m = n - 1, dim = 2 * (n - 1)
    cdef double* p = work
    cdef double* q = work + n
    cdef double* rhs = work + 2 * n
    cdef double* J = work + 2 * n + dim
    cdef Py_ssize_t a, b, k, l, it = 0
    cdef double res, th, gk, bk, d
    cdef int ok = 0
    k = 0
    for a in range(n):
        if a != slack:
            pq[k] = a
            k += 1
    while True:
        _injections(G, B, vm, va, p, q, n)
        res = 0.0
        for a in range(m):
            k = pq[a]
            rhs[a] = ps[k] - p[k]
            rhs[m + a] = qs[k] - q[k]
            if not isfinite(rhs[a]) or not isfinite(rhs[m + a]):
                res = rhs[a] + rhs[m + a]
                break
            if fabs(rhs[a]) > res:
                res = fabs(rhs[a])
            if fabs(rhs[m + a]) > res:
                res = fabs(rhs[m + a])
        if not isfinite(res):
            break
        if res <= tol:
            ok = 1
            break
        if it >= max_iter:
            break
        for a in range(m):
            k = pq[a]
            for b in range(m):
                l = pq[b]
                if k == l:
                    J[a * dim + b] = -q[k] - B[k * n + k] * vm[k] * vm[k]
                    J[a * dim + m + b] = p[k] / vm[k] + G[k * n + k] * vm[k]
                    J[(m + a) * dim + b] = p[k] - G[k * n + k] * vm[k] * vm[k]
                    J[(m + a) * dim + m + b] = q[k] / vm[k] - B[k * n + k] * vm[k]
                else:
                    th = va[k] - va[l]
                    gk = G[k * n + l]
                    bk = B[k * n + l]
                    J[a * dim + b] = vm[k] * vm[l] * (gk * sin(th) - bk * cos(th))
                    J[a * dim + m + b] = vm[k] * (gk * cos(th) + bk * sin(th))
                    J[(m + a) * dim + b] = -vm[k] * vm[l] * (gk * cos(th) + bk * sin(th))
                    J[(m + a) * dim + m + b] = vm[k] * (gk * sin(th) - bk * cos(th))
        if _solve_dense(J, rhs, dim) != 0:
            break
        for a in range(m):
            k = pq[a]
            va[k] += rhs[a]
            vm[k] += rhs[m + a]
        it += 1
    res_out[0] = res
    it_out[0] = it
    return ok


def solve_power_flow_batch(ybus, s_spec, v0, Py_ssize_t slack, double tol, Py_ssize_t max_iter):
    ybus = np.asarray(ybus, dtype=np.complex128)
    s_arr = np.atleast_2d(np.asarray(s_spec, dtype=np.complex128))
    v0 = np.asarray(v0, dtype=np.complex128)
    cdef const double[:, ::1] G = np.ascontiguousarray(ybus.real)
    cdef const double[:, ::1] B = np.ascontiguousarray(ybus.imag)
    cdef const double[:, ::1] P = np.ascontiguousarray(s_arr.real)
    cdef const double[:, ::1] Q = np.ascontiguousarray(s_arr.imag)
    cdef const double[::1] vm0 = np.ascontiguousarray(np.abs(v0))
    cdef const double[::1] va0 = np.ascontiguousarray(np.angle(v0))
    cdef Py_ssize_t K = P.shape[0], n = P.shape[1], row, k
    vm_arr = np.empty((K, n), dtype=np.float64)
    va_arr = np.empty((K, n), dtype=np.float64)
    it_arr = np.zeros(K, dtype=np.int64)
    res_arr = np.zeros(K, dtype=np.float64)
    ok_arr = np.zeros(K, dtype=np.uint8)
    cdef double[:, ::1] VM = vm_arr
    cdef double[:, ::1] VA = va_arr
    cdef long long[::1] IT = it_arr
    cdef double[::1] RES = res_arr
    cdef unsigned char[::1] OK = ok_arr
    cdef Py_ssize_t dim = 2 * (n - 1)
    cdef double* work = <double*> malloc((2 * n + dim + dim * dim + 1) * sizeof(double))
    cdef Py_ssize_t* pq = <Py_ssize_t*> malloc((n + 1) * sizeof(Py_ssize_t))
    cdef double res
    cdef Py_ssize_t its
    try:
        with nogil:
            for row in range(K):
                for k in range(n):
                    VM[row, k] = vm0[k]
                    VA[row, k] = va0[k]
                OK[row] = _newton(&G[0, 0], &B[0, 0], &P[row, 0], &Q[row, 0],
                                  &VM[row, 0], &VA[row, 0], n, slack, tol, max_iter,
                                  work, pq, &res, &its)
                RES[row] = res
                IT[row] = its
    finally:
        free(work)
        free(pq)
    volts = vm_arr * np.exp(1j * va_arr)
    return volts, it_arr, res_arr, ok_arr.astype(bool)
