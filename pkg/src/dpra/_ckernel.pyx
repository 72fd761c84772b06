# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integration kernel.

Operation-for-operation twin of ``_pykernel.py``.  Programs are flat stack
bytecode: ``ops`` (int32) and ``args`` (float64; constant values, slot
indices or relative jump targets).
"""

from libc.math cimport exp, log, sqrt, isfinite, HUGE_VAL
from libc.stdlib cimport malloc, free

import numpy as np

cdef enum:
    OK = 0
    DIV_ZERO = 1
    DOMAIN = 2
    NON_FINITE = 3
    NEGATIVE_RATE = 4
    STACK_SIZE = 64


cdef int _run(const int* ops, const double* args, Py_ssize_t start, Py_ssize_t end,
              const double* env, double* stack, double* out) noexcept nogil:
    cdef Py_ssize_t sp = 0
    cdef Py_ssize_t pc = start
    cdef int op
    cdef double a, b, r, x
    while pc < end:
        op = ops[pc]
        if op == 0:
            stack[sp] = args[pc]
            sp += 1
        elif op == 1:
            stack[sp] = env[<Py_ssize_t>args[pc]]
            sp += 1
        elif op <= 5 or (op >= 7 and op <= 12) or op >= 22:
            sp -= 1
            b = stack[sp]
            a = stack[sp - 1]
            if op == 2:
                r = a + b
            elif op == 3:
                r = a - b
            elif op == 4:
                r = a * b
            elif op == 5:
                if b == 0.0:
                    out[0] = 0.0
                    return DIV_ZERO
                r = a / b
            elif op == 7:
                r = 1.0 if a < b else 0.0
            elif op == 8:
                r = 1.0 if a <= b else 0.0
            elif op == 9:
                r = 1.0 if a > b else 0.0
            elif op == 10:
                r = 1.0 if a >= b else 0.0
            elif op == 11:
                r = 1.0 if a == b else 0.0
            elif op == 12:
                r = 1.0 if a != b else 0.0
            elif op == 22:
                r = a if a <= b else b
            else:
                r = a if a >= b else b
            stack[sp - 1] = r
        elif op == 6:
            stack[sp - 1] = -stack[sp - 1]
        elif op == 13:
            stack[sp - 1] = 1.0 if stack[sp - 1] == 0.0 else 0.0
        elif op == 14:
            if stack[sp - 1] == 0.0:
                pc = start + <Py_ssize_t>args[pc]
                continue
            sp -= 1
        elif op == 15:
            if stack[sp - 1] != 0.0:
                pc = start + <Py_ssize_t>args[pc]
                continue
            sp -= 1
        elif op == 16:
            sp -= 1
            if stack[sp] == 0.0:
                pc = start + <Py_ssize_t>args[pc]
                continue
        elif op == 17:
            pc = start + <Py_ssize_t>args[pc]
            continue
        else:
            x = stack[sp - 1]
            if op == 18:
                x = -x if x < 0.0 else x
            elif op == 19:
                x = exp(x)
            elif op == 20:
                if x <= 0.0:
                    out[0] = 0.0
                    return DOMAIN
                x = log(x)
            else:
                if x < 0.0:
                    out[0] = 0.0
                    return DOMAIN
                x = sqrt(x)
            stack[sp - 1] = x
        pc += 1
    out[0] = stack[0]
    return OK


cdef struct Ctx:
    const int* ops
    const double* args
    const Py_ssize_t* starts
    const Py_ssize_t* ends
    const Py_ssize_t* dprogs
    const Py_ssize_t* slots
    const unsigned char* nonneg
    Py_ssize_t n
    double* env
    double* stack


cdef int _derivs(Ctx* c, double* out) noexcept nogil:
    cdef Py_ssize_t i, p
    cdef double v
    cdef int st
    for i in range(c.n):
        p = c.dprogs[i]
        st = _run(c.ops, c.args, c.starts[p], c.ends[p], c.env, c.stack, &v)
        if st:
            return st
        if not isfinite(v):
            return NON_FINITE
        if c.nonneg[i] and v < 0.0:
            return NEGATIVE_RATE
        out[i] = v
    return OK


cdef int _rk4(Ctx* c, double t0, const double* y0, double dt, const double* k1,
              double* k2, double* k3, double* k4, double* y) noexcept nogil:
    cdef Py_ssize_t i
    cdef int st
    cdef double half = 0.5 * dt
    cdef double sixth
    c.env[0] = t0 + half
    for i in range(c.n):
        c.env[c.slots[i]] = y0[i] + half * k1[i]
    st = _derivs(c, k2)
    if st:
        return st
    for i in range(c.n):
        c.env[c.slots[i]] = y0[i] + half * k2[i]
    st = _derivs(c, k3)
    if st:
        return st
    c.env[0] = t0 + dt
    for i in range(c.n):
        c.env[c.slots[i]] = y0[i] + dt * k3[i]
    st = _derivs(c, k4)
    if st:
        return st
    sixth = dt / 6.0
    for i in range(c.n):
        y[i] = y0[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        c.env[c.slots[i]] = y[i]
    c.env[0] = t0 + dt
    return OK


cdef void _set(Ctx* c, double t, const double* y) noexcept nogil:
    cdef Py_ssize_t i
    c.env[0] = t
    for i in range(c.n):
        c.env[c.slots[i]] = y[i]


def run_program(ops, args, Py_ssize_t start, Py_ssize_t end, env):
    """Evaluate one program against *env*; returns ``(value, status)``."""
    cdef int[::1] o = np.ascontiguousarray(ops, dtype=np.int32)
    cdef double[::1] a = np.ascontiguousarray(args, dtype=np.float64)
    cdef double[::1] e = np.ascontiguousarray(env, dtype=np.float64)
    cdef double stack[STACK_SIZE]
    cdef double v
    cdef int st
    if o.shape[0] == 0:
        return 0.0, OK
    st = _run(&o[0], &a[0], start, end, &e[0], stack, &v)
    return v, st


def integrate(ops, args, starts, ends, dprogs, slots, nonneg, mons, wants,
              double[::1] env, double t_end, double h, double tol):
    """Fixed-step RK4 from ``env[0]`` towards *t_end* with monitor stopping.

    See ``_pykernel.integrate`` for the contract.
    """
    cdef int[::1] o = np.ascontiguousarray(ops, dtype=np.int32)
    cdef double[::1] a = np.ascontiguousarray(args, dtype=np.float64)
    cdef Py_ssize_t[::1] st_ = np.ascontiguousarray(starts, dtype=np.intp)
    cdef Py_ssize_t[::1] en_ = np.ascontiguousarray(ends, dtype=np.intp)
    cdef Py_ssize_t[::1] dp = np.ascontiguousarray(dprogs, dtype=np.intp)
    cdef Py_ssize_t[::1] sl = np.ascontiguousarray(slots, dtype=np.intp)
    cdef unsigned char[::1] nn = np.ascontiguousarray(nonneg, dtype=np.uint8)
    cdef Py_ssize_t[::1] mo = np.ascontiguousarray(mons, dtype=np.intp)
    cdef unsigned char[::1] wa = np.ascontiguousarray(wants, dtype=np.uint8)
    cdef Py_ssize_t n = sl.shape[0]
    cdef Py_ssize_t nm = mo.shape[0]
    cdef double stack[STACK_SIZE]
    cdef Ctx c
    cdef double t0, t, t_next, dt, lo, hi, mid, v, best_dt, result_t
    cdef Py_ssize_t k, i, j, p, best
    cdef int status = OK
    cdef int hit = -1
    cdef double* buf
    cdef double *y
    cdef double *y_new
    cdef double *k1
    cdef double *k2
    cdef double *k3
    cdef double *k4
    cdef double *tmp
    cdef unsigned char* hits
    cdef Py_ssize_t dummy_idx = 0
    cdef unsigned char dummy_flag = 0

    c.ops = &o[0] if o.shape[0] else NULL
    c.args = &a[0] if a.shape[0] else NULL
    c.starts = &st_[0] if st_.shape[0] else NULL
    c.ends = &en_[0] if en_.shape[0] else NULL
    c.dprogs = &dp[0] if n else &dummy_idx
    c.slots = &sl[0] if n else &dummy_idx
    c.nonneg = &nn[0] if n else &dummy_flag
    c.n = n
    c.env = &env[0]
    c.stack = stack

    buf = <double*>malloc(sizeof(double) * (6 * n + 1))
    hits = <unsigned char*>malloc(nm + 1)
    if buf == NULL or hits == NULL:
        free(buf)
        free(hits)
        raise MemoryError()
    y = buf
    y_new = buf + n
    k1 = buf + 2 * n
    k2 = buf + 3 * n
    k3 = buf + 4 * n
    k4 = buf + 5 * n

    with nogil:
        t0 = env[0]
        result_t = t0
        # monitors already satisfied at the start stop immediately
        for j in range(nm):
            p = mo[j]
            status = _run(c.ops, c.args, c.starts[p], c.ends[p], c.env, stack, &v)
            if status:
                break
            if (v != 0.0) == (wa[j] != 0):
                hit = <int>j
                break
        if status == OK and hit < 0:
            t = t0
            for i in range(n):
                y[i] = env[sl[i]]
            k = 0
            while t < t_end:
                t_next = t0 + (k + 1) * h
                if t_next >= t_end - 1e-9 * h:
                    t_next = t_end
                dt = t_next - t
                _set(&c, t, y)
                status = _derivs(&c, k1)
                if status:
                    result_t = t
                    break
                status = _rk4(&c, t, y, dt, k1, k2, k3, k4, y_new)
                if status:
                    result_t = t
                    break
                if nm:
                    best = -1
                    for j in range(nm):
                        p = mo[j]
                        status = _run(c.ops, c.args, c.starts[p], c.ends[p], c.env, stack, &v)
                        if status:
                            break
                        hits[j] = 1 if (v != 0.0) == (wa[j] != 0) else 0
                        if hits[j] and best < 0:
                            best = 0
                    if status:
                        result_t = t_next
                        break
                    if best >= 0:
                        best = -1
                        best_dt = 0.0
                        for j in range(nm):
                            if not hits[j]:
                                continue
                            p = mo[j]
                            lo = 0.0
                            hi = dt
                            while hi - lo > tol:
                                mid = 0.5 * (lo + hi)
                                status = _rk4(&c, t, y, mid, k1, k2, k3, k4, y_new)
                                if status:
                                    break
                                status = _run(c.ops, c.args, c.starts[p], c.ends[p], c.env, stack, &v)
                                if status:
                                    break
                                if (v != 0.0) == (wa[j] != 0):
                                    hi = mid
                                else:
                                    lo = mid
                            if status:
                                break
                            if best < 0 or hi < best_dt:
                                best = j
                                best_dt = hi
                        if status:
                            result_t = t
                            break
                        status = _rk4(&c, t, y, best_dt, k1, k2, k3, k4, y_new)
                        if status:
                            result_t = t
                            break
                        hit = <int>best
                        result_t = t + best_dt
                        break
                tmp = y
                y = y_new
                y_new = tmp
                t = t_next
                k += 1
            if status == OK and hit < 0:
                _set(&c, t, y)
                result_t = t
    free(buf)
    free(hits)
    return result_t, hit, status
