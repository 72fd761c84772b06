"""Pure-Python integration kernel.

Mirrors ``_ckernel.pyx`` operation for operation so both backends produce
the same floating-point results.  Used when the compiled extension is not
available or ``DPRA_KERNEL=python`` is set.
"""

import math

OK = 0
DIV_ZERO = 1
DOMAIN = 2
NON_FINITE = 3
NEGATIVE_RATE = 4

_STACK = 64


def _as_list(a):
    return a.tolist() if hasattr(a, "tolist") else list(a)


def _run(ops, args, start, end, env, stack):
    sp = 0
    pc = start
    while pc < end:
        op = ops[pc]
        if op == 0:
            stack[sp] = args[pc]
            sp += 1
        elif op == 1:
            stack[sp] = env[args[pc]]
            sp += 1
        elif op <= 5 or 7 <= op <= 12 or op >= 22:
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
                    return 0.0, DIV_ZERO
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
                pc = start + args[pc]
                continue
            sp -= 1
        elif op == 15:
            if stack[sp - 1] != 0.0:
                pc = start + args[pc]
                continue
            sp -= 1
        elif op == 16:
            sp -= 1
            if stack[sp] == 0.0:
                pc = start + args[pc]
                continue
        elif op == 17:
            pc = start + args[pc]
            continue
        else:
            x = stack[sp - 1]
            if op == 18:
                x = -x if x < 0.0 else x
            elif op == 19:
                try:
                    x = math.exp(x)
                except OverflowError:
                    x = math.inf
            elif op == 20:
                if x <= 0.0:
                    return 0.0, DOMAIN
                x = math.log(x)
            else:
                if x < 0.0:
                    return 0.0, DOMAIN
                x = math.sqrt(x)
            stack[sp - 1] = x
        pc += 1
    return stack[0], OK


def _prep(ops, args):
    """Constants stay floats; slot indices and jump targets become ints."""
    return [a if o == 0 else int(a) for o, a in zip(ops, args)]


def run_program(ops, args, start, end, env):
    """Evaluate one program against *env*; returns ``(value, status)``."""
    ops = _as_list(ops)
    args = _prep(ops, _as_list(args))
    return _run(ops, args, start, end, _as_list(env), [0.0] * _STACK)


def _derivs(ops, args, starts, ends, dprogs, nonneg, env, stack, out):
    for i, p in enumerate(dprogs):
        v, st = _run(ops, args, starts[p], ends[p], env, stack)
        if st:
            return st
        if not math.isfinite(v):
            return NON_FINITE
        if nonneg[i] and v < 0.0:
            return NEGATIVE_RATE
        out[i] = v
    return OK


def _rk4(ops, args, starts, ends, dprogs, slots, nonneg, env, stack, t0, y0, dt, k1):
    """One RK4 step from (t0, y0) of size dt.  k1 is the derivative at y0.

    Leaves env holding the state at t0 + dt; returns (status, y_new).
    """
    n = len(slots)
    k2 = [0.0] * n
    k3 = [0.0] * n
    k4 = [0.0] * n
    half = 0.5 * dt
    env[0] = t0 + half
    for i in range(n):
        env[slots[i]] = y0[i] + half * k1[i]
    st = _derivs(ops, args, starts, ends, dprogs, nonneg, env, stack, k2)
    if st:
        return st, None
    for i in range(n):
        env[slots[i]] = y0[i] + half * k2[i]
    st = _derivs(ops, args, starts, ends, dprogs, nonneg, env, stack, k3)
    if st:
        return st, None
    env[0] = t0 + dt
    for i in range(n):
        env[slots[i]] = y0[i] + dt * k3[i]
    st = _derivs(ops, args, starts, ends, dprogs, nonneg, env, stack, k4)
    if st:
        return st, None
    y = [0.0] * n
    sixth = dt / 6.0
    for i in range(n):
        y[i] = y0[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        env[slots[i]] = y[i]
    env[0] = t0 + dt
    return OK, y


def _set(env, slots, t, y):
    env[0] = t
    for i, s in enumerate(slots):
        env[s] = y[i]


def _first_hit(ops, args, starts, ends, mons, wants, env, stack):
    for j, p in enumerate(mons):
        v, st = _run(ops, args, starts[p], ends[p], env, stack)
        if st:
            return -1, st
        if (v != 0.0) == (wants[j] != 0):
            return j, OK
    return -1, OK


def integrate(ops, args, starts, ends, dprogs, slots, nonneg,
              mons, wants, env, t_end, h, tol):
    """Fixed-step RK4 from ``env[0]`` towards *t_end*.

    Stops early at the first monitor program whose truth value reaches its
    wanted value; the crossing time is refined by bisection to *tol*.  Ties
    go to the lowest monitor index.  *env* is updated in place.  Returns
    ``(t_stop, monitor_index or -1, status)``.
    """
    ops = _as_list(ops)
    args = _prep(ops, _as_list(args))
    starts = _as_list(starts)
    ends = _as_list(ends)
    dprogs = _as_list(dprogs)
    slots = _as_list(slots)
    nonneg = _as_list(nonneg)
    mons = _as_list(mons)
    wants = _as_list(wants)
    e = _as_list(env)
    stack = [0.0] * _STACK
    n = len(slots)

    def finish(t, hit, status):
        for i in range(len(e)):
            env[i] = e[i]
        return t, hit, status

    t0 = e[0]
    hit, st = _first_hit(ops, args, starts, ends, mons, wants, e, stack)
    if st or hit >= 0:
        return finish(t0, hit, st)
    t = t0
    y = [e[s] for s in slots]
    k1 = [0.0] * n
    k = 0
    while t < t_end:
        t_next = t0 + (k + 1) * h
        if t_next >= t_end - 1e-9 * h:
            t_next = t_end
        dt = t_next - t
        _set(e, slots, t, y)
        st = _derivs(ops, args, starts, ends, dprogs, nonneg, e, stack, k1)
        if st:
            return finish(t, -1, st)
        st, y_new = _rk4(ops, args, starts, ends, dprogs, slots, nonneg, e, stack, t, y, dt, k1)
        if st:
            return finish(t, -1, st)
        if mons:
            hits = []
            for j, p in enumerate(mons):
                v, st = _run(ops, args, starts[p], ends[p], e, stack)
                if st:
                    return finish(t_next, -1, st)
                if (v != 0.0) == (wants[j] != 0):
                    hits.append(j)
            if hits:
                best = -1
                best_dt = 0.0
                for j in hits:
                    p = mons[j]
                    lo, hi = 0.0, dt
                    while hi - lo > tol:
                        mid = 0.5 * (lo + hi)
                        st, _ = _rk4(ops, args, starts, ends, dprogs, slots, nonneg,
                                     e, stack, t, y, mid, k1)
                        if st:
                            return finish(t, -1, st)
                        v, st = _run(ops, args, starts[p], ends[p], e, stack)
                        if st:
                            return finish(t, -1, st)
                        if (v != 0.0) == (wants[j] != 0):
                            hi = mid
                        else:
                            lo = mid
                    if best < 0 or hi < best_dt:
                        best = j
                        best_dt = hi
                st, _ = _rk4(ops, args, starts, ends, dprogs, slots, nonneg,
                             e, stack, t, y, best_dt, k1)
                if st:
                    return finish(t, -1, st)
                return finish(t + best_dt, best, OK)
        y = y_new
        t = t_next
        k += 1
    _set(e, slots, t, y)
    return finish(t, -1, OK)
