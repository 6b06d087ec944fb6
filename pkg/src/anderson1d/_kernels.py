"""Compiled inner loops of the phase flow.

One step of the forward flow is a noise kick followed by the exact
deterministic flow.  In the Riccati coordinate ``X = cot theta`` the kick
is ``X -> X + dB`` (additive noise, exact) and the deterministic part
``dX = -(beta + alpha X**2) dt`` is solved in closed form through the
linear system ``(a, b)' = (-beta b, alpha a)`` with ``X = a / b``.  Both
maps are written on the unreduced phase so that every pi-crossing is
counted exactly, however large the step.

The ``vector_*`` kernels carry the same discrete flow as a unit vector
``(a, b)`` with ``b >= 0`` plus a half-turn counter ``k``, so that
``theta = k pi + atan2(b, a)``.  They avoid transcendental calls in the
loop and are exact as long as the phase turns by less than one radian
per step, which the caller checks.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
_PARABOLIC = 1e-28


@njit(cache=True, inline="always")
def wrap(angle):
    return angle - TWO_PI * math.floor(angle / TWO_PI + 0.5)


@njit(cache=True, inline="always")
def log_cosh(x):
    x = abs(x)
    return x + math.log1p(math.exp(-2.0 * x)) - math.log(2.0)


@njit(cache=True)
def kick(theta, increment):
    """Noise map ``cot theta -> cot theta + increment``; returns (theta, drho)."""
    s = math.sin(theta)
    c = math.cos(theta)
    a = c + s * increment
    return theta + wrap(math.atan2(s, a) - math.atan2(s, c)), math.log(a * a + s * s)


@njit(cache=True)
def free_flow(theta, alpha, beta, tau):
    """Exact deterministic flow over time ``tau`` (negative runs it backwards)."""
    s = math.sin(theta)
    c = math.cos(theta)
    product = alpha * beta
    if abs(product) * tau * tau < _PARABOLIC:
        a = c - beta * tau * s
        b = s + alpha * tau * c
        return theta + wrap(math.atan2(b, a) - math.atan2(s, c)), math.log(a * a + b * b)
    if beta > 0.0:
        omega = math.sqrt(product)
        kappa = math.sqrt(alpha / beta)
        psi = theta + wrap(math.atan2(s, kappa * c) - math.atan2(s, c)) + omega * tau
        s1 = math.sin(psi)
        c1 = math.cos(psi)
        theta1 = psi + wrap(math.atan2(s1, c1 / kappa) - math.atan2(s1, c1))
        drho = math.log(kappa * kappa * c * c + s * s) + math.log(c1 * c1 / (kappa * kappa) + s1 * s1)
        return theta1, drho
    rate = math.sqrt(-product)
    slope = math.tanh(rate * tau)
    a = c - beta / rate * slope * s
    b = s + alpha / rate * slope * c
    drho = 2.0 * log_cosh(rate * tau) + math.log(a * a + b * b)
    return theta + wrap(math.atan2(b, a) - math.atan2(s, c)), drho


@njit(cache=True)
def flow_crossing(theta, target, alpha, beta):
    """Time for the deterministic flow to carry ``theta`` up to ``target``."""
    product = alpha * beta
    gap = math.sin(target - theta)
    s = math.sin(theta)
    c = math.cos(theta)
    if beta > 0.0 and product > _PARABOLIC:
        omega = math.sqrt(product)
        kappa = math.sqrt(alpha / beta)
        psi0 = theta + wrap(math.atan2(s, kappa * c) - math.atan2(s, c))
        st = math.sin(target)
        ct = math.cos(target)
        psi1 = target + wrap(math.atan2(st, kappa * ct) - math.atan2(st, ct))
        return (psi1 - psi0) / omega
    st = math.sin(target)
    ct = math.cos(target)
    if beta < 0.0 and -product > _PARABOLIC:
        rate = math.sqrt(-product)
        slope = gap / (alpha / rate * c * ct + beta / rate * s * st)
        return math.atanh(min(slope, 1.0 - 1e-16)) / rate
    return gap / (alpha * c * ct + beta * s * st)


@njit(cache=True)
def step(theta, increment, alpha, beta, dt, backward):
    if backward:
        theta, first = free_flow(theta, alpha, beta, dt)
        theta, second = kick(theta, increment)
    else:
        theta, first = kick(theta, increment)
        theta, second = free_flow(theta, alpha, beta, dt)
    return theta, first + second


@njit(cache=True)
def integrate(theta, rho, z, increments, dt, alpha, beta, root_E, backward,
              track_z, stride, out_theta, out_rho, out_z):
    """Advance one trajectory; records every ``stride`` steps after the initial state."""
    out_theta[0] = theta
    out_rho[0] = rho
    out_z[0] = z
    slot = 1
    for i in range(increments.size):
        previous = theta
        theta, drho = step(theta, increments[i], alpha, beta, dt, backward)
        if track_z:
            decay = math.exp(-drho)
            z = z * decay + 0.5 * root_E * dt * (math.sin(previous) ** 2 * decay + math.sin(theta) ** 2)
        rho += drho
        if (i + 1) % stride == 0:
            out_theta[slot] = theta
            out_rho[slot] = rho
            out_z[slot] = z
            slot += 1
    return theta, rho, z


@njit(cache=True)
def final_phases(theta0, increments, dt, alpha, betas, backward):
    """Terminal phase for each energy coefficient in ``betas`` on shared noise."""
    out = np.empty(betas.size)
    for j in range(betas.size):
        theta = theta0
        beta = betas[j]
        for i in range(increments.size):
            theta, _ = step(theta, increments[i], alpha, beta, dt, backward)
        out[j] = theta
    return out


@njit(cache=True)
def final_phases_batch(theta0, increments, dt, alpha, betas):
    """Terminal forward phases: row ``k`` of ``increments`` against ``betas[k]``."""
    out = np.empty(betas.shape)
    for k in range(increments.shape[0]):
        for j in range(betas.shape[1]):
            theta = theta0
            for i in range(increments.shape[1]):
                theta, _ = step(theta, increments[k, i], alpha, betas[k, j], dt, False)
            out[k, j] = theta
    return out


@njit(cache=True)
def rotation_events(theta0, increments, dt, alpha, beta, out_times, out_rho):
    """Times (from the start) at which the phase first reaches theta0 + k pi.

    Returns the number of events written; ``out_rho`` holds rho at each event.
    """
    theta = theta0
    rho = 0.0
    target = theta0 + math.pi
    count = 0
    limit = out_times.size
    for i in range(increments.size):
        t = i * dt
        theta, drho = kick(theta, increments[i])
        rho += drho
        while theta >= target and count < limit:
            out_times[count] = t
            out_rho[count] = rho
            count += 1
            target += math.pi
        moved, drho = free_flow(theta, alpha, beta, dt)
        while moved >= target and count < limit:
            tau = min(max(flow_crossing(theta, target, alpha, beta), 0.0), dt)
            _, partial = free_flow(theta, alpha, beta, tau)
            out_times[count] = t + tau
            out_rho[count] = rho + partial
            count += 1
            target += math.pi
        theta = moved
        rho += drho
        if count >= limit:
            break
    return count


@njit(cache=True)
def phase_snapshots(theta0, increments, dt, alpha, beta, marks):
    """Phase of every row of ``increments`` after ``marks[k]`` steps."""
    out = np.empty((increments.shape[0], marks.size))
    for p in range(increments.shape[0]):
        theta = theta0
        k = 0
        for i in range(increments.shape[1]):
            theta, _ = step(theta, increments[p, i], alpha, beta, dt, False)
            while k < marks.size and marks[k] == i + 1:
                out[p, k] = theta
                k += 1
    return out


@njit(cache=True)
def _table_value(table, theta):
    # table samples a pi-periodic function on a uniform grid of [0, pi]
    cells = table.size - 1
    x = (theta - math.pi * math.floor(theta / math.pi)) * (cells / math.pi)
    i = min(int(x), cells - 1)
    w = x - i
    return (1.0 - w) * table[i] + w * table[i + 1]


@njit(cache=True)
def integrate_adjoint(theta, rho, increments, dt, alpha, beta, log_slope, stride,
                      out_theta, out_rho):
    """Adjoint flow: kick, reversed deterministic flow, then the drift correction

    ``(2 sin^3 cos + sin^4 l) dt`` on the phase and
    ``(-4 sin^2 cos^2 - 2 sin^3 cos l) dt`` on rho, ``l = d log mu``.
    """
    out_theta[0] = theta
    out_rho[0] = rho
    slot = 1
    for i in range(increments.size):
        theta, first = kick(theta, increments[i])
        theta, second = free_flow(theta, alpha, beta, -dt)
        rho += first + second
        s = math.sin(theta)
        c = math.cos(theta)
        slope = _table_value(log_slope, theta)
        moved = theta + (2.0 * s**3 * c + s**4 * slope) * dt
        if math.floor(moved / math.pi) == math.floor(theta / math.pi):
            theta = moved
        rho += (-4.0 * s * s * c * c - 2.0 * s**3 * c * slope) * dt
        if (i + 1) % stride == 0:
            out_theta[slot] = theta
            out_rho[slot] = rho
            slot += 1
    return theta, rho


# --- vector representation -------------------------------------------------

@njit(cache=True)
def flow_matrix(alpha, beta, tau):
    """Matrix of ``(a, b)' = (-beta b, alpha a)`` over time ``tau``."""
    product = alpha * beta
    if abs(product) * tau * tau < _PARABOLIC:
        return 1.0, -beta * tau, alpha * tau, 1.0
    if product > 0.0:
        omega = math.sqrt(product)
        c = math.cos(omega * tau)
        s = math.sin(omega * tau)
        return c, -beta / omega * s, alpha / omega * s, c
    rate = math.sqrt(-product)
    c = math.cosh(rate * tau)
    s = math.sinh(rate * tau)
    return c, -beta / rate * s, alpha / rate * s, c


@njit(cache=True, inline="always")
def to_vector(theta):
    k = math.floor(theta / math.pi)
    phi = theta - k * math.pi
    return k, math.cos(phi), math.sin(phi)


@njit(cache=True, inline="always")
def to_phase(k, a, b):
    return k * math.pi + math.atan2(b, a)


@njit(cache=True, inline="always")
def canonical(k, a, b):
    """Flip to ``b >= 0``; a flip means a crossing of k pi (up if a < 0)."""
    if b < 0.0:
        if a < 0.0:
            k += 1
        else:
            k -= 1
        return k, -a, -b
    return k, a, b


@njit(cache=True, inline="always")
def vector_step(k, a, b, increment, m11, m12, m21, m22, backward):
    if backward:
        a, b = m11 * a + m12 * b, m21 * a + m22 * b
        k, a, b = canonical(k, a, b)
        a = a + b * increment
    else:
        a = a + b * increment
        a, b = m11 * a + m12 * b, m21 * a + m22 * b
        k, a, b = canonical(k, a, b)
    norm2 = a * a + b * b
    scale = 1.0 / math.sqrt(norm2)
    return k, a * scale, b * scale, norm2


@njit(cache=True)
def vector_integrate(theta, rho, z, increments, dt, alpha, beta, root_E, backward,
                     track_z, stride, out_theta, out_rho, out_z):
    m11, m12, m21, m22 = flow_matrix(alpha, beta, dt)
    k, a, b = to_vector(theta)
    out_theta[0] = theta
    out_rho[0] = rho
    out_z[0] = z
    slot = 1
    growth = 1.0
    for i in range(increments.size):
        previous = b
        k, a, b, norm2 = vector_step(k, a, b, increments[i], m11, m12, m21, m22, backward)
        growth *= norm2
        if track_z:
            decay = 1.0 / norm2
            z = z * decay + 0.5 * root_E * dt * (previous * previous * decay + b * b)
        if (i + 1) % stride == 0 or (i & 31) == 31:
            rho += math.log(growth)
            growth = 1.0
        if (i + 1) % stride == 0:
            out_theta[slot] = to_phase(k, a, b)
            out_rho[slot] = rho
            out_z[slot] = z
            slot += 1
    rho += math.log(growth)
    return to_phase(k, a, b), rho, z


@njit(cache=True)
def vector_final_phases(theta0, increments, dt, alpha, betas, backward):
    out = np.empty(betas.size)
    for j in range(betas.size):
        m11, m12, m21, m22 = flow_matrix(alpha, betas[j], dt)
        k, a, b = to_vector(theta0)
        for i in range(increments.size):
            k, a, b, _ = vector_step(k, a, b, increments[i], m11, m12, m21, m22, backward)
        out[j] = to_phase(k, a, b)
    return out


@njit(cache=True)
def vector_snapshots(theta0, increments, dt, alpha, beta, marks):
    m11, m12, m21, m22 = flow_matrix(alpha, beta, dt)
    out = np.empty((increments.shape[0], marks.size))
    for p in range(increments.shape[0]):
        k, a, b = to_vector(theta0)
        j = 0
        for i in range(increments.shape[1]):
            k, a, b, _ = vector_step(k, a, b, increments[p, i], m11, m12, m21, m22, False)
            while j < marks.size and marks[j] == i + 1:
                out[p, j] = to_phase(k, a, b)
                j += 1
    return out


@njit(cache=True)
def vector_integrate_adjoint(theta, rho, increments, dt, alpha, beta, log_slope, stride,
                             out_theta, out_rho):
    m11, m12, m21, m22 = flow_matrix(alpha, beta, -dt)
    k, a, b = to_vector(theta)
    out_theta[0] = theta
    out_rho[0] = rho
    slot = 1
    for i in range(increments.size):
        a = a + b * increments[i]
        a, b = m11 * a + m12 * b, m21 * a + m22 * b
        k, a, b = canonical(k, a, b)
        norm2 = a * a + b * b
        scale = 1.0 / math.sqrt(norm2)
        a *= scale
        b *= scale
        rho += math.log(norm2)
        slope = _table_value(log_slope, math.atan2(b, a))
        # sin and cos of theta equal (b, a) up to a common sign; the drift is even
        turn = (2.0 * b**3 * a + b**4 * slope) * dt
        rho += (-4.0 * a * a * b * b - 2.0 * b**3 * a * slope) * dt
        moved_a = a - turn * b
        moved_b = b + turn * a
        if moved_b >= 0.0:
            scale = 1.0 / math.sqrt(moved_a * moved_a + moved_b * moved_b)
            a = moved_a * scale
            b = moved_b * scale
        if (i + 1) % stride == 0:
            out_theta[slot] = to_phase(k, a, b)
            out_rho[slot] = rho
            slot += 1
    return to_phase(k, a, b), rho
