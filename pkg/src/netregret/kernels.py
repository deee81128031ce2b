"""Hot numeric loops: trajectory recursions and the perturbed-leader minimizer.

The round recursions are inherently sequential in k, so the per-round work is
what matters.  Each kernel exists in two builds selected by
``backend.ACTIVE`` (see :mod:`netregret.backend`):

* a numba ``@njit`` build with explicit scalar loops,
* a vectorized numpy build used as the fallback.

Callers can override the process-wide default with ``force="numpy"`` or
``force="numba"``; the benchmark and the parity tests do.

Loss families are encoded as integers so the jitted kernels can dispatch on
them without objects:

  0  quadratic            0.5*mu*(x-c)^2
  1  absolute             |x-c| smoothed below the knee (Huber)
  2  pseudo-sigmoid       1/(1+exp(-s*(x-c)))
  3  sine-quadratic       0.5*(x-c)^2 + a*sin(w*(x-c))^2
"""

import math

import numpy as np

from . import backend

QUADRATIC = 0
ABSOLUTE = 1
SIGMOID = 2
SINE_QUADRATIC = 3

FAMILY_CODES = {
    "quadratic": QUADRATIC,
    "absolute": ABSOLUTE,
    "pseudo-sigmoid": SIGMOID,
    "sine-quadratic": SINE_QUADRATIC,
}

#: gradient-norm threshold below which the normalized-gradient update holds still
EPS_GRAD = 1e-12

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# vectorized loss evaluation (numpy path; also used for whole-trajectory
# accounting regardless of backend)
# ---------------------------------------------------------------------------

def loss_values(code, x, center, p1, p2):
    """Elementwise loss values; all arguments broadcast."""
    r = np.asarray(x, dtype=float) - center
    if code == QUADRATIC:
        return 0.5 * p1 * r * r
    if code == ABSOLUTE:
        a = np.abs(r)
        return np.where(a <= p1, 0.5 * r * r / p1, a - 0.5 * p1)
    if code == SIGMOID:
        # expit via tanh, stable for large |z|
        return 0.5 * (1.0 + np.tanh(0.5 * p1 * r))
    if code == SINE_QUADRATIC:
        s = np.sin(p2 * r)
        return 0.5 * r * r + p1 * s * s
    raise ValueError("unknown family code %r" % (code,))


def loss_grads(code, x, center, p1, p2):
    """Elementwise analytic gradients; all arguments broadcast."""
    r = np.asarray(x, dtype=float) - center
    if code == QUADRATIC:
        return p1 * r
    if code == ABSOLUTE:
        return np.clip(r / p1, -1.0, 1.0)
    if code == SIGMOID:
        s = 0.5 * (1.0 + np.tanh(0.5 * p1 * r))
        return p1 * s * (1.0 - s)
    if code == SINE_QUADRATIC:
        return r + p1 * p2 * np.sin(2.0 * p2 * r)
    raise ValueError("unknown family code %r" % (code,))


# ---------------------------------------------------------------------------
# numpy trajectory loops
# ---------------------------------------------------------------------------

def _ocgd_numpy(mix, centers, code, p1, p2, alphas, lo, hi, x0):
    horizon, n = centers.shape
    traj = np.empty((horizon, n))
    x = x0.astype(float).copy()
    for k in range(horizon):
        traj[k] = x
        g = loss_grads(code, x, centers[k], p1, p2)
        x = np.clip(mix @ x - alphas[k] * g, lo, hi)
    return traj, x


def _congd_numpy(mix, centers, code, p1, p2, alphas, lo, hi, x0):
    horizon, n = centers.shape
    traj = np.empty((horizon, n))
    x = x0.astype(float).copy()
    for k in range(horizon):
        traj[k] = x
        g = loss_grads(code, x, centers[k], p1, p2)
        mag = np.abs(g)
        active = mag > EPS_GRAD
        mixed = mix @ x
        moved = np.clip(mixed - alphas[k] * np.sign(g), lo, hi)
        x = np.where(active, moved, x)
    return traj, x


# ---------------------------------------------------------------------------
# perturbed-leader grid minimizer (numpy path)
#
# Objective with collapsed coefficients:
#   phi(x) = qa*x^2 + qb*x + qc - 0.5*amp*(tc*cos(w2*x) + ts*sin(w2*x))
# minimized over a uniform grid, then one golden-section pass inside the
# bracketing cell.  The grid point wins ties so exact grid minima (e.g. a
# box edge) are returned verbatim.
# ---------------------------------------------------------------------------

def _quadtrig_values(coeffs, x):
    qa, qb, qc, amp, w2, tc, ts = coeffs
    v = qa * x * x + qb * x + qc
    if amp != 0.0:
        v = v - 0.5 * amp * (tc * np.cos(w2 * x) + ts * np.sin(w2 * x))
    return v


def _quadtrig_scalar(coeffs, x):
    qa, qb, qc, amp, w2, tc, ts = coeffs
    v = qa * x * x + qb * x + qc
    if amp != 0.0:
        v -= 0.5 * amp * (tc * math.cos(w2 * x) + ts * math.sin(w2 * x))
    return v


def golden_refine(fun, lo, hi, iters):
    """Golden-section pass on [lo, hi]; returns (x, fun(x)) at the better probe."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = fun(c)
    fd = fun(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(d)
    if fc <= fd:
        return c, fc
    return d, fd


def _ftpl_argmin_numpy(coeffs, sigma, lo, hi, m, iters):
    qa, qb, qc, amp, w2, tc, ts = coeffs
    shifted = (qa, qb - sigma, qc, amp, w2, tc, ts)
    grid = np.linspace(lo, hi, m)
    vals = _quadtrig_values(shifted, grid)
    j = int(np.argmin(vals))
    bl = grid[j - 1] if j > 0 else grid[j]
    bh = grid[j + 1] if j < m - 1 else grid[j]
    xr, vr = golden_refine(lambda t: _quadtrig_scalar(shifted, t), bl, bh, iters)
    if vr < vals[j]:
        return float(xr)
    return float(grid[j])


# ---------------------------------------------------------------------------
# numba builds
# ---------------------------------------------------------------------------

if backend.HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _grad_scalar(code, x, c, p1, p2):
        r = x - c
        if code == 0:
            return p1 * r
        elif code == 1:
            if r > p1:
                return 1.0
            elif r < -p1:
                return -1.0
            return r / p1
        elif code == 2:
            s = 0.5 * (1.0 + math.tanh(0.5 * p1 * r))
            return p1 * s * (1.0 - s)
        else:
            return r + p1 * p2 * math.sin(2.0 * p2 * r)

    @njit(cache=True)
    def _ocgd_numba(mix, centers, code, p1, p2, alphas, lo, hi, x0):
        horizon, n = centers.shape
        traj = np.empty((horizon, n))
        x = x0.copy()
        y = np.empty(n)
        for k in range(horizon):
            for i in range(n):
                traj[k, i] = x[i]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += mix[i, j] * x[j]
                g = _grad_scalar(code, x[i], centers[k, i], p1[i], p2[i])
                y[i] = acc - alphas[k] * g
            for i in range(n):
                xi = y[i]
                if xi < lo:
                    xi = lo
                elif xi > hi:
                    xi = hi
                x[i] = xi
        return traj, x

    @njit(cache=True)
    def _congd_numba(mix, centers, code, p1, p2, alphas, lo, hi, x0):
        horizon, n = centers.shape
        traj = np.empty((horizon, n))
        x = x0.copy()
        y = np.empty(n)
        act = np.empty(n, dtype=np.bool_)
        for k in range(horizon):
            for i in range(n):
                traj[k, i] = x[i]
            for i in range(n):
                g = _grad_scalar(code, x[i], centers[k, i], p1[i], p2[i])
                if abs(g) > EPS_GRAD:
                    act[i] = True
                    acc = 0.0
                    for j in range(n):
                        acc += mix[i, j] * x[j]
                    step = 1.0 if g > 0.0 else -1.0
                    y[i] = acc - alphas[k] * step
                else:
                    act[i] = False
            for i in range(n):
                if act[i]:
                    xi = y[i]
                    if xi < lo:
                        xi = lo
                    elif xi > hi:
                        xi = hi
                    x[i] = xi
        return traj, x

    @njit(cache=True)
    def _quadtrig_numba(qa, qb, qc, amp, w2, tc, ts, x):
        v = qa * x * x + qb * x + qc
        if amp != 0.0:
            v -= 0.5 * amp * (tc * math.cos(w2 * x) + ts * math.sin(w2 * x))
        return v

    @njit(cache=True)
    def _ftpl_argmin_numba(qa, qb, qc, amp, w2, tc, ts, sigma, lo, hi, m, iters):
        qbs = qb - sigma
        h = (hi - lo) / (m - 1)
        best = 0
        bestv = _quadtrig_numba(qa, qbs, qc, amp, w2, tc, ts, lo)
        for j in range(1, m):
            xj = lo + h * j if j < m - 1 else hi
            v = _quadtrig_numba(qa, qbs, qc, amp, w2, tc, ts, xj)
            if v < bestv:
                bestv = v
                best = j
        xb = lo + h * best if best < m - 1 else hi
        a = lo + h * (best - 1) if best > 0 else xb
        b = lo + h * (best + 1) if best < m - 1 else xb
        if best == m - 2:
            b = hi
        invphi = 0.6180339887498949
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc = _quadtrig_numba(qa, qbs, qc, amp, w2, tc, ts, c)
        fd = _quadtrig_numba(qa, qbs, qc, amp, w2, tc, ts, d)
        for _ in range(iters):
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = _quadtrig_numba(qa, qbs, qc, amp, w2, tc, ts, c)
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = _quadtrig_numba(qa, qbs, qc, amp, w2, tc, ts, d)
        if fc <= fd:
            xr, vr = c, fc
        else:
            xr, vr = d, fd
        if vr < bestv:
            return xr
        return xb


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _pick(force):
    which = backend.ACTIVE if force is None else force
    if which == "numba" and not backend.HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")
    if which not in ("numba", "numpy"):
        raise ValueError("backend must be 'numba' or 'numpy', got %r" % (which,))
    return which


def ocgd_trajectory(mix, centers, code, p1, p2, alphas, lo, hi, x0, force=None):
    """Run the consensus gradient recursion for the whole horizon.

    Per round: y_i = sum_j mix[i,j]*x_j - alpha_k * grad f_k^i(x_i), then a
    box clamp.  Returns (traj, x_final) with traj[k] the state *played* at
    round k+1 (so traj[0] == x0).
    """
    args = _as_kernel_args(mix, centers, p1, p2, alphas, x0)
    if _pick(force) == "numba":
        return _ocgd_numba(args[0], args[1], code, args[2], args[3], args[4],
                           float(lo), float(hi), args[5])
    return _ocgd_numpy(args[0], args[1], code, args[2], args[3], args[4],
                       float(lo), float(hi), args[5])


def congd_trajectory(mix, centers, code, p1, p2, alphas, lo, hi, x0, force=None):
    """Normalized-gradient variant: the step direction is sign-normalized per
    agent and an agent with |grad| <= EPS_GRAD keeps its state (no mixing)."""
    args = _as_kernel_args(mix, centers, p1, p2, alphas, x0)
    if _pick(force) == "numba":
        return _congd_numba(args[0], args[1], code, args[2], args[3], args[4],
                            float(lo), float(hi), args[5])
    return _congd_numpy(args[0], args[1], code, args[2], args[3], args[4],
                        float(lo), float(hi), args[5])


def ftpl_argmin(coeffs, sigma, lo, hi, m, iters=48, force=None):
    """Minimize a collapsed quadratic+trig objective minus sigma*x over a
    uniform m-point grid with one golden-section pass in the bracket cell."""
    if _pick(force) == "numba":
        qa, qb, qc, amp, w2, tc, ts = (float(v) for v in coeffs)
        return float(_ftpl_argmin_numba(qa, qb, qc, amp, w2, tc, ts,
                                        float(sigma), float(lo), float(hi),
                                        int(m), int(iters)))
    return _ftpl_argmin_numpy(tuple(float(v) for v in coeffs), float(sigma),
                              float(lo), float(hi), int(m), int(iters))


def _as_kernel_args(mix, centers, p1, p2, alphas, x0):
    return (
        np.ascontiguousarray(mix, dtype=float),
        np.ascontiguousarray(centers, dtype=float),
        np.ascontiguousarray(p1, dtype=float),
        np.ascontiguousarray(p2, dtype=float),
        np.ascontiguousarray(alphas, dtype=float),
        np.ascontiguousarray(x0, dtype=float),
    )
