"""Weighted one-dimensional fused lasso signal approximation.

Every block update in the additive fit reduces to

    minimize_beta  sum_b (w_b / 2) (v_b - beta_b)^2 + lam * sum_b |beta_{b+1} - beta_b|

which is solved exactly here by Johnson's dynamic program, extended to
per-entry quadratic weights. ``oracle_solve_flsa`` is a slow, independent
proximal-gradient solver used only to certify the DP in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class WeightedSignal:
    """Values with strictly positive quadratic-loss weights (e.g. bin means and counts)."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if values.ndim != 1 or weights.ndim != 1:
            raise ValueError("values and weights must be one-dimensional")
        if values.shape != weights.shape:
            raise ValueError(
                f"values and weights must have the same length, got {values.size} and {weights.size}"
            )
        if values.size == 0:
            raise ValueError("signal must contain at least one entry")
        if not np.all(np.isfinite(values)):
            raise ValueError("signal values must be finite")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("signal weights must be finite and strictly positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.values.size


@njit(cache=True, nogil=True)
def _flsa_dp(y, w, lam):
    # Derivative messages are piecewise linear; knot j carries slope a[j] and
    # intercept b[j] increments. Knots live in x[l..r], growing outward from
    # the centre of a 2n buffer, so message size never exceeds 2n.
    n = y.shape[0]
    beta = np.empty(n)
    if n == 1 or lam == 0.0:
        beta[:] = y
        return beta

    x = np.empty(2 * n)
    a = np.empty(2 * n)
    b = np.empty(2 * n)
    tm = np.empty(n - 1)
    tp = np.empty(n - 1)

    tm[0] = -lam / w[0] + y[0]
    tp[0] = lam / w[0] + y[0]
    l = n - 1
    r = n
    x[l] = tm[0]
    x[r] = tp[0]
    a[l] = w[0]
    b[l] = -w[0] * y[0] + lam
    a[r] = -w[0]
    b[r] = w[0] * y[0] + lam
    afirst = w[1]
    bfirst = -w[1] * y[1] - lam
    alast = -w[1]
    blast = w[1] * y[1] - lam

    for k in range(1, n - 1):
        alo = afirst
        blo = bfirst
        lo = l
        while lo <= r:
            if alo * x[lo] + blo > -lam:
                break
            alo += a[lo]
            blo += b[lo]
            lo += 1

        ahi = alast
        bhi = blast
        hi = r
        while hi >= lo:
            if -ahi * x[hi] - bhi < lam:
                break
            ahi += a[hi]
            bhi += b[hi]
            hi -= 1

        tm[k] = (-lam - blo) / alo
        l = lo - 1
        x[l] = tm[k]
        tp[k] = (lam + bhi) / (-ahi)
        r = hi + 1
        x[r] = tp[k]

        a[l] = alo
        b[l] = blo + lam
        a[r] = ahi
        b[r] = bhi + lam
        afirst = w[k + 1]
        bfirst = -w[k + 1] * y[k + 1] - lam
        alast = -w[k + 1]
        blast = w[k + 1] * y[k + 1] - lam

    alo = afirst
    blo = bfirst
    for lo in range(l, r + 1):
        if alo * x[lo] + blo > 0:
            break
        alo += a[lo]
        blo += b[lo]
    beta[n - 1] = -blo / alo

    for k in range(n - 2, -1, -1):
        if beta[k + 1] > tp[k]:
            beta[k] = tp[k]
        elif beta[k + 1] < tm[k]:
            beta[k] = tm[k]
        else:
            beta[k] = beta[k + 1]
    return beta


def solve_flsa(signal: WeightedSignal, lambda_f: float) -> np.ndarray:
    """Return the exact minimizer of the weighted FLSA objective.

    Fused neighbours come back bitwise equal, so successive differences of
    the result are exactly zero wherever the penalty is active.
    """
    if not lambda_f >= 0 or not np.isfinite(lambda_f):
        raise ValueError(f"lambda_f must be finite and non-negative, got {lambda_f}")
    return _flsa_dp(signal.values, signal.weights, float(lambda_f))


def flsa_objective(signal: WeightedSignal, beta, lambda_f: float) -> float:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != signal.values.shape:
        raise ValueError(f"beta has length {beta.size}, signal has length {len(signal)}")
    fit = 0.5 * np.sum(signal.weights * (signal.values - beta) ** 2)
    return float(fit + lambda_f * np.sum(np.abs(np.diff(beta))))


class OracleFailure(RuntimeError):
    """The proximal-gradient oracle hit its iteration cap before converging."""


@njit(cache=True)
def _mfista(y, w, lam, tol, max_iter):
    # beta = c + cumsum([0, theta]); c is eliminated in closed form (weighted
    # mean), leaving a lasso in theta with design P @ A, P the weighted
    # centring projector. FISTA with function-value restart keeps the
    # accepted-objective trace non-increasing.
    n = y.shape[0]
    m = n - 1
    W = w.sum()

    def beta_of(theta):
        z = np.zeros(n)
        for i in range(1, n):
            z[i] = z[i - 1] + theta[i - 1]
        c = 0.0
        for i in range(n):
            c += w[i] * (y[i] - z[i])
        c /= W
        return z + c

    def objective(theta):
        beta = beta_of(theta)
        f = 0.0
        for i in range(n):
            f += 0.5 * w[i] * (y[i] - beta[i]) ** 2
        return f + lam * np.abs(theta).sum()

    def gradient(theta):
        beta = beta_of(theta)
        g = np.zeros(m)
        acc = 0.0
        for i in range(n - 1, 0, -1):
            acc += w[i] * (beta[i] - y[i])
            g[i - 1] = acc
        return g

    # Lipschitz bound: ||A^T diag(w) A||_2 <= max row sum of the tail-weight Gram.
    tail = np.zeros(m)
    acc = 0.0
    for i in range(n - 1, 0, -1):
        acc += w[i]
        tail[i - 1] = acc
    L = 0.0
    for i in range(m):
        s = 0.0
        for j in range(m):
            s += tail[max(i, j)]
        if s > L:
            L = s
    step = 1.0 / L

    theta = np.zeros(m)
    yk = theta.copy()
    t = 1.0
    trace = np.empty(max_iter + 1)
    fcur = objective(theta)
    trace[0] = fcur
    count = 1
    restarted = True
    for _ in range(max_iter):
        z = yk - step * gradient(yk)
        zt = np.sign(z) * np.maximum(np.abs(z) - step * lam, 0.0)
        fz = objective(zt)
        if fz > fcur:
            if restarted:
                # a plain proximal step cannot descend: round-off floor reached
                return beta_of(theta), trace[:count], True
            # function-value restart: drop momentum, keep the iterate
            restarted = True
            t = 1.0
            yk = theta.copy()
            continue
        restarted = False
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        yk = zt + ((t - 1.0) / t_next) * (zt - theta)
        change = fcur - fz
        theta = zt
        t = t_next
        fcur = fz
        trace[count] = fcur
        count += 1
        if change < tol:
            return beta_of(theta), trace[:count], True
    return beta_of(theta), trace[:count], False


def oracle_solve_flsa(signal: WeightedSignal, lambda_f: float, tol: float = 1e-12,
                      max_iter: int = 500_000, return_trace: bool = False):
    """Solve the weighted FLSA by accelerated proximal gradient on difference variables.

    Independent of the dynamic program; stops once an accepted step lowers the
    objective by less than ``tol``. Raises :class:`OracleFailure` at the cap.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    y, w = signal.values, signal.weights
    if y.size == 1:
        beta, trace = y.copy(), np.array([0.0])
    else:
        beta, trace, ok = _mfista(y, w, float(lambda_f), float(tol), int(max_iter))
        if not ok:
            raise OracleFailure(f"oracle did not converge within {max_iter} iterations")
    return (beta, trace) if return_trace else beta
