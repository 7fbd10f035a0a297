"""Small dense LMI solver: log-det barrier with Newton steps.

Solves

    minimize    c^T y
    subject to  F0_b + sum_i y_i F_ib  >= 0   for each block b
                A y = b

for a few dozen variables and blocks of modest size.  A phase-I problem finds
a strictly feasible start when none is supplied.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space


class LmiInfeasible(RuntimeError):
    pass


class LmiUnbounded(RuntimeError):
    pass


@dataclass
class LmiBlock:
    F0: np.ndarray
    Fs: np.ndarray  # shape (p, k, k)

    def value(self, y):
        return self.F0 + np.tensordot(y, self.Fs, axes=1)


@dataclass
class LmiResult:
    y: np.ndarray
    objective: float
    gap: float
    iterations: int


def _chol(X):
    try:
        return cho_factor(X, lower=True)
    except np.linalg.LinAlgError:
        return None


def _barrier_value(blocks, y):
    val = 0.0
    for blk in blocks:
        X = blk.value(y)
        cf = _chol(0.5 * (X + X.T))
        if cf is None:
            return None
        val -= 2 * np.sum(np.log(np.diag(cf[0])))
    return val


def _barrier_terms(blocks, y):
    """Value, gradient and Hessian of -sum log det F_b(y), or None outside the domain."""
    p = y.size
    val, grad, hess = 0.0, np.zeros(p), np.zeros((p, p))
    for blk in blocks:
        X = blk.value(y)
        X = 0.5 * (X + X.T)
        cf = _chol(X)
        if cf is None:
            return None
        val -= 2 * np.sum(np.log(np.diag(cf[0])))
        Xi = cho_solve(cf, np.eye(X.shape[0]))
        XF = Xi @ blk.Fs
        grad -= np.einsum("iaa->i", XF)
        # tr(XF_i XF_j) as one matrix product
        hess += XF.reshape(p, -1) @ XF.transpose(0, 2, 1).reshape(p, -1).T
    return val, grad, hess


def _reduce(blocks, A, b, p):
    """Eliminate equalities: y = y0 + N z."""
    if A is None or A.size == 0:
        return blocks, np.zeros(p), np.eye(p)
    A = np.atleast_2d(A)
    y0 = np.linalg.lstsq(A, b, rcond=None)[0]
    if np.linalg.norm(A @ y0 - b) > 1e-9 * (1 + np.linalg.norm(b)):
        raise LmiInfeasible("linear equality constraints are inconsistent")
    N = null_space(A)
    red = [LmiBlock(blk.value(y0), np.tensordot(N.T, blk.Fs, axes=1)) for blk in blocks]
    return red, y0, N


def _centering(blocks, c, t, z, max_newton=100, tol=1e-8):
    for it in range(max_newton):
        terms = _barrier_terms(blocks, z)
        val, g, H = terms
        g = t * c + g
        H = H + 1e-14 * np.trace(H) / max(H.shape[0], 1) * np.eye(H.shape[0])
        try:
            dz = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            dz = -np.linalg.lstsq(H, g, rcond=None)[0]
        lam2 = -g @ dz
        if lam2 / 2 <= tol:
            return z, it
        step = 1.0
        f0 = t * c @ z + val
        while step > 1e-14:
            zn = z + step * dz
            nv = _barrier_value(blocks, zn)
            if nv is not None and t * c @ zn + nv <= f0 - 0.25 * step * lam2:
                break
            step *= 0.5
        else:
            return z, it
        z = zn
    return z, max_newton


def _phase_one(blocks, p):
    """Find z with all blocks strictly positive definite."""
    z = np.zeros(p)
    lmin = min(np.linalg.eigvalsh(blk.value(z)).min() for blk in blocks)
    if lmin > 0:
        return z
    # minimize s subject to F_b(z) + s I >= 0, and s >= -1 to keep it bounded
    aug = []
    for blk in blocks:
        k = blk.F0.shape[0]
        aug.append(LmiBlock(blk.F0, np.concatenate([blk.Fs, np.eye(k)[None]], axis=0)))
    aug.append(LmiBlock(np.eye(1), np.concatenate([np.zeros((p, 1, 1)), np.ones((1, 1, 1))], axis=0)))
    w = np.r_[z, 1.0 - lmin]
    c = np.r_[np.zeros(p), 1.0]
    t = 1.0
    for _ in range(60):
        w, _ = _centering(aug, c, t, w)
        if w[-1] < 0:
            return w[:-1]
        if sum(b.F0.shape[0] for b in aug) / t < 1e-9:
            break
        t *= 8
    raise LmiInfeasible(f"no strictly feasible point (phase-I optimum {w[-1]:.3e})")


def solve_lmi(c, blocks, A=None, b=None, y_start=None, tol=1e-10, mu=10.0, bound=1e12):
    """Barrier method for the LMI program described in the module docstring.

    Returns the final iterate, which is strictly feasible; ``gap`` bounds its
    suboptimality.  Raises :class:`LmiUnbounded` when the objective runs past
    ``-bound`` and :class:`LmiInfeasible` when no strictly feasible point exists.
    """
    c = np.asarray(c, dtype=float)
    p = c.size
    red, y0, N = _reduce(blocks, A, b, p)
    cz = N.T @ c
    q = N.shape[1]
    if y_start is not None:
        z = N.T @ (np.asarray(y_start, float) - y0)
        if _barrier_value(red, z) is None:
            z = _phase_one(red, q)
    else:
        z = _phase_one(red, q)
    m = sum(blk.F0.shape[0] for blk in red)
    scale = max(1.0, np.linalg.norm(cz))
    t = 1.0 / scale
    iters = 0
    while True:
        z, k = _centering(red, cz, t, z)
        iters += k
        if cz @ z < -bound * scale or np.linalg.norm(z) > bound:
            raise LmiUnbounded("objective unbounded below")
        if m / t < tol * max(1.0, abs(cz @ z)):
            break
        t *= mu
    y = y0 + N @ z
    return LmiResult(y, float(c @ y), m / t, iters)


def min_eig(X):
    return float(np.linalg.eigvalsh(0.5 * (X + X.T)).min())
