"""AC dipole allocation: sinusoidal waves, averaged wrench, power-optimal allocation and its dual bound.

The averaged wrench of satellites 1..n-1 is a quadratic form in the stacked
sine and cosine coefficients x = [s_N; c_N]:

    u_i = kappa * (s^T F_i s + c^T F_i c),   kappa = MU0 / (8 pi),

and the time-averaged coil power is (1/2) sum_j w_j (|s_j|^2 + |c_j|^2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import least_squares, minimize

from .magnetics import KM, MU0, GeometryStack, numerical_rank
from .sdp import LmiBlock, LmiInfeasible, LmiUnbounded, solve_lmi

KAPPA = MU0 / (8 * np.pi)
DEFAULT_FREQUENCIES = 8 * np.pi * np.arange(1, 6)


class AllocationError(RuntimeError):
    def __init__(self, message, best_residual=np.inf):
        super().__init__(message)
        self.best_residual = best_residual


class InfeasibleCommand(AllocationError):
    pass


@dataclass
class DipoleWave:
    s: np.ndarray
    c: np.ndarray
    omega: float = DEFAULT_FREQUENCIES[0]

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float).reshape(3)
        self.c = np.asarray(self.c, dtype=float).reshape(3)
        if not self.omega > 0:
            raise ValueError("wave frequency must be positive")

    @property
    def period(self):
        return 2 * np.pi / self.omega

    def at(self, t):
        return instantaneous_dipole(self, t)


def instantaneous_dipole(wave: DipoleWave, t):
    return wave.s * np.sin(wave.omega * t) + wave.c * np.cos(wave.omega * t)


def _channels(waves):
    """Normalise per-satellite input to lists of waves (several channels per satellite allowed)."""
    return [list(w) if isinstance(w, (list, tuple)) else ([] if w is None else [w]) for w in waves]


def same_frequency(a, b, rtol=1e-12):
    return abs(a - b) <= rtol * max(a, b)


def averaged_wrench(waves, stack: GeometryStack):
    """Period-averaged wrench on every satellite, shape (n, 6).

    ``waves[j]`` is a DipoleWave or a list of them (one per frequency channel).
    Only same-frequency components interact on average.
    """
    chans = _channels(waves)
    n = len(chans)
    out = np.zeros((n, 6))
    for (j, k), X in stack.blocks.items():
        for wj in chans[j]:
            for wk in chans[k]:
                if same_frequency(wj.omega, wk.omega):
                    out[j] += 0.5 * KM * X @ (np.kron(wk.s, wj.s) + np.kron(wk.c, wj.c))
    return out


def instantaneous_wrench(waves, stack: GeometryStack, t):
    chans = _channels(waves)
    mus = [sum((instantaneous_dipole(w, t) for w in ch), np.zeros(3)) for ch in chans]
    out = np.zeros((len(chans), 6))
    for (j, k), X in stack.blocks.items():
        out[j] += KM * X @ np.kron(mus[k], mus[j])
    return out


def ripple_coefficients(wave_j: DipoleWave, wave_k: DipoleWave, G):
    """(x, y) of the 2-omega ripple on receiver j from source k."""
    if not same_frequency(wave_j.omega, wave_k.omega):
        raise ValueError("ripple is a pure 2-omega term only for same-frequency pairs")
    sj, cj, sk, ck = wave_j.s, wave_j.c, wave_k.s, wave_k.c
    x = KAPPA * G @ (np.kron(ck, cj) - np.kron(sk, sj))
    y = KAPPA * G @ (np.kron(ck, sj) + np.kron(sk, cj))
    return x, y


def ripple_disturbance(wave_j: DipoleWave, wave_k: DipoleWave, G):
    """Function t -> cos(2wt) x + sin(2wt) y."""
    x, y = ripple_coefficients(wave_j, wave_k, G)
    w2 = 2 * wave_j.omega
    return lambda t: np.cos(w2 * t) * x + np.sin(w2 * t) * y


def ripple_sup_bound(x, y):
    """max_t |cos(t) x + sin(t) y| in closed form."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    scale = max(np.abs(x).max(initial=0.0), np.abs(y).max(initial=0.0))
    if scale == 0:
        return 0.0
    # normalized so the fourth powers below neither underflow nor overflow
    x, y = x / scale, y / scale
    xx, yy, xy = x @ x, y @ y, x @ y
    return float(scale * np.sqrt((xx + yy) / 2 + np.hypot(xx - yy, 2 * xy) / 2))


def satellite_ripple(waves, stack: GeometryStack):
    """Per-satellite ripple coefficients (x_j, y_j) summed over same-frequency neighbours.

    Requires a single frequency per satellite.
    """
    chans = _channels(waves)
    n = len(chans)
    xs, ys = np.zeros((n, 6)), np.zeros((n, 6))
    for (j, k), X in stack.blocks.items():
        for wj in chans[j]:
            for wk in chans[k]:
                if same_frequency(wj.omega, wk.omega):
                    x, y = ripple_coefficients(wj, wk, X)
                    xs[j] += x
                    ys[j] += y
    return xs, ys


# --------------------------------------------------------------------------
# quadratic model of the averaged wrench


def power_weights(coils):
    """Per-satellite weight w_j with coil power (1/2) w_j |mu|^2 averaged over a period.

    Each axis dissipates R c^2 and c = mu / (N A core_gain).
    """
    return np.array([c.resistance / c.dipole_per_amp**2 for c in coils])


def constraint_forms(stack: GeometryStack):
    """Symmetric F_i (3n x 3n) with u_i = kappa (s^T F_i s + c^T F_i c) over the reduced rows."""
    G = stack.matrix
    n3 = 3 * stack.n
    F = G.reshape(G.shape[0], n3, n3)
    return 0.5 * (F + F.transpose(0, 2, 1))


def momentum_residual(commands, swarm):
    """Net linear and angular momentum rate implied by per-satellite commands."""
    commands = np.asarray(commands, dtype=float).reshape(swarm.n, 6)
    f = commands[:, :3].sum(axis=0)
    tau = np.zeros(3)
    for sat, u in zip(swarm.satellites, commands):
        tau += sat.dcm.T @ u[3:] + np.cross(sat.position, u[:3])
    return f, tau


def reduced_command(commands, n):
    """[f_1..f_{n-1}; tau_1..tau_{n-1}] from an (n, 6) command array."""
    commands = np.asarray(commands, dtype=float).reshape(n, 6)
    return np.concatenate([commands[:-1, :3].ravel(), commands[:-1, 3:].ravel()])


@dataclass
class AllocationResult:
    waves: list
    achieved: np.ndarray
    primal_power: float
    dual_lower_bound: float
    residual_norm: float
    null_space_dim: int = 0
    starts_converged: int = 0
    candidate_powers: list = field(default_factory=list)

    @property
    def gap(self):
        return self.primal_power - self.dual_lower_bound


class QuadraticAllocation:
    """Feasibility and power objective of the AC allocation in scaled variables."""

    def __init__(self, stack: GeometryStack, weights, u):
        self.stack = stack
        self.n = stack.n
        self.F = constraint_forms(stack)
        self.u = np.asarray(u, dtype=float)
        self.w = np.repeat(np.asarray(weights, dtype=float), 3)
        # scale so that unit-size coefficients produce unit-size wrenches
        fnorm = max(np.abs(self.F).max(), 1e-300)
        unorm = max(np.abs(self.u).max(), 1e-300)
        self.scale = np.sqrt(unorm / (KAPPA * fnorm))
        self.unorm = unorm

    def split(self, x):
        n3 = 3 * self.n
        return x[:n3], x[n3:]

    def residual(self, x):
        """Scaled constraint residual for scaled x."""
        s, c = self.split(x * self.scale)
        h = KAPPA * (np.einsum("a,iab,b->i", s, self.F, s) + np.einsum("a,iab,b->i", c, self.F, c))
        return (h - self.u) / self.unorm

    def jacobian(self, x):
        s, c = self.split(x * self.scale)
        Js = 2 * KAPPA * np.einsum("iab,b->ia", self.F, s)
        Jc = 2 * KAPPA * np.einsum("iab,b->ia", self.F, c)
        return np.hstack([Js, Jc]) * self.scale / self.unorm

    def power(self, x):
        xs = x * self.scale
        return 0.5 * np.sum(np.r_[self.w, self.w] * xs * xs)

    def power_grad(self, x):
        return np.r_[self.w, self.w] * x * self.scale**2

    def newton_polish(self, x, iters=30, tol=1e-15):
        """Minimum-norm Gauss-Newton steps onto the constraint set."""
        for _ in range(iters):
            r = self.residual(x)
            if np.linalg.norm(r) < tol:
                break
            x = x - np.linalg.lstsq(self.jacobian(x), r, rcond=None)[0]
        return x


def _waves_from_x(x, n, omega):
    s, c = x[: 3 * n].reshape(n, 3), x[3 * n :].reshape(n, 3)
    return [DipoleWave(s[j], c[j], omega) for j in range(n)]


def solve_opt_ac(commands, stack: GeometryStack, weights, swarm=None, starts=8, seed=0,
                 omega=DEFAULT_FREQUENCIES[0], with_dual=True, max_restarts=3):
    """Power-minimising sine/cosine coefficients realising the averaged command.

    ``commands`` is an (n, 6) array of per-satellite wrenches [f inertial; tau body];
    the last satellite's row must agree with momentum balance and is not used as a constraint.
    """
    n = stack.n
    commands = np.asarray(commands, dtype=float).reshape(n, 6)
    if swarm is not None:
        f, tau = momentum_residual(commands, swarm)
        scale = 1 + np.abs(commands).max()
        if np.linalg.norm(f) > 1e-9 * scale or np.linalg.norm(tau) > 1e-9 * scale * (1 + np.abs(swarm.positions).max()):
            raise InfeasibleCommand("commands violate momentum balance; internal forces cannot realise them")
    u = reduced_command(commands, n)
    if not np.any(u):
        waves = _waves_from_x(np.zeros(6 * n), n, omega)
        return AllocationResult(waves, np.zeros((n, 6)), 0.0, 0.0, 0.0, 6 * n, 1)
    prob = QuadraticAllocation(stack, weights, u)
    rng = np.random.default_rng(seed)
    tol = 1e-8 * (1 + np.linalg.norm(u)) / prob.unorm
    best_res, candidates = np.inf, []
    for attempt in range(starts * max_restarts):
        x0 = rng.normal(size=6 * n)
        fit = least_squares(prob.residual, x0, jac=prob.jacobian, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        x = prob.newton_polish(fit.x)
        res = np.linalg.norm(prob.residual(x))
        if res > tol:
            best_res = min(best_res, res)
            continue
        x = _minimise_power(prob, x)
        res = np.linalg.norm(prob.residual(x))
        if res > tol:
            continue
        candidates.append((prob.power(x), x))
        if len(candidates) >= starts:
            break
    if not candidates:
        raise AllocationError(f"no start reached feasibility; best scaled residual {best_res:.3e}",
                              best_res * prob.unorm)
    candidates.sort(key=lambda t: t[0])
    power, xs = candidates[0]
    x = xs * prob.scale
    waves = _waves_from_x(x, n, omega)
    achieved = averaged_wrench(waves, stack)
    residual = np.linalg.norm(prob.residual(xs)) * prob.unorm
    J = prob.jacobian(xs)
    null_dim = 6 * n - numerical_rank(J)
    dual = dual_lower_bound(commands, stack, weights) if with_dual else -np.inf
    return AllocationResult(waves, achieved, power, dual, residual, null_dim, len(candidates),
                            [p for p, _ in candidates])


def _minimise_power(prob: QuadraticAllocation, x):
    cons = {"type": "eq", "fun": prob.residual, "jac": prob.jacobian}
    p0 = max(prob.power(x), 1e-300)
    sol = minimize(lambda z: prob.power(z) / p0, x, jac=lambda z: prob.power_grad(z) / p0, constraints=[cons],
                   method="SLSQP", options={"maxiter": 500, "ftol": 1e-14})
    xn = prob.newton_polish(sol.x)
    if prob.power(xn) <= prob.power(x) * (1 + 1e-9) and np.linalg.norm(prob.residual(xn)) < 1e-12:
        return xn
    return x


def dual_lower_bound(commands, stack: GeometryStack, weights, return_multipliers=False):
    """Lagrange dual of the allocation problem.

    maximise  -lam^T u / (2 kappa)   s.t.  W + sum_i lam_i F_i >= 0,

    which lower-bounds the minimum power for any feasible multiplier.
    """
    n = stack.n
    u = reduced_command(commands, n)
    if not np.any(u):
        return (0.0, np.zeros_like(u)) if return_multipliers else 0.0
    F = constraint_forms(stack)
    W = np.diag(np.repeat(np.asarray(weights, dtype=float), 3))
    # work with unit-scale multipliers
    fs = np.abs(F).max()
    ws = W.diagonal().max()
    block = LmiBlock(W / ws, F / fs)
    try:
        res = solve_lmi(u / np.abs(u).max(), [block])
    except LmiUnbounded as exc:
        raise InfeasibleCommand("dual unbounded: command not realisable by any dipoles") from exc
    except LmiInfeasible as exc:  # cannot happen with W > 0, kept for clarity
        raise AllocationError(str(exc)) from exc
    lam = res.y * ws / fs
    bound = -lam @ u / (2 * KAPPA)
    return (float(bound), lam) if return_multipliers else float(bound)


def evaluate_power(waves, weights):
    w = np.asarray(weights, dtype=float)
    return float(sum(0.5 * wj * (wv.s @ wv.s + wv.c @ wv.c) for wj, wv in zip(w, waves)))


# --------------------------------------------------------------------------
# ripple vs power


def allocation_family(commands, stack, weights, factors=(1.5, 2.0, 3.0), seed=0, omega=DEFAULT_FREQUENCIES[0]):
    """Allocations of the same command at prescribed multiples of the optimal power.

    Walks along the constraint set from the optimum in a tangent direction,
    restoring feasibility with Newton steps, and bisects on the step length.
    """
    n = stack.n
    opt = solve_opt_ac(commands, stack, weights, seed=seed, omega=omega, with_dual=False)
    u = reduced_command(commands, n)
    prob = QuadraticAllocation(stack, weights, u)
    x_opt = np.concatenate([np.concatenate([w.s for w in opt.waves]), np.concatenate([w.c for w in opt.waves])])
    x_opt = x_opt / prob.scale
    rng = np.random.default_rng(seed + 1)
    T = null_space(prob.jacobian(x_opt))
    d = T @ rng.normal(size=T.shape[1])
    d /= np.linalg.norm(d)
    p_opt = prob.power(x_opt)
    family = [(1.0, opt.waves)]
    for f in factors:
        lo, hi = 0.0, 1.0
        while True:
            xh = prob.newton_polish(x_opt + hi * np.linalg.norm(x_opt) * d)
            if prob.power(xh) >= f * p_opt or hi > 1e6:
                break
            lo, hi = hi, 2 * hi
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            xm = prob.newton_polish(x_opt + mid * np.linalg.norm(x_opt) * d)
            if prob.power(xm) < f * p_opt:
                lo = mid
            else:
                hi = mid
        xf = prob.newton_polish(x_opt + hi * np.linalg.norm(x_opt) * d)
        family.append((prob.power(xf) / p_opt, _waves_from_x(xf * prob.scale, n, omega)))
    return family


def ripple_power_monotonicity_report(commands, stack, weights, factors=(1.5, 2.0, 3.0), seed=0, samples=4096):
    """Sup ripple (closed form and sampled) for allocations of one command at increasing power."""
    n = stack.n
    u = reduced_command(commands, n)
    if not np.any(u):
        rows = [dict(power_ratio=1.0, power=0.0, ripple_sup=0.0, ripple_sampled=0.0)]
        return dict(rows=rows, optimal_is_minimal=True)
    rows = []
    for ratio, waves in allocation_family(commands, stack, weights, factors, seed):
        xs, ys = satellite_ripple(waves, stack)
        sup = max(ripple_sup_bound(x, y) for x, y in zip(xs, ys))
        t = np.linspace(0, np.pi, samples, endpoint=False)
        sampled = max(np.linalg.norm(np.cos(t)[:, None] * x + np.sin(t)[:, None] * y, axis=1).max()
                      for x, y in zip(xs, ys))
        rows.append(dict(power_ratio=float(ratio), power=evaluate_power(waves, weights), ripple_sup=sup,
                         ripple_sampled=float(sampled)))
    opt = rows[0]["ripple_sup"]
    return dict(rows=rows, optimal_is_minimal=all(opt <= r["ripple_sup"] * (1 + 1e-9) for r in rows[1:]))


# --------------------------------------------------------------------------
# edge-wise frequency channels


def spanning_tree_edges(n, edges=None):
    """Edges of a spanning tree (BFS from satellite 0) of the given graph (default: complete)."""
    if edges is None:
        edges = [(a, b) for a in range(n) for b in range(a + 1, n)]
    adj = {i: [] for i in range(n)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen, order, tree = {0}, [0], []
    while order:
        a = order.pop(0)
        for b in sorted(adj[a]):
            if b not in seen:
                seen.add(b)
                order.append(b)
                tree.append((a, b))
    if len(seen) != n:
        raise ValueError("interaction graph is not connected")
    return tree


def solve_edgewise(commands, swarm, coils, weights, edges=None, frequencies=DEFAULT_FREQUENCIES, model="exact",
                   blocks=None, seed=0, with_dual=False, starts=8):
    """Allocate a swarm command over a spanning tree with one carrier frequency per edge.

    Leaves are peeled one at a time: the edge to a leaf realises the leaf's
    whole command, and the reaction on its parent is deducted from the parent's
    remaining command.  Returns per-satellite lists of waves and per-edge results.
    """
    from .magnetics import pair_blocks, stack_from_blocks

    n = swarm.n
    tree = spanning_tree_edges(n, edges)
    if len(tree) > len(frequencies):
        raise ValueError("not enough distinct frequencies for the spanning tree")
    freq = {tuple(sorted(e)): frequencies[i] for i, e in enumerate(tree)}
    if blocks is None:
        blocks = pair_blocks(swarm, coils, model, pairs=[tuple(sorted(e)) for e in tree])
    remaining = np.asarray(commands, dtype=float).reshape(n, 6).copy()
    alive = set(range(n))
    tree_left = list(tree)
    channels = [[] for _ in range(n)]
    results = {}
    while len(alive) > 1:
        deg = {i: 0 for i in alive}
        for a, b in tree_left:
            deg[a] += 1
            deg[b] += 1
        leaf = max(i for i in alive if deg[i] == 1)
        edge = next(e for e in tree_left if leaf in e)
        parent = edge[0] if edge[1] == leaf else edge[1]
        sub = {(0, 1): blocks[(leaf, parent)], (1, 0): blocks[(parent, leaf)]}
        stack2 = stack_from_blocks(sub, 2)
        om = freq[tuple(sorted(edge))]
        cmd2 = np.vstack([remaining[leaf], np.zeros(6)])
        res = solve_opt_ac(cmd2, stack2, [weights[leaf], weights[parent]], seed=seed, omega=om, with_dual=with_dual,
                           starts=starts)
        channels[leaf].append(res.waves[0])
        channels[parent].append(res.waves[1])
        remaining[parent] -= res.achieved[1]
        remaining[leaf] = 0.0
        results[tuple(sorted(edge))] = res
        alive.remove(leaf)
        tree_left.remove(edge)
    return channels, results
