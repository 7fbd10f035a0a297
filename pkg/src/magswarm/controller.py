"""Momentum-constrained tangent spaces, composite-variable tracking law and convex gain synthesis."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag, eigh, null_space

from .allocation import KAPPA, dual_lower_bound
from .attitude import SwarmState, attitude_error, mrp_matrix, mrp_to_dcm, skew, stack_kinematics
from .dynamics import Configuration, LagrangianSystem, configuration_of
from .magnetics import GeometryStack, pinv
from .sdp import LmiBlock, LmiInfeasible, LmiUnbounded, solve_lmi


class ControllerError(RuntimeError):
    pass


class SynthesisInfeasible(ControllerError):
    def __init__(self, message, binding=None):
        super().__init__(message)
        self.binding = binding


def _config(state):
    if isinstance(state, SwarmState):
        return configuration_of(state)
    if isinstance(state, Configuration):
        return state
    pos, att = state
    return Configuration(np.atleast_2d(pos), np.atleast_2d(att))


@dataclass
class MomentumConstraint:
    A: np.ndarray
    linear: bool = False


def momentum_matrix(state, system: LagrangianSystem, linear=False):
    """Rows of A with A zeta = total angular momentum (plus linear momentum rows if asked)."""
    cfg = _config(state)
    n, m = system.n, system.m
    A = np.zeros((6 if linear else 3, system.dim))
    for j in range(n):
        C_nb = mrp_to_dcm(cfg.attitudes[j]).T
        A[:3, 3 * j : 3 * j + 3] = system.masses[j] * skew(cfg.positions[j])
        A[:3, 3 * n + 3 * j : 3 * n + 3 * j + 3] = C_nb @ system.inertias[j]
        if j < m:
            A[:3, 6 * n + 3 * j : 6 * n + 3 * j + 3] = C_nb
        if linear:
            A[3:, 3 * j : 3 * j + 3] = system.masses[j] * np.eye(3)
    return MomentumConstraint(A, linear)


def momentum_matrix_rate(state, system: LagrangianSystem, zeta, linear=False):
    """Time derivative of A along zeta: d[r]x = [r_dot]x and d C^{N/B} = C^{N/B}[omega]x."""
    cfg = _config(state)
    n, m = system.n, system.m
    rd, w, _ = system.split(zeta)
    Ad = np.zeros((6 if linear else 3, system.dim))
    for j in range(n):
        Cw = mrp_to_dcm(cfg.attitudes[j]).T @ skew(w[j])
        Ad[:3, 3 * j : 3 * j + 3] = system.masses[j] * skew(rd[j])
        Ad[:3, 3 * n + 3 * j : 3 * n + 3 * j + 3] = Cw @ system.inertias[j]
        if j < m:
            Ad[:3, 6 * n + 3 * j : 6 * n + 3 * j + 3] = Cw
    return Ad


def eliminated_columns(system: LagrangianSystem, linear=False):
    """Velocity entries solved for in the closed-form basis: last wheel (or last body rate), plus r_dot_n."""
    n, m = system.n, system.m
    if m > 0:
        cols = list(range(6 * n + 3 * (m - 1), 6 * n + 3 * m))
    else:
        cols = list(range(6 * n - 3, 6 * n))
    if linear:
        cols = list(range(3 * n - 3, 3 * n)) + cols
    return np.array(cols)


@dataclass
class TangentSpace:
    S: np.ndarray
    variant: str


def _closed_form(A, elim):
    dim = A.shape[1]
    free = np.setdiff1d(np.arange(dim), elim)
    S = np.zeros((dim, len(free)))
    S[free, np.arange(len(free))] = 1.0
    S[elim] = -np.linalg.solve(A[:, elim], A[:, free])
    return S, free


def _orthonormal(S):
    # polar factor keeps the basis a smooth function of the state
    U, _, Vt = np.linalg.svd(S, full_matrices=False)
    return U @ Vt


def mag_input_block(system: LagrangianSystem):
    return system.B[:, : 6 * system.n]


def decoupling_constraint(system, G_full, Q_full):
    Pi = pinv(Q_full) @ Q_full
    return (np.eye(Pi.shape[0]) - Pi) @ G_full.T @ mag_input_block(system).T


def tangent_space(constraint: MomentumConstraint, variant="momentum", system=None, stacks=None, tol=1e-10):
    """Basis of the admissible velocity space.

    ``momentum``: orthonormal null space of A.  ``decoupled``: additionally annihilated by
    (I - Pi_Q) G^T B^T, with ``stacks = (G_full, Q_full)``.  ``S0``: closed form
    [I; -A_e^{-1} A_f] solving the momentum rows for the last wheel (needs ``system``).
    """
    A = constraint.A
    if variant == "S0":
        if system is None:
            raise ValueError("S0 variant needs the system to locate the eliminated columns")
        S, _ = _closed_form(A, eliminated_columns(system, constraint.linear))
        return TangentSpace(S, "S0")
    if variant == "momentum":
        return TangentSpace(_orthonormal(null_space(A)), "momentum")
    if variant == "decoupled":
        if system is None or stacks is None:
            raise ValueError("decoupled variant needs the system and (G_full, Q_full)")
        extra = decoupling_constraint(system, *stacks)
        scale = max(1.0, np.abs(extra).max())
        N = null_space(np.vstack([A, extra / scale]), rcond=tol)
        if N.shape[1] == 0:
            raise ControllerError(
                f"empty tangent space: {A.shape[0]} momentum rows and rank "
                f"{np.linalg.matrix_rank(extra / scale, tol)} geometry rows leave nothing of {A.shape[1]} dims"
            )
        return TangentSpace(N, "decoupled")
    raise ValueError(f"unknown variant {variant!r}")


def closed_form_basis(system: LagrangianSystem, linear=False):
    """Basis provider for simulation: config -> (S0, S0_dot(zeta)), the derivative being analytic."""
    elim = eliminated_columns(system, linear)

    def provider(cfg):
        A = momentum_matrix(cfg, system, linear).A
        S, free = _closed_form(A, elim)
        Ae_inv = np.linalg.inv(A[:, elim])

        def rate(zeta):
            Sd = np.zeros_like(S)
            Sd[elim] = -Ae_inv @ momentum_matrix_rate(cfg, system, zeta, linear) @ S
            return Sd

        return S, rate

    return provider


def basis_provider(system: LagrangianSystem, variant="S0", stacks_fn=None, linear=True):
    """config -> S for the controller (no derivative needed)."""
    if variant == "S0":
        p = closed_form_basis(system, linear)
        return lambda cfg: p(cfg)[0]

    def provider(cfg):
        c = momentum_matrix(cfg, system, linear)
        stacks = stacks_fn(cfg) if variant == "decoupled" else None
        return tangent_space(c, variant, system, stacks).S

    return provider


# --------------------------------------------------------------------------
# reference and tracking law


@dataclass
class Reference:
    """Desired positions r_d(t) (callable or (n,3) array), constant attitudes, zero desired rates."""

    positions: object
    attitudes: np.ndarray
    velocities: object = None

    def r(self, t):
        return np.asarray(self.positions(t) if callable(self.positions) else self.positions, dtype=float)

    def rdot(self, t, h=1e-4):
        if self.velocities is not None:
            v = self.velocities(t) if callable(self.velocities) else self.velocities
            return np.asarray(v, dtype=float)
        if not callable(self.positions):
            return np.zeros_like(self.r(t))
        return (self.r(t + h) - self.r(t - h)) / (2 * h)


def relative_selector(n):
    """Rows r_j - r_n for j < n."""
    return np.hstack([np.eye(n - 1), -np.ones((n - 1, 1))])


def pose_error(cfg: Configuration, ref: Reference, t, relative=False):
    """Stacked [position error; attitude error MRPs] and the attitude errors alone.

    With ``relative`` the position part is taken relative to the last satellite,
    which is what internal forces can steer.
    """
    e_r = cfg.positions - ref.r(t)
    if relative:
        e_r = relative_selector(len(e_r)) @ e_r
    e_s = np.array([attitude_error(s, sd) for s, sd in zip(cfg.attitudes, ref.attitudes)])
    return np.concatenate([e_r.ravel(), e_s.ravel()]), e_s


def error_kinematics(e_s, system: LagrangianSystem, relative=False):
    """P with e_q_dot = P (zeta - zeta_d) for constant desired attitudes."""
    P = stack_kinematics(e_s, system.m).P
    if not relative:
        return P
    n = system.n
    T = block_diag(np.kron(relative_selector(n), np.eye(3)), np.eye(3 * n))
    return T @ P


def reference_velocity(system: LagrangianSystem, ref: Reference, t):
    zd = np.zeros(system.dim)
    zd[: 3 * system.n] = ref.rdot(t).ravel()
    return zd


def composite_variable(zeta, zeta_d, e_q, Lambda, S, P, tol=1e-10):
    """(e_v, v_r) with v_r = (P S)^+ (P zeta_d - Lambda e_q) and e_v = v - v_r."""
    PS = P @ S
    sv = np.linalg.svd(PS, compute_uv=False)
    rank = int(np.sum(sv > tol * sv[0])) if sv.size else 0
    if rank < PS.shape[0]:
        raise ControllerError(f"P S is rank deficient ({rank} < {PS.shape[0]} error rows)")
    v_r = np.linalg.pinv(PS) @ (P @ zeta_d - np.atleast_2d(Lambda) @ e_q)
    v = np.linalg.lstsq(S, zeta, rcond=None)[0]
    return v - v_r, v_r


def decouple_input_map(B, G_full, Q_full, m_wheels=0):
    """B_ef = B blockdiag(H, I_3m) with H = G Q^+ completed by the identity off range(Q).

    On 6n-row stacks G Q^+ has rank at most 6(n-1); the completion leaves
    B_ef = B when G = Q and keeps it invertible.
    """
    Qp = pinv(Q_full)
    H = G_full @ Qp + np.eye(Q_full.shape[0]) - Q_full @ Qp
    return B @ block_diag(H, np.eye(3 * m_wheels))


def sym(X):
    return 0.5 * (X + X.T)


def realizability_residual(u, system, cfg, B_ef=None, linear=True):
    """A M^-1 B_ef u (angular rows, plus linear rows when asked)."""
    B_ef = system.B if B_ef is None else B_ef
    A = momentum_matrix(cfg, system, linear).A
    return A @ system.M_inv @ B_ef @ u


def realizable_projection(u, system, S, B_ef):
    """u_c = B_ef^-1 M S Mbar^-1 S^T B_ef u: keeps S^T B_ef u, drops the constraint-force part."""
    M = system.M
    Mbar = S.T @ M @ S
    return np.linalg.solve(B_ef, M @ S @ np.linalg.solve(Mbar, S.T @ B_ef @ u))


@dataclass
class ControllerConfig:
    Lambda: np.ndarray
    K: np.ndarray
    alpha: float
    u_bar: float = np.inf
    w_bar: float = np.inf
    epsilon: float = 0.0
    variant: str = "S0"
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Lambda = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        if not np.allclose(self.Lambda, self.Lambda.T) or np.linalg.eigvalsh(self.Lambda).min() <= 0:
            raise ValueError("Lambda must be symmetric positive definite")


def contraction_margin(K, alpha, S, M, B_ef):
    """lambda_max(alpha S^T M S - S^T sym(B_ef K) S); the contraction condition holds when this is <= 0."""
    X = alpha * S.T @ M @ S - S.T @ sym(B_ef @ K) @ S
    return float(np.linalg.eigvalsh(sym(X)).max())


def check_contraction(K, alpha, S, M, B_ef, tol=1e-10):
    margin = contraction_margin(K, alpha, S, M, B_ef)
    if margin > tol:
        raise ControllerError(f"contraction condition violated by {margin:.3e} (alpha={alpha:g})")
    return margin


def certified_rate(K, S, M, B_ef):
    """Largest alpha with S^T sym(B_ef K) S >= alpha S^T M S."""
    return float(eigh(sym(S.T @ sym(B_ef @ K) @ S), sym(S.T @ M @ S), eigvals_only=True)[0])


def error_ball(alpha, M, Lambda, P_sup, d_sup):
    """sup||P|| d_sup / (sqrt(lambda_min(M) lambda_min(Lambda)) alpha)."""
    if not alpha > 0:
        raise ValueError("contraction rate must be positive")
    lm = np.linalg.eigvalsh(np.atleast_2d(M)).min()
    ll = np.linalg.eigvalsh(np.atleast_2d(Lambda)).min()
    return float(P_sup * d_sup / (np.sqrt(lm * ll) * alpha))


def steady_error_bound(alpha, M, Lambda, P_sup, d_sup):
    """Bound obtained by chaining the e_v contraction through e_q_dot = -Lambda e_q + P S e_v."""
    if not alpha > 0:
        raise ValueError("contraction rate must be positive")
    lm = np.linalg.eigvalsh(np.atleast_2d(M)).min()
    ll = np.linalg.eigvalsh(np.atleast_2d(Lambda)).min()
    return float(P_sup * d_sup / (lm * ll * alpha))


class TrackingController:
    """Composite-variable law u = u_r - K S e_v, projected onto realizable wrenches.

    ``basis(cfg)`` gives S.  With ``linear`` (default) S also conserves linear
    momentum and position errors are relative, so the law only asks for
    internal wrenches.
    """

    def __init__(self, system: LagrangianSystem, config: ControllerConfig, reference: Reference, basis=None,
                 B_ef_fn=None, d_hat=None, h=1e-4, linear=True):
        self.system = system
        self.config = config
        self.ref = reference
        self.linear = linear
        self.basis = basis or basis_provider(system, config.variant, linear=linear)
        self.B_ef_fn = B_ef_fn or (lambda cfg: system.B)
        self.d_hat = d_hat
        self.h = h

    def _zeta_r(self, cfg, t):
        S = self.basis(cfg)
        e_q, e_s = pose_error(cfg, self.ref, t, self.linear)
        P = error_kinematics(e_s, self.system, self.linear)
        zd = reference_velocity(self.system, self.ref, t)
        PS = P @ S
        v_r = np.linalg.pinv(PS) @ (P @ zd - self.config.Lambda @ e_q)
        return S @ v_r

    def reference_rate(self, cfg, zeta, t):
        """Central difference of zeta_r along the motion (q_dot from zeta)."""
        n = self.system.n
        rd, w, _ = self.system.split(zeta)
        sd = np.array([mrp_matrix(s) @ wj for s, wj in zip(cfg.attitudes, w)])
        h = self.h
        plus = Configuration(cfg.positions + h * rd, cfg.attitudes + h * sd)
        minus = Configuration(cfg.positions - h * rd, cfg.attitudes - h * sd)
        assert rd.shape == (n, 3)
        return (self._zeta_r(plus, t + h) - self._zeta_r(minus, t - h)) / (2 * h)

    def __call__(self, cfg, zeta, t):
        """Returns (u_c, info) with u_c = [f; tau; h_dot] for the B_ef input channel."""
        sys_ = self.system
        S = self.basis(cfg)
        e_q, e_s = pose_error(cfg, self.ref, t, self.linear)
        P = error_kinematics(e_s, sys_, self.linear)
        zd = reference_velocity(sys_, self.ref, t)
        e_v, v_r = composite_variable(zeta, zd, e_q, self.config.Lambda, S, P)
        zeta_r = S @ v_r
        zr_dot = self.reference_rate(cfg, zeta, t)
        B_ef = self.B_ef_fn(cfg)
        rhs = sys_.M @ zr_dot + sys_.C(zeta) @ zeta_r
        if self.d_hat is not None:
            rhs = rhs - self.d_hat(t)
        try:
            u_r = np.linalg.solve(B_ef, rhs)
        except np.linalg.LinAlgError as exc:
            raise ControllerError("B_ef is singular") from exc
        u = u_r - self.config.K @ S @ e_v
        u_c = realizable_projection(u, sys_, S, B_ef)
        Mbar = S.T @ sys_.M @ S
        info = dict(e_q=e_q, e_v=e_v, P=P, e_v_norm=float(np.sqrt(e_v @ Mbar @ e_v)), u_raw=u, S=S)
        return u_c, info


def control_wrench(cfg, zeta, t, system, config, reference, B_ef=None, d_hat=None):
    """One evaluation of the tracking law; returns (u_far (6n), wheel_torque (3m))."""
    ctrl = TrackingController(system, config, reference, B_ef_fn=None if B_ef is None else (lambda c: B_ef),
                              d_hat=None if d_hat is None else (lambda tt: d_hat))
    u_c, _ = ctrl(_config(cfg), zeta, t)
    n6 = 6 * system.n
    return u_c[:n6], u_c[n6:]


def remark_gain(K0, H):
    """K solving K = K0 + (blockdiag(H, I) - I) K; equals K0 when H = I."""
    dim = K0.shape[0]
    Hb = np.eye(dim)
    Hb[: H.shape[0], : H.shape[1]] = H
    return np.linalg.solve(2 * np.eye(dim) - Hb, K0)


# --------------------------------------------------------------------------
# gain synthesis


def gain_structure(system: LagrangianSystem, coupled=False):
    """0/1 mask of free gain entries: rows [f; tau; h_dot], columns [r_dot; omega; h]."""
    dim, n, m = system.dim, system.n, system.m
    if coupled:
        return np.ones((dim, dim), dtype=bool)

    def idx(j):
        out = list(range(3 * j, 3 * j + 3)) + list(range(3 * n + 3 * j, 3 * n + 3 * j + 3))
        if j < m:
            out += list(range(6 * n + 3 * j, 6 * n + 3 * j + 3))
        return out

    mask = np.zeros((dim, dim), dtype=bool)
    for j in range(n):
        ij = idx(j)
        mask[np.ix_(ij, ij)] = True
    return mask


@dataclass
class SynthesisOptions:
    u_bar_max: float = 1.0
    e_max: float = 1.0
    coupled: bool = False
    linear: bool = True
    structure: np.ndarray | None = None


def command_rows(u, n):
    """(n, 6) per-satellite [f, tau] from the stacked [f (3n); tau (3n); ...] vector."""
    u = np.asarray(u, dtype=float)
    return np.hstack([u[: 3 * n].reshape(n, 3), u[3 * n : 6 * n].reshape(n, 3)])


def synthesize_gain(system: LagrangianSystem, S0, B_ef, A_rows, w_bar=np.inf, u_r=None, stack: GeometryStack = None,
                    weights=None, Lambda=None, options: SynthesisOptions = None):
    """Convex gain synthesis maximising the contraction rate under realizability, norm and power limits.

    Variables y = [K entries, k_scale alpha_inv, eps_t, u_t] with u_bar = u_t u_bar_max.
    The power limit uses the dual multiplier lam* of the nominal command u_r
    (zero duality gap premise): lam_hat = eps lam*, ||lam_hat|| <= u_bar and
    [eps (2 kappa w_bar + lam*^T u_r), u_bar; u_bar, 1] >= 0.  The dual PSD
    condition eps W + sum lam_hat_i F_i >= 0 then holds by construction.
    """
    opt = options or SynthesisOptions()
    if not w_bar > 0:
        raise ValueError("power cap must be positive")
    M, M_inv = system.M, system.M_inv
    dim = system.dim
    q = S0.shape[1]
    mask = gain_structure(system, opt.coupled) if opt.structure is None else np.asarray(opt.structure, dtype=bool)
    ij = np.argwhere(mask)
    nk = len(ij)

    lam, p_star, c_f = None, 0.0, None
    if stack is not None and np.isfinite(w_bar) and u_r is not None and np.any(u_r[: 6 * system.n]):
        p_star, lam = dual_lower_bound(command_rows(u_r, system.n), stack, weights, return_multipliers=True)
        if np.linalg.norm(lam) > 0:
            # u_t <= eps_t and eps_t c_f >= u_t^2 give u_bar <= 2 kappa (w_bar - P*) / ||lam*||
            c_f = 2 * KAPPA * (w_bar - p_star) / (opt.u_bar_max * np.linalg.norm(lam))
    power = c_f is not None
    if power and c_f <= 0:
        raise SynthesisInfeasible(
            f"gain synthesis infeasible (power cap binding): nominal command needs {p_star:.4g} W > w_bar={w_bar:.4g} W",
            "power cap")

    p = nk + 3
    ia, ie, iu = nk, nk + 1, nk + 2
    E_unit = np.zeros((nk, dim, dim))
    E_unit[np.arange(nk), ij[:, 0], ij[:, 1]] = 1.0
    # gains scaled so that entries are O(1)
    k_scale = opt.u_bar_max / opt.e_max
    KS = np.einsum("iab,bc->iac", E_unit, S0) * k_scale

    def scalar(coeffs, const=0.0):
        Fs = np.zeros((p, 1, 1))
        for i, v in coeffs.items():
            Fs[i] = v
        return LmiBlock(np.full((1, 1), const), Fs)

    blocks = []
    # contraction: [S^T sym(B_ef K) S, S^T; S, alpha_inv M^-1] >= 0, congruence-scaled
    # by diag(I / sqrt(k_scale), sqrt(k_scale) I) with variable a = k_scale alpha_inv
    kb = q + dim
    Fs = np.zeros((p, kb, kb))
    BKS = np.einsum("ab,ibc->iac", B_ef, KS)
    Fs[:nk, :q, :q] = sym_batch(np.einsum("ba,ibc->iac", S0, BKS)) / k_scale
    Fs[ia, q:, q:] = M_inv
    F0 = np.zeros((kb, kb))
    F0[:q, q:] = S0.T
    F0[q:, :q] = S0
    blocks.append(LmiBlock(F0, Fs))
    # gain cap: || e_max K S / u_bar_max || <= u_t
    kb = dim + q
    Fs = np.zeros((p, kb, kb))
    Fs[:nk, :dim, dim:] = KS * opt.e_max / opt.u_bar_max
    Fs[:nk, dim:, :dim] = np.transpose(Fs[:nk, :dim, dim:], (0, 2, 1))
    Fs[iu] = np.eye(kb)
    blocks.append(LmiBlock(np.zeros((kb, kb)), Fs))
    blocks.append(scalar({ia: 1.0}))
    blocks.append(scalar({iu: -1.0}, 1.0))
    if power:
        blocks.append(scalar({iu: 1.0, ie: -1.0}))
        Fs = np.zeros((p, 2, 2))
        Fs[ie, 0, 0] = c_f
        Fs[iu, 0, 1] = Fs[iu, 1, 0] = 1.0
        blocks.append(LmiBlock(np.diag([0.0, 1.0]), Fs))
    else:
        blocks.append(scalar({ie: 1.0}, 1.0))  # eps_t unused; keep it bounded
        blocks.append(scalar({ie: -1.0}, 1.0))

    # realizability: A M^-1 B K S0 = 0
    Aeq = np.einsum("ab,ibc->iac", A_rows @ M_inv @ system.B, KS).reshape(nk, -1).T
    Aeq = Aeq[np.abs(Aeq).max(axis=1) > 0]
    Aeq = np.hstack([Aeq, np.zeros((Aeq.shape[0], p - nk))])
    beq = np.zeros(Aeq.shape[0])

    c = np.zeros(p)
    c[ia] = 1.0
    try:
        y0 = _warm_start(system, S0, B_ef, mask, k_scale, opt, p, nk, ia, ie, iu, c_f)
        res = solve_lmi(c, blocks, Aeq if Aeq.size else None, beq if Aeq.size else None, y_start=y0, tol=1e-9)
    except LmiInfeasible as exc:
        raise SynthesisInfeasible(f"gain synthesis infeasible (structure/realizability binding): {exc}",
                                  "structure/realizability") from exc
    except LmiUnbounded as exc:
        raise SynthesisInfeasible(f"gain synthesis unbounded: {exc}", "norm caps") from exc

    y = res.y
    K = np.zeros((dim, dim))
    K[ij[:, 0], ij[:, 1]] = y[:nk] * k_scale
    alpha = certified_rate(K, S0, M, B_ef)
    # shave the last ulps so the certificate is never violated by roundoff
    alpha = alpha * (1 - 1e-9)
    u_bar = float(y[iu] * opt.u_bar_max)
    report = dict(
        alpha_lmi=k_scale / y[ia] if y[ia] > 0 else np.inf,
        u_bar=u_bar,
        realizability=float(np.abs(A_rows @ M_inv @ system.B @ K @ S0).max()),
        gap=res.gap,
        nominal_power=p_star,
        power_block="dual PSD condition eps W + sum lam_hat F >= 0 with lam_hat = eps lam*(u_r)" if power else None,
    )
    eps = 0.0
    if power:
        eps = float(y[ie] * opt.u_bar_max / np.linalg.norm(lam))
        report["lam"] = lam
        report["power_bound"] = float(p_star + u_bar * np.linalg.norm(lam) / (2 * KAPPA))
    return ControllerConfig(
        Lambda=np.eye(6 * system.n - (3 if opt.linear else 0)) if Lambda is None else Lambda,
        K=K,
        alpha=alpha,
        u_bar=u_bar,
        w_bar=w_bar,
        epsilon=eps,
        variant="S0",
        report=report,
    )


def _warm_start(system, S0, B_ef, mask, k_scale, opt, p, nk, ia, ie, iu, c_f):
    """Strictly feasible point from K = k B^-1 M (exact for B_ef = B)."""
    u_t = 0.5 if c_f is None else min(0.5, 0.5 * c_f)
    K1 = mass_proportional_gain(system, 1.0) * mask
    norm = np.linalg.norm(K1 @ S0, 2)
    if norm == 0:
        return None
    k = 0.5 * u_t * opt.u_bar_max / (opt.e_max * norm)
    rate = certified_rate(k * K1, S0, system.M, B_ef)
    if not rate > 0:
        return None
    y = np.zeros(p)
    y[:nk] = (k * K1)[mask] / k_scale
    y[ia] = 2.0 * k_scale / rate
    y[ie] = 0.75 * u_t if c_f is not None else 0.0
    y[iu] = u_t
    return y


def sym_batch(X):
    return 0.5 * (X + np.transpose(X, (0, 2, 1)))


def noda_mmh_synthesis(system: LagrangianSystem, state, u_r=None, w_bar=np.inf, stack=None, weights=None,
                       B_ef=None, Lambda=None, options: SynthesisOptions = None):
    """Synthesis at the configuration ``state`` with the closed-form tangent basis."""
    opt = options or SynthesisOptions()
    cfg = _config(state)
    constraint = momentum_matrix(cfg, system, linear=opt.linear)
    S0 = tangent_space(constraint, "S0", system).S
    A_rows = constraint.A
    B_ef = system.B if B_ef is None else B_ef
    return synthesize_gain(system, S0, B_ef, A_rows, w_bar, u_r, stack, weights, Lambda, opt)


def mass_proportional_gain(system: LagrangianSystem, k):
    """K = k B^-1 M: realizable and contracting at rate k for every basis."""
    return k * system.B_inv @ system.M
