"""Swarm rigid-body dynamics, ground/orbital closed loops and the normalization between them.

Velocity stack: zeta = [r_dot (3n, inertial); omega (3n, body); h (3m, body wheel momentum)].
Wrench stack:   u    = [f (3n, inertial); tau (3n, body); h_dot (3m, body)].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag, expm

from .attitude import SatelliteState, SwarmState, mrp_kinematics, mrp_to_dcm, shadow, skew


class SimulationError(RuntimeError):
    pass


@dataclass
class LagrangianSystem:
    masses: np.ndarray
    inertias: np.ndarray
    m: int = 0

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        self.inertias = np.asarray(self.inertias, dtype=float).reshape(-1, 3, 3)
        if len(self.masses) != len(self.inertias):
            raise ValueError("one inertia per mass is required")
        if np.any(self.masses <= 0):
            raise ValueError("masses must be positive")
        for J in self.inertias:
            if not np.allclose(J, J.T) or np.linalg.eigvalsh(J).min() <= 0:
                raise ValueError("inertias must be symmetric positive definite")
        if not 0 <= self.m <= self.n:
            raise ValueError("wheel count out of range")
        self._cache = None

    @property
    def n(self):
        return len(self.masses)

    @property
    def dim(self):
        return 6 * self.n + 3 * self.m

    def _matrices(self):
        # constant in the state; built once, handed out as copies
        if getattr(self, "_cache", None) is None:
            n, m = self.n, self.m
            M = block_diag(np.kron(np.diag(self.masses), np.eye(3)), *self.inertias, np.eye(3 * m))
            M_inv = block_diag(np.kron(np.diag(1 / self.masses), np.eye(3)),
                               *[np.linalg.inv(J) for J in self.inertias], np.eye(3 * m))
            B = np.eye(self.dim)
            B[3 * n : 3 * n + 3 * m, 6 * n :] = -np.eye(3 * m)
            self._cache = dict(M=M, M_inv=M_inv, B=B, B_inv=2 * np.eye(self.dim) - B)
        return self._cache

    @property
    def M(self):
        return self._matrices()["M"].copy()

    @property
    def M_inv(self):
        return self._matrices()["M_inv"].copy()

    @property
    def B(self):
        return self._matrices()["B"].copy()

    @property
    def B_inv(self):
        return self._matrices()["B_inv"].copy()

    def split(self, zeta):
        n, m = self.n, self.m
        zeta = np.asarray(zeta, dtype=float)
        return zeta[: 3 * n].reshape(n, 3), zeta[3 * n : 6 * n].reshape(n, 3), zeta[6 * n :].reshape(m, 3)

    def body_momentum(self, zeta):
        _, w, h = self.split(zeta)
        H = np.einsum("jab,jb->ja", self.inertias, w)
        H[: self.m] += h
        return H

    def C(self, zeta):
        """Gyroscopic matrix with C(zeta) zeta = [0; omega x (J omega + h); 0] and C skew."""
        n = self.n
        Cm = np.zeros((self.dim, self.dim))
        for j, H in enumerate(self.body_momentum(zeta)):
            Cm[3 * n + 3 * j : 3 * n + 3 * j + 3, 3 * n + 3 * j : 3 * n + 3 * j + 3] = -skew(H)
        return Cm

    def gyroscopic(self, zeta):
        _, w, _ = self.split(zeta)
        out = np.zeros(self.dim)
        out[3 * self.n : 6 * self.n] = np.cross(w, self.body_momentum(zeta)).ravel()
        return out


def assemble_system(swarm: SwarmState, masses, inertias):
    sys_ = LagrangianSystem(masses, inertias, swarm.m)
    if sys_.n != swarm.n:
        raise ValueError(f"{sys_.n} masses for {swarm.n} satellites")
    return sys_


def total_linear_momentum(swarm: SwarmState, system: LagrangianSystem):
    return sum(mj * s.velocity for mj, s in zip(system.masses, swarm.satellites))


def total_angular_momentum(swarm: SwarmState, system: LagrangianSystem):
    """Sum of orbital, body and wheel angular momentum, inertial frame, about the origin."""
    L = np.zeros(3)
    for j, s in enumerate(swarm.satellites):
        L += system.masses[j] * np.cross(s.position, s.velocity)
        Hb = system.inertias[j] @ s.angular_rate
        if s.wheel_momentum is not None:
            Hb = Hb + s.wheel_momentum
        L += s.dcm.T @ Hb
    return L


# --------------------------------------------------------------------------
# reduced-coordinate integration


@dataclass
class Configuration:
    """Positions and attitudes only; enough to evaluate tangent bases and kinematics."""

    positions: np.ndarray
    attitudes: np.ndarray

    @property
    def dcms(self):
        return np.array([mrp_to_dcm(s) for s in self.attitudes])


def configuration_of(swarm: SwarmState):
    return Configuration(swarm.positions.copy(), swarm.attitudes.copy())


def swarm_from(config: Configuration, zeta, system: LagrangianSystem):
    rd, w, h = system.split(zeta)
    sats = []
    for j in range(system.n):
        sats.append(SatelliteState(config.positions[j], rd[j], config.attitudes[j], w[j], h[j] if j < system.m else None))
    return SwarmState(sats)


def _as_fn(x):
    if callable(x):
        return x
    x = np.asarray(x, dtype=float)
    return lambda t, cfg, zeta: x


def reduced_rates(system, basis_fn, config, v, u_fn, d_fn, t):
    """Time derivatives of (positions, attitudes, v)."""
    S, Sdot_fn = basis_fn(config)
    zeta = S @ v
    u = u_fn(t, config, zeta)
    d = d_fn(t, config, zeta)
    Sdot = Sdot_fn(zeta)
    M = system.M
    Mbar = S.T @ M @ S
    rhs = S.T @ (system.B @ u + d) - S.T @ (M @ Sdot @ v + system.gyroscopic(zeta))
    vdot = np.linalg.solve(Mbar, rhs)
    rd, w, _ = system.split(zeta)
    sdot = np.array([mrp_kinematics(s, wj) for s, wj in zip(config.attitudes, w)])
    return rd, sdot, vdot


def step_reduced(system: LagrangianSystem, basis_fn, config: Configuration, v, wrench, d, dt, t=0.0):
    """One RK4 step of M_bar v_dot + C_bar v = S^T (B u + d) with q_dot from zeta = S v.

    ``basis_fn(config)`` returns (S, Sdot_fn) with Sdot_fn(zeta) the time derivative
    of S along zeta.  ``wrench`` and ``d`` are arrays (held over the step) or
    callables ``f(t, config, zeta)`` evaluated at every stage.
    Returns the new (config, v).
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    u_fn, d_fn = _as_fn(wrench), _as_fn(d)

    def f(cfg, vv, tt):
        return reduced_rates(system, basis_fn, cfg, vv, u_fn, d_fn, tt)

    def moved(k, h):
        return Configuration(config.positions + h * k[0], config.attitudes + h * k[1])

    k1 = f(config, v, t)
    k2 = f(moved(k1, dt / 2), v + dt / 2 * k1[2], t + dt / 2)
    k3 = f(moved(k2, dt / 2), v + dt / 2 * k2[2], t + dt / 2)
    k4 = f(moved(k3, dt), v + dt * k3[2], t + dt)
    comb = [(a + 2 * b + 2 * c + e) / 6 for a, b, c, e in zip(k1, k2, k3, k4)]
    pos = config.positions + dt * comb[0]
    att = np.array([shadow(s) for s in config.attitudes + dt * comb[1]])
    v_new = v + dt * comb[2]
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(att)) and np.all(np.isfinite(v_new))):
        raise SimulationError(f"non-finite state after step at t={t:.6g} (dt={dt:g}, |v|={np.linalg.norm(v):.3g})")
    return Configuration(pos, att), v_new


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    attitudes: np.ndarray
    zetas: np.ndarray
    extras: dict

    def swarm(self, k, system):
        return swarm_from(Configuration(self.positions[k], self.attitudes[k]), self.zetas[k], system)


def simulate(system: LagrangianSystem, basis_fn, swarm: SwarmState, wrench, d, t_final, dt, record=None,
             record_every=1, hold=None):
    """Integrate from ``swarm`` with RK4 steps of ``dt``.

    ``wrench`` is an array, a callable ``f(t, config, zeta)`` evaluated at every
    stage, or, with ``hold`` set, a callable re-evaluated only every ``hold``
    seconds (zero-order hold between updates).  ``record(t, config, zeta)`` may
    return a dict of extra series.  The initial state must lie in range(S).
    """
    cfg = configuration_of(swarm)
    S, _ = basis_fn(cfg)
    zeta0 = swarm.zeta()
    v = np.linalg.lstsq(S, zeta0, rcond=None)[0]
    if np.linalg.norm(S @ v - zeta0) > 1e-9 * max(1.0, np.linalg.norm(zeta0)):
        raise SimulationError("initial velocities violate the momentum constraint")
    steps = int(round(t_final / dt))
    times, P, Q, Z, extras = [], [], [], [], {}
    held, next_update = None, 0.0

    def log(t, cfg, v):
        zeta = basis_fn(cfg)[0] @ v
        times.append(t)
        P.append(cfg.positions.copy())
        Q.append(cfg.attitudes.copy())
        Z.append(zeta)
        if record is not None:
            for key, val in record(t, cfg, zeta).items():
                extras.setdefault(key, []).append(val)

    t = 0.0
    for k in range(steps):
        if k % record_every == 0:
            log(t, cfg, v)
        u = wrench
        if hold is not None:
            if t >= next_update - 1e-12:
                held = np.asarray(wrench(t, cfg, basis_fn(cfg)[0] @ v), dtype=float)
                next_update += hold
            u = held
        cfg, v = step_reduced(system, basis_fn, cfg, v, u, d, dt, t)
        t = (k + 1) * dt
    log(t, cfg, v)
    return Trajectory(np.array(times), np.array(P), np.array(Q), np.array(Z),
                      {k: np.array(val) for k, val in extras.items()})


# --------------------------------------------------------------------------
# ground and orbital closed loops


def incidence_matrix(n, edges):
    """Oriented incidence matrix E (n x edges), +1 at the head and -1 at the tail."""
    E = np.zeros((n, len(edges)))
    for e, (a, b) in enumerate(edges):
        E[a, e] = -1.0
        E[b, e] = 1.0
    return E


def path_edges(n):
    return [(j, j + 1) for j in range(n - 1)]


@dataclass
class GroundSystem:
    E: np.ndarray
    K_p: np.ndarray
    K_d: np.ndarray
    A_gnd: np.ndarray

    @property
    def L_e(self):
        return self.E.T @ self.E


def ground_closed_loop(E, Kp, Kd):
    """A_gnd = [-E^T K_d, -E^T K_p; I, 0] on edge errors [e_v; e_p]."""
    E = np.asarray(E, dtype=float)
    ne = E.shape[1]
    Kp = np.asarray(Kp, dtype=float)
    Kd = np.asarray(Kd, dtype=float)
    Kp = Kp * E if Kp.ndim == 0 else Kp
    Kd = Kd * E if Kd.ndim == 0 else Kd
    A = np.block([[-E.T @ Kd, -E.T @ Kp], [np.eye(ne), np.zeros((ne, ne))]])
    return GroundSystem(E, Kp, Kd, A)


@dataclass
class OrbitalParams:
    k_A: float
    gamma: float
    k1: float
    omega_xy: float = 1.1e-3
    k0: float = 1.8e3
    epsilon2: float | None = None
    c_plus: float = np.sqrt(1 + 1e-4)
    c_minus: float = np.sqrt(1 - 1e-4)

    def __post_init__(self):
        if self.epsilon2 is None:
            self.epsilon2 = (3 + 5e-4) * self.omega_xy


def orbital_closed_loop(params: OrbitalParams, E):
    """A_orb = [A11, 0; (eps2/2)(I + (k1/k_A) A22), A22], A11 = -(k_A/2) L_e, A22 = gamma A11."""
    E = np.asarray(E, dtype=float)
    Le = E.T @ E
    I = np.eye(Le.shape[0])
    A11 = -(params.k_A / 2) * Le
    A22 = params.gamma * A11
    # (k1/k_A) A22 written without dividing by k_A
    coupling = -(params.k1 * params.gamma / 2) * Le
    A21 = (params.epsilon2 / 2) * (I + coupling)
    return np.block([[A11, np.zeros_like(Le)], [A21, A22]])


def time_scale_ratio(dt_orb=10.0, dt_gnd=0.1875):
    return dt_orb / dt_gnd


def disturbance_ratio(theta11_Ed=1e-3, k0=1.8e3, ED_y=1e-8):
    """beta as ||Theta11 E^T d|| / ||k0 E^T D_y|| (with theta11 ||E^T d|| given)."""
    return theta11_Ed / (k0 * ED_y)


@dataclass
class NormalizationMap:
    Theta11: np.ndarray
    Theta12: np.ndarray
    Theta22: np.ndarray
    beta: float
    k_v: float
    k_p: float
    ground: GroundSystem
    A_orb: np.ndarray
    residual: float

    @property
    def Theta(self):
        Z = np.zeros_like(self.Theta11)
        return np.block([[self.Theta11, self.Theta12], [Z, self.Theta22]])

    def to_orbit(self, trace):
        """Map ground edge-error rows [e_v; e_p] (shape (T, 2 ne)) to orbital [e1; e4]."""
        return np.asarray(trace) @ self.Theta.T

    def to_ground(self, trace):
        return np.linalg.solve(self.Theta, np.asarray(trace).T).T


def normalization_gains(params: OrbitalParams, beta):
    k_v = beta * params.k_A * (1 + params.gamma) / 2
    k_p = beta**2 * params.k_A**2 * params.gamma / 4
    return k_v, k_p


def build_normalization(params: OrbitalParams, E, theta11=1.0, beta=None, gains=None, tol=1e-8):
    """Theta with Theta A_gnd = beta A_orb Theta.

    Ground gains default to the pair (k_v, k_p) for which Theta exists; passing
    other ``gains`` checks them and raises if the similarity fails.
    """
    E = np.asarray(E, dtype=float)
    beta = time_scale_ratio() if beta is None else beta
    Le = E.T @ E
    I = np.eye(Le.shape[0])
    k_v, k_p = normalization_gains(params, beta) if gains is None else gains
    ground = ground_closed_loop(E, E @ (k_p * Le), k_v * E)
    T11 = theta11 * I
    T12 = (beta * params.k_A * params.gamma / 2) * Le @ T11
    T22 = (beta * params.epsilon2 / 2) * (I - (params.gamma * params.k1 / 2) * Le) @ T11
    A_orb = orbital_closed_loop(params, E)
    Theta = np.block([[T11, T12], [np.zeros_like(Le), T22]])
    res = np.linalg.norm(Theta @ ground.A_gnd - beta * A_orb @ Theta)
    res /= max(1.0, np.linalg.norm(Theta @ ground.A_gnd))
    if res > tol:
        raise ValueError(f"similarity residual {res:.3e} exceeds {tol:g}")
    return NormalizationMap(T11, T12, T22, beta, k_v, k_p, ground, A_orb, res)


def propagate_linear(A, x0, times):
    return np.array([expm(A * t) @ x0 for t in times])


# --------------------------------------------------------------------------
# analytic J2 relative motion


@dataclass
class RelativeOrbitParams:
    omega_xy: float = 1.1e-3
    omega_z: float | None = None
    c_plus: float = np.sqrt(1 + 1e-4)
    c_minus: float = np.sqrt(1 - 1e-4)
    epsilon2: float | None = None

    def __post_init__(self):
        if self.omega_z is None:
            self.omega_z = self.omega_xy
        if self.epsilon2 is None:
            self.epsilon2 = (3 + 5e-4) * self.omega_xy

    @classmethod
    def clohessy_wiltshire(cls, n_orbit):
        return cls(n_orbit, n_orbit, 1.0, 1.0, 3.0 * n_orbit)


def analytic_relative_orbit(C1, C4, amplitudes, phases, params: RelativeOrbitParams, t):
    """Linearized J2 relative position at time(s) t; amplitudes = (r_xy, r_z, l_z), phases = (th_xy, th_z)."""
    r_xy, r_z, l_z = amplitudes
    th_xy, th_z = phases
    p = params
    t = np.asarray(t, dtype=float)
    ph = p.omega_xy * t + th_xy
    x = 2 * C1 + r_xy * np.sin(ph) / p.c_plus
    y = C4 - p.epsilon2 * C1 * t + 2 * r_xy * np.cos(ph) / p.c_minus
    z = (r_z + l_z * t) * np.sin(p.omega_z * t + th_z)
    return np.stack([x, y, z], axis=-1)


def analytic_relative_velocity(C1, C4, amplitudes, phases, params: RelativeOrbitParams, t):
    r_xy, r_z, l_z = amplitudes
    th_xy, th_z = phases
    p = params
    t = np.asarray(t, dtype=float)
    ph = p.omega_xy * t + th_xy
    xd = r_xy * p.omega_xy * np.cos(ph) / p.c_plus
    yd = -p.epsilon2 * C1 - 2 * r_xy * p.omega_xy * np.sin(ph) / p.c_minus
    zd = l_z * np.sin(p.omega_z * t + th_z) + (r_z + l_z * t) * p.omega_z * np.cos(p.omega_z * t + th_z)
    return np.stack([xd, yd, zd], axis=-1)


def j2_invariants(state_mean, params: RelativeOrbitParams):
    """(C1, C4) from an averaged in-plane relative state (x, y, x_dot, y_dot)."""
    x, y, xd, yd = state_mean
    p = params
    C1 = (p.c_plus / p.c_minus**2) * (2 * x + yd / p.omega_xy)
    C4 = (1 / p.c_minus) * (y - 2 * xd / p.omega_xy)
    return C1, C4
