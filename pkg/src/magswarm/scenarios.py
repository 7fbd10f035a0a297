"""Desk-scale closed-loop scenarios: two coils on an air track and a planar three-satellite formation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .allocation import (
    DEFAULT_FREQUENCIES,
    instantaneous_wrench,
    power_weights,
    solve_edgewise,
)
from .attitude import SatelliteState, SwarmState
from .coil_design import track_disturbance
from .magnetics import KM, CoilSpec, pair_blocks, stack_from_blocks
from .surrogate import (
    GeometrySurrogate,
    LipschitzReport,
    covering_radius,
    dataset_lipschitz,
    empirical_lipschitz,
    exact_pair_vector,
    far_pair_vector,
    learned_steady_error_bound,
)

MODELS = ("exact", "far", "surrogate")


@dataclass
class RunRecord:
    """Per-control-step time series (one row each) and a flat summary."""

    columns: list
    rows: np.ndarray
    summary: dict = field(default_factory=dict)

    def column(self, name):
        return self.rows[:, self.columns.index(name)]


# --------------------------------------------------------------------------
# two coils on a line


class CoaxialTable:
    """Spline of the quadrature coaxial force coefficient g(d) (receiver loop frame, axial row)."""

    def __init__(self, radius, d_min, d_max, n=300, tol=1e-9):
        self.radius = radius
        self.d = np.geomspace(d_min, d_max, n)
        g = np.array([exact_pair_vector([0.0, 0.0, -d], [0.0, 0.0, 1.0], radius, tol=tol)[2] for d in self.d])
        self._spline = CubicSpline(np.log(self.d), g)

    def __call__(self, d):
        if np.any(d < self.d[0]) or np.any(d > self.d[-1]):
            raise ValueError(f"separation {d} outside the tabulated range [{self.d[0]:.4g}, {self.d[-1]:.4g}] m")
        return float(self._spline(np.log(d)))


def coaxial_coefficient(model, d, radius, table=None, surrogate: GeometrySurrogate = None):
    """Axial force coefficient g(d) of two coaxial loops: F = KM mu_a mu_f g / A^2 on the far coil."""
    if model == "exact":
        return table(d)
    if model == "far":
        return far_pair_vector([0.0, 0.0, -d], [0.0, 0.0, 1.0], radius)[2]
    if model == "surrogate":
        if surrogate is None:
            raise ValueError("model 'surrogate' needs a trained geometry surrogate")
        return surrogate.pair_vector([0.0, 0.0, -d], [0.0, 0.0, 1.0], radius)[2]
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


@dataclass
class TrackScenario:
    """Anchored coil at x = 0 and a floating coil of mass ``mass`` at x = d on a tilted track.

    The track pushes the floater outward with ``a_d``; the controller is a PD law
    on the separation with optional feed-forward of the known disturbance.
    """

    mass: float = 1.15
    turns: int = 120
    radius: float = 0.075
    resistance: float = 2.0
    d0: float = 0.28
    d_ref: float = 0.24
    a_d: float = field(default_factory=track_disturbance)
    compensate: bool = True
    k_p: float = 0.1035
    k_d: float = 0.1
    mu_max: float = 12.5
    omega: float = DEFAULT_FREQUENCIES[0]
    t_final: float = 300.0
    steps_per_period: int = 32
    steady_fraction: float = 0.2

    def __post_init__(self):
        for key in ("mass", "radius", "d0", "d_ref", "k_p", "k_d", "mu_max", "omega", "t_final"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")
        if min(self.d0, self.d_ref) < 2.2 * self.radius:
            raise ValueError("separations below 2.2 loop radii put the coils in contact range")
        if not 0 < self.steady_fraction < 1:
            raise ValueError("steady_fraction must be in (0, 1)")

    @property
    def area(self):
        return np.pi * self.radius**2

    @property
    def alpha(self):
        return self.k_d / self.mass

    def error_ball(self, disturbance):
        """Steady error radius d / (alpha sqrt(m k_p / k_d)) for a force disturbance bound ``disturbance``."""
        return disturbance / (self.alpha * np.sqrt(self.mass * self.k_p / self.k_d))


TRACK_COLUMNS = [
    "t", "x_anchor", "x_float", "v_float", "sigma_anchor", "sigma_float", "omega_anchor", "omega_float",
    "i_anchor", "i_float", "f_cmd", "f_avg", "ripple_sup", "error", "error_ball", "power",
]


def simulate_track(sc: TrackScenario, model="exact", surrogate: GeometrySurrogate = None, table: CoaxialTable = None):
    """Closed loop with the controller's force model ``model`` and the quadrature plant.

    Dipole amplitudes are updated once per AC period (s_anchor = s, s_float = +-s,
    the power-optimal split for equal coils) and held; the plant integrates the
    instantaneous force KM s_a s_f sin^2(w t) g(d) / A^2 with RK4.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    R, A, m = sc.radius, sc.area, sc.mass
    table = table or CoaxialTable(R, 2.1 * R, 30 * R)
    period = 2 * np.pi / sc.omega
    n_periods = int(np.ceil(sc.t_final / period))
    h = period / sc.steps_per_period
    amps_per_dipole = 1.0 / (sc.turns * A)
    a_hat = sc.a_d if sc.compensate else 0.0

    y = np.array([sc.d0, 0.0])
    rows = []
    mismatch = []
    for k in range(n_periods):
        t0 = k * period
        d, v = y
        e = d - sc.d_ref
        f_cmd = -m * a_hat - sc.k_p * e - sc.k_d * v
        g_model = coaxial_coefficient(model, d, R, table, surrogate)
        prod = 2 * A**2 * f_cmd / (KM * g_model)
        s = min(np.sqrt(abs(prod)), sc.mu_max)
        s_a, s_f = s, np.copysign(s, prod)
        g_true = table(d)
        f_avg = 0.5 * KM * s_a * s_f * g_true / A**2
        mismatch.append(abs(f_avg - f_cmd))

        def rhs(t, z):
            force = KM * s_a * s_f * np.sin(sc.omega * t) ** 2 * table(z[0]) / A**2
            return np.array([z[1], force / m + sc.a_d])

        for i in range(sc.steps_per_period):
            t = t0 + i * h
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + h / 2 * k1)
            k3 = rhs(t + h / 2, y + h / 2 * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        power = 0.5 * sc.resistance * ((s_a * amps_per_dipole) ** 2 + (s_f * amps_per_dipole) ** 2)
        # sin^2 = (1 - cos 2wt) / 2, so the ripple amplitude equals the averaged force
        ripple = abs(f_avg)
        rows.append([t0, 0.0, d, v, 0.0, 0.0, 0.0, 0.0, s_a * amps_per_dipole, s_f * amps_per_dipole,
                     f_cmd, f_avg, ripple, e, np.nan, power])
    rows = np.array(rows)
    steady = rows[:, 0] >= (1 - sc.steady_fraction) * rows[-1, 0]
    ripple_sup = rows[steady, TRACK_COLUMNS.index("ripple_sup")].max()
    resid = np.array(mismatch)[steady].max()
    ball = sc.error_ball(ripple_sup + resid)
    rows[:, TRACK_COLUMNS.index("error_ball")] = ball
    err = np.abs(rows[steady, TRACK_COLUMNS.index("error")])
    summary = dict(
        scenario="track",
        model=model,
        steady_error=float(err.max()),
        steady_mean_error=float(err.mean()),
        final_separation=float(y[0]),
        ripple_sup=float(ripple_sup),
        model_residual=float(resid),
        error_ball=float(ball),
        mean_power=float(rows[steady, -1].mean()),
        saturated_fraction=float(np.mean(np.abs(rows[:, TRACK_COLUMNS.index("i_anchor")]) >= sc.mu_max * amps_per_dipole
                                         * (1 - 1e-12))),
        alpha=sc.alpha,
        measured_alpha=measured_decay_rate(rows[:, 0], rows[:, TRACK_COLUMNS.index("error")], 3 * err.max()),
    )
    summary["violation"] = bool(summary["steady_error"] > ball)
    return RunRecord(list(TRACK_COLUMNS), rows, summary)


def measured_decay_rate(t, e, floor):
    """Exponential rate of the error envelope down to ``floor`` (log-linear fit of running peaks)."""
    a = np.abs(e)
    env = np.maximum.accumulate(a[::-1])[::-1]
    ok = env > 2 * max(floor, 1e-12)
    if ok.sum() < 3:
        return float("nan")
    slope = np.polyfit(t[ok], np.log(env[ok]), 1)[0]
    return float(-slope)


def neighbourhood_samples(centres, radius, n, rng, min_distance=0.0):
    """Uniform points of the 6-D balls around ``centres`` with the normal part re-projected to the sphere."""
    out = []
    while len(out) < n:
        c = centres[rng.integers(len(centres))]
        u = rng.normal(size=6)
        x = c + radius * rng.uniform() ** (1 / 6) * u / np.linalg.norm(u)
        if np.linalg.norm(x[3:]) < 1e-6 or np.linalg.norm(x[:3]) < min_distance:
            continue
        x[3:] /= np.linalg.norm(x[3:])
        out.append(x)
    return np.array(out)


def track_certificate(sc: TrackScenario, run: RunRecord, surrogate: GeometrySurrogate, train_X, train_G,
                      gamma_bound=1.0, rng=None, pairs=100_000, probes=400, oracle_samples=1500, neighbours=64):
    """Learned steady-error bound of a surrogate-in-the-loop track run.

    Lipschitz constants of the true and learned pair-vector maps are sampled on
    the training inputs (loop-radius units) within 2 rho of the visited states.  The covering radius is measured
    from the coaxial configurations visited in the steady window to the training
    set, and the residual is the learned model's error at their nearest training
    points.  Everything is converted to force with the largest steady dipole product.
    """
    from scipy.spatial import cKDTree

    rng = rng or np.random.default_rng(0)
    R, A = sc.radius, sc.area
    steady = run.rows[:, 0] >= (1 - sc.steady_fraction) * run.rows[-1, 0]
    d = run.column("x_float")[steady]
    probe_d = np.linspace(d.min(), d.max(), probes) / R
    probe = np.column_stack([np.zeros(probes), np.zeros(probes), -probe_d, np.zeros(probes), np.zeros(probes),
                             np.ones(probes)])
    rho = covering_radius(train_X, probe)
    _, nearest = cKDTree(train_X).query(probe)
    near = np.unique(nearest)
    pred = surrogate.pair_vector(train_X[near, :3], train_X[near, 3:])
    g_resid = float(np.linalg.norm(pred - train_G[near], axis=1).max())

    def learned(X):
        return surrogate.pair_vector(X[:, :3], X[:, 3:])

    # only segments inside the rho-ball around the visited states enter the bound, so
    # both constants are sampled on fresh quadrature points within 2 rho of them
    local = neighbourhood_samples(probe, 2 * rho, oracle_samples, rng, min_distance=surrogate.annulus[0])
    local_G = np.array([exact_pair_vector(x[:3], x[3:]) for x in local])
    L_true = dataset_lipschitz(local, local_G, k=min(neighbours, len(local) - 1))
    L_learned = empirical_lipschitz(learned, local, rng, pairs)
    npd = 1.0 / (sc.turns * A)
    mu_prod = np.abs(run.column("i_anchor")[steady] * run.column("i_float")[steady]).max() / npd**2
    c_force = KM * mu_prod / A**2
    report = LipschitzReport(
        layer_norms=np.array([np.linalg.norm(W, 2) for W in surrogate.model.weights]),
        product_bound=float("nan"),
        base_bound=float("nan"),
        empirical=L_learned,
        gamma_measured=gamma_bound,
        gamma_bound=gamma_bound,
        n_bf=0,
        rho=rho,
        L_true=c_force * L_true,
        L_learned=c_force * L_learned,
    )
    ripple_sup = run.summary["ripple_sup"]
    bound = learned_steady_error_bound(report, (sc.k_p, sc.k_d), ripple_sup, sc.mass,
                                       train_residual=c_force * g_resid)
    return dict(bound=bound, rho=rho, L_true=L_true, L_learned=L_learned, train_residual=g_resid,
                force_scale=c_force, ripple_sup=ripple_sup, steady_error=run.summary["steady_error"],
                dominated=bool(run.summary["steady_error"] <= bound), report=report)


# --------------------------------------------------------------------------
# planar formation with edge-wise frequencies


def equilateral(side, center=(0.0, 0.0, 0.0)):
    ang = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    return np.asarray(center) + side / np.sqrt(3) * np.column_stack([np.cos(ang), np.sin(ang), np.zeros(3)])


@dataclass
class FormationScenario:
    """Three satellites on an air-bearing plane; attitudes held, the root of the frequency tree takes the reactions."""

    masses: tuple = (1.15, 1.15, 1.15)
    turns: int = 120
    radius: float = 0.075
    resistance: float = 2.0
    side: float = 0.5
    perturbation: float = 0.04
    edges: tuple = ((0, 1), (0, 2), (1, 2))
    k_p: float = 0.01
    k_d: float = 0.04
    frequencies: tuple = tuple(DEFAULT_FREQUENCIES[:2])
    control_dt: float = 1.0
    steps_per_control: int = 128
    t_final: float = 120.0
    starts: int = 2
    seed: int = 0

    def __post_init__(self):
        if len(self.masses) != 3:
            raise ValueError("the formation scenario has three satellites")
        for key in ("side", "k_p", "k_d", "control_dt", "t_final", "radius"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")
        # averaging is exact only over whole periods of every carrier
        cycles = self.control_dt * np.asarray(self.frequencies) / (2 * np.pi)
        if np.any(np.abs(cycles - np.rint(cycles)) > 1e-9):
            raise ValueError("control_dt must be a whole number of common carrier periods")

    def initial_positions(self):
        rng = np.random.default_rng(self.seed)
        p = equilateral(self.side)
        p[:, :2] += rng.uniform(-1, 1, size=(3, 2)) * self.perturbation
        return p


FORMATION_COLUMNS = (
    ["t"] + [f"{a}{j}" for j in range(3) for a in ("x", "y")] + [f"v{a}{j}" for j in range(3) for a in ("x", "y")]
    + [f"d{a}{b}" for a, b in ((0, 1), (0, 2), (1, 2))] + ["f_cmd_norm", "dipole_peak", "power", "error"]
)


def formation_command(pos, vel, target, k_p, k_d):
    """Edge-sum PD forces; they sum to zero, so internal dipoles can realise them."""
    n = len(pos)
    f = np.zeros((n, 3))
    for j in range(n):
        for k in range(n):
            if j != k:
                e = (pos[j] - pos[k]) - (target[j] - target[k])
                f[j] -= k_p * e + k_d * (vel[j] - vel[k])
    return f


def simulate_formation(sc: FormationScenario, model="far"):
    """Closed loop with edge-wise carriers; geometry blocks are refreshed every control step."""
    if model not in ("exact", "far"):
        raise ValueError("the formation scenario supports the 'exact' and 'far' models")
    coils = [CoilSpec(sc.turns, sc.radius, resistance=sc.resistance) for _ in range(3)]
    weights = power_weights(coils)
    masses = np.asarray(sc.masses, float)
    target = equilateral(sc.side)
    pos = sc.initial_positions()
    vel = np.zeros((3, 3))
    h = sc.control_dt / sc.steps_per_control
    n_steps = int(round(sc.t_final / sc.control_dt))
    rows = []
    for k in range(n_steps):
        t0 = k * sc.control_dt
        swarm = SwarmState([SatelliteState(p, v, np.zeros(3), np.zeros(3)) for p, v in zip(pos, vel)])
        f = formation_command(pos, vel, target, sc.k_p, sc.k_d)
        f[:, 2] = 0.0
        commands = np.hstack([f, np.zeros((3, 3))])
        blocks = pair_blocks(swarm, coils, model)
        channels, _ = solve_edgewise(commands, swarm, coils, weights, frequencies=np.asarray(sc.frequencies),
                                     edges=[tuple(e) for e in sc.edges], model=model, blocks=blocks, seed=sc.seed + k, starts=sc.starts)
        stack = stack_from_blocks(blocks, 3, model)

        def accel(t):
            w = instantaneous_wrench(channels, stack, t)[:, :3]
            w[:, 2] = 0.0  # the bearing plane reacts vertical loads
            return w / masses[:, None]

        for i in range(sc.steps_per_control):
            t = t0 + i * h
            a1 = accel(t)
            a2 = accel(t + h / 2)
            a4 = accel(t + h)
            # positions do not enter the frozen-geometry force, so RK4 reduces to Simpson weights
            pos = pos + h * vel + h * h / 6 * (a1 + 2 * a2)
            vel = vel + h / 6 * (a1 + 4 * a2 + a4)
        dist = [np.linalg.norm(pos[a] - pos[b]) for a, b in ((0, 1), (0, 2), (1, 2))]
        peak = max((np.hypot(np.linalg.norm(w.s), np.linalg.norm(w.c)) for ch in channels for w in ch), default=0.0)
        power = sum(0.5 * weights[j] * (w.s @ w.s + w.c @ w.c) for j, ch in enumerate(channels) for w in ch)
        rows.append([t0 + sc.control_dt, *pos[:, :2].ravel(), *vel[:, :2].ravel(), *dist,
                     float(np.linalg.norm(f)), peak, power, max(abs(x - sc.side) for x in dist)])
    rows = np.array(rows)
    err = rows[:, -1]
    init = max(abs(np.linalg.norm(a - b) - sc.side) for a, b in
               ((sc.initial_positions()[i], sc.initial_positions()[j]) for i, j in ((0, 1), (0, 2), (1, 2))))
    summary = dict(
        scenario="formation",
        model=model,
        initial_error=float(init),
        final_error=float(err[-1]),
        final_relative_error=float(err[-1] / sc.side),
        peak_dipole=float(rows[:, -3].max()),
        mean_power=float(rows[:, -2].mean()),
    )
    summary["converged"] = bool(summary["final_relative_error"] < 0.01 and err[-1] < 0.2 * init)
    return RunRecord(list(FORMATION_COLUMNS), rows, summary)
