import numpy as np
import pytest
from scipy.linalg import expm, subspace_angles

from magswarm.allocation import KAPPA, power_weights
from magswarm.attitude import SatelliteState, SwarmState, mrp_kinematics
from magswarm.controller import (
    ControllerConfig,
    ControllerError,
    Reference,
    SynthesisInfeasible,
    SynthesisOptions,
    TrackingController,
    basis_provider,
    certified_rate,
    check_contraction,
    closed_form_basis,
    composite_variable,
    contraction_margin,
    control_wrench,
    decouple_input_map,
    decoupling_constraint,
    error_ball,
    error_kinematics,
    gain_structure,
    mass_proportional_gain,
    momentum_matrix,
    momentum_matrix_rate,
    noda_mmh_synthesis,
    pose_error,
    realizability_residual,
    remark_gain,
    steady_error_bound,
    tangent_space,
)
from magswarm.dynamics import Configuration, LagrangianSystem, assemble_system, configuration_of, simulate
from magswarm.magnetics import CoilSpec, body_dipole_wrench, dipole_products, stack_geometry

J = np.diag([1.0, 1.2, 1.4])
COIL = CoilSpec(120, 0.075)


def swarm2(rates=False, seed=0):
    rng = np.random.default_rng(seed)
    sats = [
        SatelliteState([0, 0, 0], [0, 0, 0], [0.05, 0, 0.1], [0, 0, 0], [0, 0, 0]),
        SatelliteState([0.6, 0.05, 0.0], [0, 0, 0], [0, 0.03, -0.2], [0, 0, 0], [0, 0, 0]),
    ]
    sw = SwarmState(sats)
    if rates:
        for s in sw.satellites:
            s.velocity = rng.normal(scale=0.05, size=3)
            s.angular_rate = rng.normal(scale=0.05, size=3)
            s.wheel_momentum = rng.normal(scale=0.05, size=3)
    return sw


@pytest.fixture(scope="module")
def sys2():
    return assemble_system(swarm2(), [8.0, 10.0], [J, J])


@pytest.fixture(scope="module")
def synthesized(sys2):
    return noda_mmh_synthesis(sys2, swarm2(), options=SynthesisOptions(u_bar_max=2.0, e_max=1.0))


def random_admissible(system, cfg, rng, linear=False):
    S = tangent_space(momentum_matrix(cfg, system, linear), "momentum").S
    return S @ rng.normal(size=S.shape[1])


# ---- momentum matrix and tangent spaces


def test_single_satellite_momentum_matrix():
    s = LagrangianSystem([3.0], [J], m=1)
    A = momentum_matrix((np.zeros(3), np.zeros(3)), s).A
    assert A.shape == (3, 9)
    assert np.array_equal(A, np.hstack([np.zeros((3, 3)), J, np.eye(3)]))


def test_momentum_matrix_shape_and_value(sys2):
    sw = swarm2(rates=True)
    A = momentum_matrix(sw, sys2).A
    assert A.shape == (3, 6 * 2 + 3 * 2)
    # A zeta equals the directly summed angular momentum
    L = sum(m * np.cross(s.position, s.velocity) + s.dcm.T @ (J @ s.angular_rate + s.wheel_momentum)
            for m, s in zip(sys2.masses, sw.satellites))
    assert np.allclose(A @ sw.zeta(), L)
    Al = momentum_matrix(sw, sys2, linear=True).A
    assert np.allclose(Al[3:] @ sw.zeta(), sum(m * s.velocity for m, s in zip(sys2.masses, sw.satellites)))


def test_momentum_rate_matches_finite_difference(sys2):
    rng = np.random.default_rng(1)
    cfg = configuration_of(swarm2())
    zeta = rng.normal(size=sys2.dim)
    rd, w, _ = sys2.split(zeta)
    sd = np.array([mrp_kinematics(s, wj) for s, wj in zip(cfg.attitudes, w)])
    h = 1e-6
    Ap = momentum_matrix(Configuration(cfg.positions + h * rd, cfg.attitudes + h * sd), sys2, True).A
    Am = momentum_matrix(Configuration(cfg.positions - h * rd, cfg.attitudes - h * sd), sys2, True).A
    assert np.allclose((Ap - Am) / (2 * h), momentum_matrix_rate(cfg, sys2, zeta, True), atol=1e-8)


def test_momentum_constant_along_free_motion(sys2):
    sw = swarm2()
    mus = [np.array([15.0, 3.0, 0.0]), np.array([2.0, 12.0, 5.0])]

    def u(t, cfg, zeta):
        return np.r_[body_dipole_wrench(cfg.positions, cfg.dcms, mus), np.zeros(6)]

    tr = simulate(sys2, closed_form_basis(sys2), sw, u, np.zeros(sys2.dim), 10.0, 0.05)
    vals = [momentum_matrix(Configuration(p, a), sys2, linear=True).A @ z
            for p, a, z in zip(tr.positions, tr.attitudes, tr.zetas)]
    assert np.abs(vals).max() < 1e-12
    assert np.abs(tr.zetas[-1]).max() > 1e-4


@pytest.mark.parametrize("linear", [False, True])
def test_momentum_space_basis(sys2, linear):
    c = momentum_matrix(swarm2(), sys2, linear)
    S = tangent_space(c, "momentum").S
    assert S.shape == (sys2.dim, sys2.dim - c.A.shape[0])
    assert np.abs(c.A @ S).max() < 1e-12
    assert np.allclose(S.T @ S, np.eye(S.shape[1]), atol=1e-12)


@pytest.mark.parametrize("m", [0, 1, 2])
@pytest.mark.parametrize("linear", [False, True])
def test_closed_form_basis_and_rate(m, linear):
    s = LagrangianSystem([8.0, 10.0], [J, 1.3 * J], m=m)
    cfg = configuration_of(swarm2())
    S, rate = closed_form_basis(s, linear)(cfg)
    c = momentum_matrix(cfg, s, linear)
    assert np.abs(c.A @ S).max() < 1e-12
    assert np.allclose(S, tangent_space(c, "S0", s).S)
    assert np.linalg.matrix_rank(S) == S.shape[1] == s.dim - c.A.shape[0]
    # analytic S_dot against a central difference along the motion
    rng = np.random.default_rng(m)
    zeta = rng.normal(size=s.dim)
    rd, w, _ = s.split(zeta)
    sd = np.array([mrp_kinematics(a, wj) for a, wj in zip(cfg.attitudes, w)])
    h = 1e-6
    Sp = closed_form_basis(s, linear)(Configuration(cfg.positions + h * rd, cfg.attitudes + h * sd))[0]
    Sm = closed_form_basis(s, linear)(Configuration(cfg.positions - h * rd, cfg.attitudes - h * sd))[0]
    assert np.allclose((Sp - Sm) / (2 * h), rate(zeta), atol=1e-7)


def test_s0_realizability_product(sys2, synthesized):
    cfg = configuration_of(swarm2())
    c = momentum_matrix(cfg, sys2, linear=True)
    S0 = tangent_space(c, "S0", sys2).S
    assert np.abs(c.A @ sys2.M_inv @ sys2.B @ synthesized.K @ S0).max() < 1e-12


def test_decoupled_with_far_model_matches_momentum_space(sys2):
    sw = swarm2()
    Q = stack_geometry(sw, [COIL, COIL], "far").full
    c = momentum_matrix(sw, sys2)
    S_dec = tangent_space(c, "decoupled", sys2, (Q, Q)).S
    S_mom = tangent_space(c, "momentum").S
    assert S_dec.shape == S_mom.shape
    assert np.abs(subspace_angles(S_dec, S_mom)).max() < 1e-8


def test_decoupled_invariant_with_exact_model(sys2):
    sw = swarm2()
    G = stack_geometry(sw, [COIL, COIL], "exact").full
    Q = stack_geometry(sw, [COIL, COIL], "far").full
    c = momentum_matrix(sw, sys2)
    S = tangent_space(c, "decoupled", sys2, (G, Q)).S
    assert np.abs(c.A @ S).max() < 1e-12
    extra = decoupling_constraint(sys2, G, Q)
    assert np.abs(extra @ S).max() < 1e-10 * max(1.0, np.abs(extra).max())
    assert S.shape[1] < sys2.dim - 3


def test_decoupled_empty_intersection_reports_dimensions():
    s = LagrangianSystem([1.0, 1.0], [J, J], m=0)
    rng = np.random.default_rng(0)
    G = rng.normal(size=(12, 9))
    with pytest.raises(ControllerError, match="empty tangent space"):
        tangent_space(momentum_matrix(swarm_nowheels(), s), "decoupled", s, (G, np.zeros((12, 9))))


def swarm_nowheels():
    return SwarmState([SatelliteState(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3)),
                       SatelliteState([0.5, 0, 0], np.zeros(3), np.zeros(3), np.zeros(3))])


def test_unknown_variant(sys2):
    with pytest.raises(ValueError):
        tangent_space(momentum_matrix(swarm2(), sys2), "nope")


# ---- composite variable


def composite_setup(sys2, e_pos=(0.02, -0.01, 0.0), sigma=(0.05, 0, 0.1)):
    ref = Reference(np.array([[0, 0, 0], [0.6, 0.05, 0.0]]) + np.array([[0, 0, 0], e_pos]),
                    np.array([sigma, [0, 0.03, -0.2]]))
    cfg = configuration_of(swarm2())
    S = basis_provider(sys2)(cfg)
    e_q, e_s = pose_error(cfg, ref, 0.0, relative=True)
    P = error_kinematics(e_s, sys2, relative=True)
    return cfg, ref, S, e_q, P


def test_composite_at_reference_measures_velocity(sys2):
    cfg, ref, S, _, _ = composite_setup(sys2, e_pos=(0, 0, 0), sigma=(0.05, 0, 0.1))
    e_q, e_s = pose_error(cfg, ref, 0.0, relative=True)
    assert np.abs(e_q).max() < 1e-15
    P = error_kinematics(e_s, sys2, relative=True)
    zeta = random_admissible(sys2, cfg, np.random.default_rng(3), linear=True)
    zd = np.zeros(sys2.dim)
    e_v, _ = composite_variable(zeta, zd, e_q, np.eye(9), S, P)
    assert np.allclose(P @ S @ e_v, P @ (zeta - zd), atol=1e-13)


def test_composite_scaling_in_lambda(sys2):
    cfg, ref, S, e_q, P = composite_setup(sys2)
    zeta = np.zeros(sys2.dim)
    zd = np.zeros(sys2.dim)
    _, v0 = composite_variable(zeta, zd, np.zeros_like(e_q), np.eye(9), S, P)
    _, v1 = composite_variable(zeta, zd, e_q, 0.7 * np.eye(9), S, P)
    _, v2 = composite_variable(zeta, zd, e_q, 1.4 * np.eye(9), S, P)
    assert np.allclose(v2 - v0, 2 * (v1 - v0), atol=1e-14)


def test_composite_error_decays_exponentially_when_held(sys2):
    # follow zeta = S v_r exactly: e_q' = -Lambda e_q in closed form
    cfg, ref, _, e0, _ = composite_setup(sys2, e_pos=(0.05, -0.03, 0.02), sigma=(0.2, -0.1, 0.3))
    Lam = np.diag(np.linspace(0.3, 0.9, 9))
    provider = basis_provider(sys2)

    def qdot(c):
        S = provider(c)
        e_q, e_s = pose_error(c, ref, 0.0, relative=True)
        P = error_kinematics(e_s, sys2, relative=True)
        _, v_r = composite_variable(np.zeros(sys2.dim), np.zeros(sys2.dim), e_q, Lam, S, P)
        z = S @ v_r
        rd, w, _ = sys2.split(z)
        return rd, np.array([mrp_kinematics(a, wj) for a, wj in zip(c.attitudes, w)])

    dt, T = 0.01, 2.0
    c = cfg
    for _ in range(int(T / dt)):
        k1 = qdot(c)
        c2 = Configuration(c.positions + dt / 2 * k1[0], c.attitudes + dt / 2 * k1[1])
        k2 = qdot(c2)
        c3 = Configuration(c.positions + dt / 2 * k2[0], c.attitudes + dt / 2 * k2[1])
        k3 = qdot(c3)
        c4 = Configuration(c.positions + dt * k3[0], c.attitudes + dt * k3[1])
        k4 = qdot(c4)
        c = Configuration(c.positions + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
                          c.attitudes + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))
    e_T, _ = pose_error(c, ref, 0.0, relative=True)
    assert np.allclose(e_T, expm(-Lam * T) @ e0, atol=1e-9)


def test_composite_rank_deficiency():
    s = LagrangianSystem([1.0, 1.0], [J, J], m=0)
    cfg = configuration_of(swarm_nowheels())
    S = tangent_space(momentum_matrix(cfg, s, True), "S0", s).S
    P = error_kinematics(np.zeros((2, 3)), s, relative=True)
    with pytest.raises(ControllerError, match="rank"):
        composite_variable(np.zeros(12), np.zeros(12), np.zeros(9), np.eye(9), S, P)


# ---- control law


def test_equilibrium_gives_zero_wrench(sys2, synthesized):
    sw = swarm2()
    ref = Reference(sw.positions, sw.attitudes)
    cfg = ControllerConfig(np.eye(9), synthesized.K, synthesized.alpha)
    u_far, wheel = control_wrench(configuration_of(sw), sw.zeta(), 0.0, sys2, cfg, ref)
    assert np.abs(u_far).max() < 1e-14 and np.abs(wheel).max() < 1e-14


def test_outputs_are_realizable(sys2, synthesized):
    rng = np.random.default_rng(5)
    ref = Reference(np.array([[0.01, 0, 0], [0.55, 0.0, 0.02]]), np.array([[0, 0, 0.1], [0.1, 0, 0]]))
    ctrl = TrackingController(sys2, ControllerConfig(0.5 * np.eye(9), synthesized.K, synthesized.alpha), ref)
    for _ in range(10):
        cfg = configuration_of(swarm2())
        cfg.attitudes = cfg.attitudes + rng.normal(scale=0.1, size=(2, 3))
        zeta = random_admissible(sys2, cfg, rng, linear=True) * 0.05
        u, info = ctrl(cfg, zeta, 0.0)
        scale = max(1.0, np.abs(info["u_raw"]).max())
        assert np.abs(realizability_residual(u, sys2, cfg, linear=True)).max() < 1e-12 * scale
        # the raw law is not realizable in general
    assert np.abs(realizability_residual(info["u_raw"], sys2, cfg)).max() > 1e-8


def internal_pair(system, amplitude, omega=0.0, phase=0.0):
    """Equal and opposite force pair along the baseline (conserves both momenta)."""

    def d(t, cfg, zeta):
        b = cfg.positions[1] - cfg.positions[0]
        f = amplitude * np.cos(omega * t + phase) * b / np.linalg.norm(b)
        out = np.zeros(system.dim)
        out[0:3], out[3:6] = -f, f
        return out

    return d


def regulate(system, config, d, d_hat=None, t_final=30.0, dt=0.05, offset=(0.08, -0.04, 0.03)):
    sw = swarm2()
    ref = Reference(sw.positions, np.zeros((2, 3)))
    start = swarm2()
    start.satellites[1].position = start.satellites[1].position + np.array(offset)
    ctrl = TrackingController(system, config, ref, d_hat=d_hat)
    basis = closed_form_basis(system)
    rec = lambda t, c, z: {"e_q": ctrl(c, z, t)[1]["e_q"], "e_v": ctrl(c, z, t)[1]["e_v_norm"]}
    return simulate(system, basis, start, lambda t, c, z: ctrl(c, z, t)[0], d, t_final, dt, rec, record_every=10)


def test_known_constant_disturbance_is_rejected(sys2, synthesized):
    cfg = ControllerConfig(0.5 * np.eye(9), synthesized.K, synthesized.alpha)
    d = internal_pair(sys2, 0.02)
    d_hat = lambda t: d(t, configuration_of(swarm2()), None)
    blind = regulate(sys2, cfg, d)
    known = regulate(sys2, cfg, d, d_hat=lambda t: d_hat(t))
    e_blind = np.linalg.norm(blind.extras["e_q"][-1])
    e_known = np.linalg.norm(known.extras["e_q"][-1])
    assert e_blind > 1e-3
    assert e_known < 0.05 * e_blind


def test_convergence_rate_and_error_ball(sys2, synthesized):
    Lam = np.eye(9)
    cfg = ControllerConfig(Lam, synthesized.K, synthesized.alpha)
    amp = 2e-3
    tr = regulate(sys2, cfg, internal_pair(sys2, amp, omega=2.0), t_final=60.0)
    ev = tr.extras["e_v"]
    t = tr.times
    # rate on the transient (before the disturbance floor)
    k = np.searchsorted(t, 10.0)
    rate = -np.log(ev[k] / ev[0]) / t[k]
    assert rate >= 0.5 * synthesized.alpha
    # steady state inside the ball
    d_sup = amp * np.sqrt(2)
    P_sup = np.sqrt(2)  # ||relative selector|| for n = 2, attitude blocks are below 1/2
    radius = error_ball(synthesized.alpha, sys2.M, Lam, P_sup, d_sup)
    steady = np.linalg.norm(tr.extras["e_q"][t > 40.0], axis=1).max()
    assert steady <= radius
    assert steady <= steady_error_bound(synthesized.alpha, sys2.M, Lam, P_sup, d_sup)


# ---- input map, ball, contraction


def test_decouple_identity_for_far_model(sys2):
    Q = stack_geometry(swarm2(), [COIL, COIL], "far").full
    B_ef = decouple_input_map(sys2.B, Q, Q, sys2.m)
    assert np.allclose(B_ef, sys2.B, atol=1e-12)


def test_decouple_matches_exact_wrench_on_decoupled_space(sys2):
    sw = swarm2()
    G = stack_geometry(sw, [COIL, COIL], "exact").full
    Q = stack_geometry(sw, [COIL, COIL], "far").full
    B_ef = decouple_input_map(sys2.B, G, Q, sys2.m)
    assert np.array_equal(B_ef[:, 12:], sys2.B[:, 12:])
    S = tangent_space(momentum_matrix(sw, sys2), "decoupled", sys2, (G, Q)).S
    rng = np.random.default_rng(2)
    for _ in range(5):
        x = dipole_products(rng.normal(size=6), rng.normal(size=6)) * 100
        hdot = rng.normal(size=6)
        lhs = S.T @ sys2.B @ np.r_[G @ x, hdot]
        rhs = S.T @ B_ef @ np.r_[Q @ x, hdot]
        assert np.allclose(lhs, rhs, rtol=1e-8, atol=1e-10 * np.abs(lhs).max())


def test_error_ball_formula():
    M = np.diag([4.0, 9.0])
    assert error_ball(0.5, M, np.eye(2), 1.0, 0.0) == 0.0
    r1 = error_ball(0.5, M, 4 * np.eye(2), 2.0, 3.0)
    assert r1 == pytest.approx(2.0 * 3.0 / (np.sqrt(4 * 4) * 0.5))
    assert error_ball(1.0, M, 4 * np.eye(2), 2.0, 3.0) == pytest.approx(r1 / 2)
    with pytest.raises(ValueError):
        error_ball(0.0, M, np.eye(2), 1.0, 1.0)


def test_mass_proportional_gain_rate(sys2):
    S = basis_provider(sys2)(configuration_of(swarm2()))
    K = mass_proportional_gain(sys2, 0.3)
    assert certified_rate(K, S, sys2.M, sys2.B) == pytest.approx(0.3, rel=1e-12)
    assert check_contraction(K, 0.3 * (1 - 1e-12), S, sys2.M, sys2.B) <= 1e-10


def test_contraction_check_rejects_overclaimed_rate(sys2):
    S = basis_provider(sys2)(configuration_of(swarm2()))
    K = mass_proportional_gain(sys2, 0.3)
    with pytest.raises(ControllerError):
        check_contraction(K, 0.31, S, sys2.M, sys2.B)


def test_remark_gain_far_valid():
    rng = np.random.default_rng(0)
    K0 = rng.normal(size=(18, 18))
    assert np.allclose(remark_gain(K0, np.eye(12)), K0)
    H = np.eye(12) + 0.1 * rng.normal(size=(12, 12))
    K = remark_gain(K0, H)
    Hb = np.eye(18)
    Hb[:12, :12] = H
    assert np.allclose(K, K0 + (Hb - np.eye(18)) @ K)


def test_lambda_must_be_positive_definite():
    with pytest.raises(ValueError):
        ControllerConfig(-np.eye(3), np.eye(3), 0.1)


# ---- synthesis


def test_synthesized_gain_certificate(sys2, synthesized):
    S = basis_provider(sys2)(configuration_of(swarm2()))
    assert contraction_margin(synthesized.K, synthesized.alpha, S, sys2.M, sys2.B) <= 1e-10
    assert synthesized.alpha > 0
    assert synthesized.alpha == pytest.approx(synthesized.report["alpha_lmi"], rel=1e-6)
    mask = gain_structure(sys2)
    assert np.all(synthesized.K[~mask] == 0)


def test_synthesis_matches_conic_oracle(sys2, synthesized):
    # max alpha is linear in (K, alpha) once S^T M S is fixed; solved directly by a conic solver
    cp = pytest.importorskip("cvxpy")
    cfg = configuration_of(swarm2())
    c = momentum_matrix(cfg, sys2, linear=True)
    S = tangent_space(c, "S0", sys2).S
    mask = gain_structure(sys2)
    M, B = sys2.M, sys2.B
    K = cp.Variable((sys2.dim, sys2.dim))
    alpha = cp.Variable()
    X = S.T @ B @ K @ S
    cons = [cp.multiply(K, (~mask).astype(float)) == 0,
            c.A @ sys2.M_inv @ B @ K @ S == 0,
            0.5 * (X + X.T) - alpha * (S.T @ M @ S) >> 0,
            cp.sigma_max(K @ S) <= 2.0]
    prob = cp.Problem(cp.Maximize(alpha), cons)
    prob.solve(solver=cp.CLARABEL)
    assert prob.status == "optimal"
    assert synthesized.alpha == pytest.approx(alpha.value, rel=1e-4)


@pytest.fixture(scope="module")
def power_setup(sys2):
    sw = swarm2()
    stack = stack_geometry(sw, [COIL, COIL], "exact")
    return sw, stack, power_weights([COIL, COIL])


def nominal_command(system, sw, f=1e-4):
    # equal and opposite pull along the baseline, torque-free about the centres
    b = sw.positions[1] - sw.positions[0]
    b = b / np.linalg.norm(b)
    u = np.zeros(system.dim)
    u[0:3], u[3:6] = f * b, -f * b
    return u


def test_power_cap_sweep_monotone(sys2, power_setup):
    sw, stack, w = power_setup
    u_r = nominal_command(sys2, sw)
    opt = SynthesisOptions(u_bar_max=1e-3)
    S = basis_provider(sys2)(configuration_of(sw))
    free = noda_mmh_synthesis(sys2, sw, options=opt)
    probe = noda_mmh_synthesis(sys2, sw, u_r, 1e9, stack, w, options=opt)
    p_star = probe.report["nominal_power"]
    # above this cap the feedback allowance no longer binds
    w_free = p_star + opt.u_bar_max * np.linalg.norm(probe.report["lam"]) / (2 * KAPPA)
    assert probe.alpha == pytest.approx(free.alpha, rel=1e-4)
    alphas = []
    for frac in (2.0, 0.8, 0.5, 0.2, 0.05):
        w_bar = p_star + frac * (w_free - p_star)
        cfg = noda_mmh_synthesis(sys2, sw, u_r, w_bar, stack, w, options=opt)
        assert contraction_margin(cfg.K, cfg.alpha, S, sys2.M, sys2.B) <= 1e-10
        assert cfg.report["power_bound"] <= w_bar * (1 + 1e-6)
        alphas.append(cfg.alpha)
    assert alphas[0] == pytest.approx(free.alpha, rel=1e-4)
    assert all(b <= a * (1 + 1e-6) for a, b in zip(alphas, alphas[1:]))
    # the cap scales u_bar, and with it the achievable rate
    assert alphas[-1] == pytest.approx(0.05 * free.alpha, rel=1e-3)


def test_power_cap_below_nominal_is_infeasible(sys2, power_setup):
    sw, stack, w = power_setup
    u_r = nominal_command(sys2, sw)
    p_star = noda_mmh_synthesis(sys2, sw, u_r, 1e9, stack, w).report["nominal_power"]
    with pytest.raises(SynthesisInfeasible) as info:
        noda_mmh_synthesis(sys2, sw, u_r, 0.9 * p_star, stack, w)
    assert info.value.binding == "power cap"


def test_infeasible_structure_is_reported(sys2, power_setup):
    sw, stack, w = power_setup
    mask = gain_structure(sys2)
    mask[6:12] = False  # no torque feedback at all
    opt = SynthesisOptions(structure=mask)
    with pytest.raises(SynthesisInfeasible) as info:
        noda_mmh_synthesis(sys2, sw, None, 1.0, stack, w, options=opt)
    assert info.value.binding == "structure/realizability"


def test_power_cap_must_be_positive(sys2):
    with pytest.raises(ValueError):
        noda_mmh_synthesis(sys2, swarm2(), w_bar=0.0)
