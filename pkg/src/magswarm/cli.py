"""Command line: simulate | allocate | design-coil | certify | normalize.

Exit codes: 0 ok, 1 configuration error, 2 infeasible problem, 3 bound violation or failed check.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .allocation import (
    AllocationError,
    power_weights,
    ripple_sup_bound,
    satellite_ripple,
    solve_opt_ac,
)
from .attitude import SatelliteState, SwarmState
from .coil_design import DesignConstraints, InfeasibleDesign, load_wires, optimize_design
from .config import PRESET_DIR, ConfigError, ScenarioConfig, load_config, preset_names, resolve, validate
from .dynamics import (
    OrbitalParams,
    build_normalization,
    disturbance_ratio,
    incidence_matrix,
    propagate_linear,
    time_scale_ratio,
)
from .magnetics import CoilSpec, stack_geometry
from .scenarios import (
    CoaxialTable,
    FormationScenario,
    TrackScenario,
    simulate_formation,
    simulate_track,
    track_certificate,
)
from .surrogate import (
    GeometryDataset,
    TrainConfig,
    bitflip_degradation,
    empirical_lipschitz,
    geometry_dataset,
    lipschitz_bound,
    load_model,
    relative_errors,
    residual_quantize,
    save_model,
    train_geometry_surrogate,
)

CSV_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VIOLATION = 0, 1, 2, 3
# experimental coil table used for the design comparison
REFERENCE_COIL = {"N_t": 120.0, "mu_max": 12.5, "Omega_coil": 2.0}
REFERENCE_BETA = 55.6

log = logging.getLogger("magswarm")


# --------------------------------------------------------------------------
# output helpers


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


def write_summary(path, data):
    with open(path, "w") as fh:
        yaml.safe_dump(_plain(data), fh, sort_keys=True)


def write_csv(path, columns, rows, meta):
    """Numeric CSV; the first line is a versioned schema comment."""
    tags = " ".join(f"{k}={v}" for k, v in meta.items())
    head = f"magswarm-run v{CSV_VERSION} {tags}\n" + ",".join(columns)
    np.savetxt(path, np.asarray(rows, float), fmt="%.17g", delimiter=",", header=head, comments="# ")


def read_csv(path):
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith(f"# magswarm-run v{CSV_VERSION}"):
            raise ConfigError([f"{path}: not a magswarm v{CSV_VERSION} CSV"])
        columns = fh.readline().lstrip("# ").strip().split(",")
    return columns, np.atleast_2d(np.loadtxt(path, delimiter=",", comments="#"))


# --------------------------------------------------------------------------
# builders


def _coil(section, axes=(0, 1, 2)):
    return CoilSpec(section.turns, section.radius_m, resistance=section.resistance_ohm, axes=axes)


def track_scenario(t):
    return TrackScenario(
        mass=t.mass_kg, turns=t.coil.turns, radius=t.coil.radius_m, resistance=t.coil.resistance_ohm,
        d0=t.initial_separation_m, d_ref=t.target_separation_m, a_d=t.disturbance_N_per_kg,
        compensate=t.compensate_disturbance, k_p=t.k_p_N_per_m, k_d=t.k_d_N_s_per_m, mu_max=t.mu_max_A_m2,
        omega=t.omega_rad_s, t_final=t.t_final_s, steps_per_period=t.steps_per_period,
        steady_fraction=t.steady_fraction,
    )


def formation_scenario(f, seed):
    return FormationScenario(
        masses=tuple(f.masses_kg), turns=f.coil.turns, radius=f.coil.radius_m, resistance=f.coil.resistance_ohm,
        side=f.side_m, perturbation=f.perturbation_m, edges=tuple(tuple(e) for e in f.edges),
        k_p=f.k_p_N_per_m, k_d=f.k_d_N_s_per_m, frequencies=tuple(f.frequencies_rad_s), control_dt=f.control_dt_s,
        steps_per_control=f.steps_per_control, t_final=f.t_final_s, starts=f.starts, seed=seed,
    )


def geometry_surrogate(cfg: ScenarioConfig, out: Path):
    """Load the configured surrogate and its training data, training both on first use."""
    s = cfg.surrogate
    path = Path(s.model_path)
    path = path if path.is_absolute() else out / path
    data_path = path.with_name(path.stem + "_data.npz")
    if path.exists() and data_path.exists():
        sur = load_model(path)
        with np.load(data_path) as z:
            ds = GeometryDataset(z["X"], z["G"], tuple(z["annulus"]))
            train, hold = z["train_idx"], z["holdout_idx"]
        log.info("loaded geometry surrogate %s", path)
    else:
        log.info("training geometry surrogate on %d quadrature samples", s.samples)
        ds = geometry_dataset(s.samples, seed=s.seed, annulus=tuple(s.annulus_loop_radii))
        sur = train_geometry_surrogate(ds, TrainConfig(hidden=tuple(s.hidden), epochs=s.epochs, seed=s.seed))
        train, hold = sur.report["train_idx"], sur.report["holdout_idx"]
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(path, sur)
        np.savez(data_path, X=ds.X, G=ds.G, annulus=np.array(ds.annulus), train_idx=train, holdout_idx=hold)
    err = relative_errors(sur.pair_vector(ds.X[hold, :3], ds.X[hold, 3:]), ds.G[hold])
    sur.report = dict(train_idx=train, holdout_idx=hold, holdout_median=float(np.median(err)),
                      holdout_p95=float(np.percentile(err, 95)))
    return sur, ds


# --------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ScenarioConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(scenario=cfg.scenario, model=cfg.model, seed=cfg.seed)
    if cfg.kind == "track":
        sc = track_scenario(cfg.track)
        sur = ds = None
        if cfg.model == "surrogate":
            sur, ds = geometry_surrogate(cfg, out)
        table = CoaxialTable(sc.radius, 2.1 * sc.radius, 30 * sc.radius)
        run = simulate_track(sc, cfg.model, surrogate=sur, table=table)
        summary = dict(run.summary)
        if sur is not None:
            cert = track_certificate(sc, run, sur, ds.X[sur.report["train_idx"]], ds.G[sur.report["train_idx"]],
                                     rng=np.random.default_rng(cfg.seed))
            summary.update(learned_bound=cert["bound"], covering_radius=cert["rho"], L_true=cert["L_true"],
                           L_learned=cert["L_learned"], train_residual=cert["train_residual"],
                           surrogate_holdout_median=sur.report["holdout_median"])
            summary["violation"] = summary["violation"] or not cert["dominated"]
        failed = summary["violation"]
    elif cfg.kind == "formation":
        run = simulate_formation(formation_scenario(cfg.formation, cfg.seed), cfg.model)
        summary = dict(run.summary)
        failed = not summary["converged"]
    else:
        raise ConfigError([f"kind: simulate runs 'track' or 'formation' scenarios, not {cfg.kind!r}"])
    summary.update(meta, status="FAILED" if failed else "ok")
    write_csv(out / "run.csv", run.columns, run.rows, meta)
    write_summary(out / "summary.yaml", summary)
    log.info("%s (%s): %s", cfg.scenario, cfg.model, summary["status"])
    return EXIT_VIOLATION if failed else EXIT_OK


def balanced_commands(partial, swarm: SwarmState):
    """Append the last satellite's wrench so total force and torque vanish."""
    partial = np.asarray(partial, float).reshape(-1, 6)
    f = -partial[:, :3].sum(axis=0)
    tau = np.zeros(3)
    for sat, u in zip(swarm.satellites[:-1], partial):
        tau += sat.dcm.T @ u[3:] + np.cross(sat.position, u[:3])
    last = swarm.satellites[-1]
    tau += np.cross(last.position, f)
    return np.vstack([partial, np.concatenate([f, last.dcm @ -tau])])


def cmd_allocate(cfg: ScenarioConfig, out: Path):
    a = cfg.allocation
    out.mkdir(parents=True, exist_ok=True)
    swarm = SwarmState([SatelliteState(p, np.zeros(3), s, np.zeros(3))
                        for p, s in zip(a.positions_m, a.attitudes_mrp)])
    coils = [_coil(a.coil) for _ in range(swarm.n)]
    weights = power_weights(coils)
    commands = balanced_commands(a.commands_N_Nm, swarm)
    stack = stack_geometry(swarm, coils, cfg.model)
    res = solve_opt_ac(commands, stack, weights, swarm=swarm, starts=a.starts, seed=cfg.seed, omega=a.omega_rad_s)
    xs, ys = satellite_ripple(res.waves, stack)
    ripple = [ripple_sup_bound(x, y) for x, y in zip(xs, ys)]
    ok = res.dual_lower_bound <= res.primal_power + 1e-6 * max(1.0, abs(res.primal_power))
    report = dict(
        scenario=cfg.scenario, model=cfg.model, seed=cfg.seed,
        commands=commands, achieved=res.achieved,
        waves=[dict(s=w.s, c=w.c, omega=w.omega) for w in res.waves],
        primal_power_W=res.primal_power, dual_lower_bound_W=res.dual_lower_bound, duality_gap_W=res.gap,
        residual=res.residual_norm, null_space_dim=res.null_space_dim, ripple_sup=ripple,
        weak_duality=bool(ok), status="ok" if ok else "FAILED",
    )
    write_summary(out / "allocation.yaml", report)
    print(f"primal {res.primal_power:.6g} W  dual {res.dual_lower_bound:.6g} W  residual {res.residual_norm:.3g}")
    for j, r in enumerate(ripple):
        print(f"  satellite {j}: ripple sup {r:.6g}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_design_coil(cfg: ScenarioConfig, out: Path):
    d = cfg.design
    out.mkdir(parents=True, exist_ok=True)
    wires_path = PRESET_DIR / "wires.yaml" if d.wires == "packaged" else resolve(cfg, d.wires)
    wires = load_wires(wires_path)
    try:
        con = DesignConstraints(m_coil_max=d.m_coil_max_kg, a_d=d.disturbance_N_per_kg, H_coil=d.H_coil_m,
                                d0_over_D=d.d0_over_D, thickness_ratio=d.thickness_ratio,
                                voltages=tuple(d.voltages_V), D_range=tuple(d.D_range_m), D_step=d.D_step_m,
                                half_factor=d.half_factor)
    except ValueError as exc:
        raise ConfigError([f"design: {exc}"]) from None
    try:
        best = optimize_design(wires, con)
    except InfeasibleDesign as exc:
        write_summary(out / "design.yaml", dict(scenario=cfg.scenario, feasible=False, margins=exc.margins))
        print(str(exc), file=sys.stderr)
        return EXIT_INFEASIBLE
    fields = ("wire", "D_coil", "V_cir", "Omega_coil", "N_t", "mu_max", "layers", "t_coil", "m_coil")
    result = {k: getattr(best, k) for k in fields}
    comparison = {k: dict(value=getattr(best, k), reference=v, ratio=getattr(best, k) / v,
                          within_20pct=bool(abs(getattr(best, k) / v - 1) <= 0.2)) for k, v in REFERENCE_COIL.items()}
    write_summary(out / "design.yaml", dict(scenario=cfg.scenario, feasible=True, design=result,
                                            objective=best.objective, binding=best.binding, margins=best.margins,
                                            reference_comparison=comparison))
    print(f"{'quantity':<12}{'value':>22}{'reference':>12}  flag")
    for k in fields:
        v = result[k]
        ref = comparison.get(k)
        txt = v if isinstance(v, str) else f"{v:.4g}"
        flag = "" if ref is None else ("ok" if ref["within_20pct"] else "outside 20%")
        print(f"{k:<12}{txt:>22}{'' if ref is None else format(ref['reference'], '.4g'):>12}  {flag}")
    return EXIT_OK


def cmd_certify(cfg: ScenarioConfig, out: Path):
    c = cfg.certify
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    sur, ds = geometry_surrogate(cfg, out)
    train = sur.report["train_idx"]
    X = ds.X[train]
    failures = []

    lip_rows = []
    models = [("trained", sur.model)]
    q = residual_quantize(sur.model, c.quant_levels, c.quant_bits, protect=c.protect)
    models.append(("quantized", q.dequantize()))
    for name, m in models:
        emp = empirical_lipschitz(m, X, rng, c.lipschitz_pairs)
        lip_rows.append([len(lip_rows), 0, emp, lipschitz_bound(m)])
    flip_rows = []
    for n_bf in c.flips:
        for trial in range(c.trials):
            rep = bitflip_degradation(q, n_bf, seed=cfg.seed * 100_003 + trial,
                                      probe=X if trial == 0 else None, pairs=c.lipschitz_pairs if trial == 0 else 0)
            flip_rows.append([n_bf, trial, rep.gamma_measured, rep.gamma_bound])
            if trial == 0:
                lip_rows.append([len(lip_rows), n_bf, rep.empirical, rep.product_bound])
    lip = np.array(lip_rows)
    flips = np.array(flip_rows)
    if np.any(lip[:, 2] > lip[:, 3]):
        failures.append("empirical Lipschitz above the spectral product bound")
    if np.any(flips[:, 2] > flips[:, 3]):
        failures.append("measured flip degradation above its bound")
    bounds = [flip_rows[i][3] for i in range(0, len(flip_rows), c.trials)]
    if np.any(np.diff(bounds) < 0) and list(c.flips) == sorted(c.flips):
        failures.append("flip bound not monotone in n_bf")

    sc = track_scenario(c.track)
    run = simulate_track(sc, "surrogate", surrogate=sur)
    cert = track_certificate(sc, run, sur, X, ds.G[train], rng=rng)
    if not cert["dominated"]:
        failures.append("steady error above the learned bound")

    meta = dict(scenario=cfg.scenario, seed=cfg.seed)
    write_csv(out / "lipschitz.csv", ["model", "n_bf", "empirical", "product_bound"], lip, meta)
    write_csv(out / "flips.csv", ["n_bf", "trial", "gamma_measured", "gamma_bound"], flips, meta)
    write_csv(out / "run.csv", run.columns, run.rows, dict(meta, model="surrogate"))
    summary = dict(
        scenario=cfg.scenario, seed=cfg.seed,
        lipschitz_models=["trained", "quantized"] + [f"flipped n_bf={k}" for k in c.flips],
        holdout_median=sur.report["holdout_median"], holdout_p95=sur.report["holdout_p95"],
        flips={int(k): dict(bound=b, worst_measured=float(flips[flips[:, 0] == k, 2].max()))
               for k, b in zip(c.flips, bounds)},
        learned_bound={k: v for k, v in cert.items() if k != "report"},
        lipschitz_note="L_true and L_learned are sampled estimates, not certificates",
        failures=failures, status="FAILED" if failures else "ok",
    )
    write_summary(out / "summary.yaml", summary)
    print(f"held-out median {summary['holdout_median']:.3%}  p95 {summary['holdout_p95']:.3%}")
    print(f"steady error {cert['steady_error']:.3e} m  learned bound {cert['bound']:.3e} m")
    for f in failures:
        print("FAILED:", f, file=sys.stderr)
    return EXIT_VIOLATION if failures else EXIT_OK


def cmd_normalize(cfg: ScenarioConfig, out: Path):
    z = cfg.normalize
    out.mkdir(parents=True, exist_ok=True)
    params = OrbitalParams(k_A=z.k_A_per_s, gamma=z.gamma, k1=z.k1, omega_xy=z.omega_xy_rad_s)
    E = incidence_matrix(z.n, [tuple(e) for e in z.edges])
    beta = time_scale_ratio(z.dt_orb_s, z.dt_gnd_s)
    try:
        nm = build_normalization(params, E, theta11=z.theta11, beta=beta, tol=1e-10)
    except ValueError as exc:
        print(f"FAILED: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    ne = E.shape[1]
    if z.trace:
        cols, rows = read_csv(resolve(cfg, z.trace))
        want = [f"e_v{i}" for i in range(ne)] + [f"e_p{i}" for i in range(ne)]
        missing = [w for w in want if w not in cols]
        if missing:
            raise ConfigError([f"normalize.trace: columns {', '.join(missing)} missing"])
        t = rows[:, cols.index("t")]
        ground = rows[:, [cols.index(w) for w in want]]
    else:
        # a seeded ground run of the closed loop itself
        x0 = np.random.default_rng(cfg.seed).normal(size=2 * ne) * 0.01
        t = np.linspace(0.0, 60.0, 121)
        ground = propagate_linear(nm.ground.A_gnd, x0, t)
    orbit = nm.to_orbit(ground)
    back = nm.to_ground(orbit)
    round_trip = float(np.abs(back - ground).max() / max(np.abs(ground).max(), 1e-300))
    meta = dict(scenario=cfg.scenario, seed=cfg.seed)
    names = [f"e_v{i}" for i in range(ne)] + [f"e_p{i}" for i in range(ne)]
    write_csv(out / "ground_trace.csv", ["t"] + names, np.column_stack([t, ground]), meta)
    write_csv(out / "orbit_trace.csv", ["t_orbit"] + [f"e1_{i}" for i in range(ne)] + [f"e4_{i}" for i in range(ne)],
              np.column_stack([t * beta, orbit]), meta)
    ok = nm.residual < 1e-10 and round_trip < 1e-12
    write_summary(out / "normalization.yaml", dict(
        scenario=cfg.scenario, beta=beta, beta_reference=REFERENCE_BETA,
        beta_note=(f"dt_orb / dt_gnd = {beta:.4g}; the reference value {REFERENCE_BETA} matches the disturbance "
                   f"ratio {disturbance_ratio():.4g} rather than the time-step ratio"),
        Theta11=nm.Theta11, Theta12=nm.Theta12, Theta22=nm.Theta22, k_v=nm.k_v, k_p=nm.k_p,
        similarity_residual=nm.residual, round_trip_error=round_trip, status="ok" if ok else "FAILED",
    ))
    print(f"beta = {beta:.4g} (reference {REFERENCE_BETA})  residual {nm.residual:.2e}  round trip {round_trip:.1e}")
    return EXIT_OK if ok else EXIT_VIOLATION


COMMANDS = {
    "simulate": (cmd_simulate, ("track", "formation")),
    "allocate": (cmd_allocate, ("allocation",)),
    "design-coil": (cmd_design_coil, ("design",)),
    "certify": (cmd_certify, ("certify",)),
    "normalize": (cmd_normalize, ("normalize",)),
}


def _run_one(command, cfg, out):
    fn, kinds = COMMANDS[command]
    if cfg.kind not in kinds:
        raise ConfigError([f"kind: {command} expects {' or '.join(kinds)}, config has {cfg.kind!r}"])
    try:
        return fn(cfg, out)
    except (AllocationError, InfeasibleDesign) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


def _job(payload):
    command, cfg, out = payload
    try:
        return _run_one(command, cfg, out)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG


def build_parser():
    p = argparse.ArgumentParser(prog="magswarm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", action="append", required=True,
                       help=f"config file or preset name ({', '.join(preset_names())}); repeatable")
        s.add_argument("--out", help="output directory (default: the config's output_dir)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--jobs", type=int, default=1, help="run several configs in parallel processes")
        s.add_argument("--model", choices=("exact", "far", "surrogate"), help="override the config model")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    jobs = []
    try:
        for path in args.config:
            cfg = load_config(path)
            over = {k: v for k, v in (("seed", args.seed), ("model", args.model)) if v is not None}
            if over:
                cfg = validate(dataclasses.replace(cfg, **over))
            if args.out:
                out = Path(args.out) / cfg.scenario if len(args.config) > 1 else Path(args.out)
            else:
                out = Path(cfg.output_dir)
            jobs.append((args.command, cfg, out))
        if args.jobs < 1:
            raise ConfigError(["--jobs: must be at least 1"])
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_job, jobs))
    else:
        codes = [_job(j) for j in jobs]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
