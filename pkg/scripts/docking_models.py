"""Docking run with the exact, far-field and learned force models in the controller (same quadrature plant)."""
import argparse
from pathlib import Path

from magswarm.cli import geometry_surrogate, track_scenario
from magswarm.config import load_config
from magswarm.scenarios import CoaxialTable, simulate_track, track_certificate


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="docking-2sat")
    p.add_argument("--out", default="runs/docking-models", help="where the surrogate is cached")
    args = p.parse_args()
    cfg = load_config(args.config)
    sc = track_scenario(cfg.track)
    table = CoaxialTable(sc.radius, 2.1 * sc.radius, 30 * sc.radius)
    sur, ds = geometry_surrogate(cfg, Path(args.out))
    print(f"{'model':<10} {'steady error [m]':>17} {'error ball [m]':>15} {'power [W]':>10}")
    runs = {}
    for model in ("exact", "surrogate", "far"):
        runs[model] = run = simulate_track(sc, model, surrogate=sur, table=table)
        s = run.summary
        print(f"{model:<10} {s['steady_error']:17.3e} {s['error_ball']:15.3e} {s['mean_power']:10.2f}")
    train = sur.report["train_idx"]
    cert = track_certificate(sc, runs["surrogate"], sur, ds.X[train], ds.G[train])
    print(f"learned bound {cert['bound']:.3e} m (rho {cert['rho']:.3f}, L_true {cert['L_true']:.3g}, "
          f"L_learned {cert['L_learned']:.3g}, residual {cert['train_residual']:.2e})")


if __name__ == "__main__":
    main()
