"""Relative error of the far-field wrench against quadrature for two coaxial coils, over separation."""
import argparse

import numpy as np

from magswarm.attitude import SatelliteState
from magswarm.magnetics import CoilSpec, exact_wrench, far_geometry_matrix, geometry_matrix


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--radius", type=float, default=0.075)
    p.add_argument("--ratios", type=float, nargs="+", default=[2.5, 3, 4, 5, 7, 10, 15, 20, 40])
    args = p.parse_args()
    coil = CoilSpec(120, args.radius, axes=(0,))
    mu = np.array([12.5, 0.0, 0.0])
    print(f"{'d/R':>6} {'exact F [N]':>14} {'far F [N]':>14} {'rel. error':>11} {'5 (R/d)^2':>10}")
    for ratio in args.ratios:
        a = SatelliteState(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
        b = SatelliteState([ratio * args.radius, 0, 0], np.zeros(3), np.zeros(3), np.zeros(3))
        ex = exact_wrench(geometry_matrix(a, b, (coil, coil)), mu, mu)
        far = exact_wrench(far_geometry_matrix(a, b, (coil, coil)), mu, mu)
        err = np.linalg.norm(far - ex) / np.linalg.norm(ex)
        print(f"{ratio:6.1f} {ex[0]:14.6e} {far[0]:14.6e} {err:11.3%} {5 / ratio**2:10.3%}")


if __name__ == "__main__":
    main()
