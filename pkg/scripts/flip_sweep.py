"""Lipschitz degradation of a quantized geometry surrogate under sign-bit flips, against its bound."""
import argparse
from pathlib import Path

import numpy as np

from magswarm.cli import geometry_surrogate
from magswarm.config import load_config
from magswarm.surrogate import bitflip_degradation, residual_quantize


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="certify")
    p.add_argument("--out", default="runs/certify")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--bits", type=int, nargs="+", default=[4, 8])
    p.add_argument("--flips", type=int, nargs="+", default=[1, 4, 16, 64])
    p.add_argument("--trials", type=int, default=100)
    args = p.parse_args()
    sur, _ = geometry_surrogate(load_config(args.config), Path(args.out))
    print(f"{'bits':>4} {'n_bf':>5} {'median gamma':>13} {'max gamma':>10} {'bound':>10}")
    for bits in args.bits:
        q = residual_quantize(sur.model, args.levels, bits, protect=1)
        for n_bf in args.flips:
            g = [bitflip_degradation(q, n_bf, seed=t) for t in range(args.trials)]
            meas = np.array([r.gamma_measured for r in g])
            print(f"{bits:4d} {n_bf:5d} {np.median(meas):13.6f} {meas.max():10.6f} {g[0].gamma_bound:10.6f}")


if __name__ == "__main__":
    main()
