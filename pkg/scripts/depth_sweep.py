"""Cost counter, CTD and wall time as the KD depth grows on one synthetic scene."""

import argparse
import time

from ghap.evaluation import DensityErrorSpec, SynthSpec, depth_sweep, synth_mixture


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--components", type=int, default=20000)
    ap.add_argument("--dim", type=int, default=3)
    ap.add_argument("--rho", type=float, default=0.05)
    ap.add_argument("--depths", type=int, nargs="+", default=[0, 1, 2, 3, 4, 5])
    ap.add_argument("--l2", action="store_true", help="also compute the grid density error (slow)")
    args = ap.parse_args()

    mix = synth_mixture(SynthSpec(dim=args.dim, components=args.components, cov_scale=1e-4))
    t0 = time.perf_counter()
    points, timings = depth_sweep(mix, args.rho, args.depths,
                                  error_spec=DensityErrorSpec() if args.l2 else None)
    print(f"{args.components} components, total {time.perf_counter() - t0:.1f} s")
    print(f"{'depth':>5} {'blocks':>6} {'kept':>6} {'costs/iter':>12} {'ctd':>12} {'sec':>7}")
    for p in points:
        print(f"{p.depth:>5} {p.blocks:>6} {p.components:>6} {p.evaluations_per_iteration:>12} "
              f"{p.ctd:>12.5g} {timings[f'depth_{p.depth}']:>7.2f}")


if __name__ == "__main__":
    main()
