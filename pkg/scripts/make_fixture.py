"""Write a synthetic splat scene with random appearance payloads, for CLI experiments."""

import argparse

import numpy as np

from ghap.evaluation import SynthSpec, synth_mixture
from ghap.gsplat_io import logit, save_ply
from ghap.mixture import Appearance


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("output")
    ap.add_argument("--count", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cov-scale", type=float, default=1e-5)
    args = ap.parse_args()

    mix = synth_mixture(SynthSpec(dim=3, components=args.count, cov_scale=args.cov_scale,
                                  seed=args.seed))
    rng = np.random.default_rng(args.seed + 1)
    opacity = rng.uniform(0.05, 0.99, args.count)
    app = Appearance(logit(opacity), rng.normal(size=(args.count, 3)),
                     0.1 * rng.normal(size=(args.count, 45)), np.zeros((args.count, 3)))
    save_ply(mix.replace(weights=opacity, appearance=app), args.output)
    print(f"wrote {args.count} splats to {args.output}")


if __name__ == "__main__":
    main()
