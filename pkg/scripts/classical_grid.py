"""Threshold sweep of the tight-frame soft-thresholding denoiser on the step-signal benchmark.

    python3 scripts/classical_grid.py --mu 0.3
"""
import argparse

import numpy as np

from convframelet import classical


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--mu", type=float, default=0.3)
    parser.add_argument("--levels", type=int, default=3)
    parser.add_argument("--sigma", type=float, default=0.1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    clean, g = classical.piecewise_constant_signal(256, args.sigma, args.seed)
    op = classical.UndecimatedHaar(256, args.levels)
    lam, mse, table = classical.grid_search(g, clean, op, np.linspace(0.005, 0.1, 20), mu=args.mu)
    print(f"input mse\t{np.mean((g - clean) ** 2):.6f}")
    print("lambda\tmse")
    for lam_i, mse_i in table:
        print(f"{lam_i:.4f}\t{mse_i:.6f}")
    _, trace = classical.frame_denoise(g, op, classical.DenoiseConfig(args.mu, lam))
    print(f"best lambda {lam:g}: mse {mse:.6f}, {trace.iterations} iterations, residual {trace.residual[-1]:.2e}")


if __name__ == "__main__":
    main()
