"""Compare analytic gradients with central finite differences for every mode."""

import argparse

import numpy as np

from kbvec import nn


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=10)
    ap.add_argument("--vocab", type=int, default=20)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    for mode in nn.MODES:
        errors = []
        for _ in range(args.instances):
            params, example = nn.random_instance(rng, mode, n=args.vocab, d=args.dim)
            _, trace = nn.nll_loss(example, params)
            analytic = nn.backward(trace, example, params)
            numeric = nn.finite_diff_grad(example, params)
            errors.append(nn.max_relative_error(analytic, numeric))
        print(f"{mode:<8} max={max(errors):.3e} median={np.median(errors):.3e}")


if __name__ == "__main__":
    main()
