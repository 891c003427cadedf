import argparse
import os
import sys
import time

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.fusion import sinkhorn
from utils.numcore import tensor

SIZES = [(8, 4), (32, 8), (59, 16), (128, 32)]
EPSILONS = [1.0, 0.1, 0.05]


def random_cost(n: int, p: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n, 16))
    references = rng.normal(size=(p, 16))
    return 1.0 - np.tanh(features @ references.T / 4.0)


def time_solver(cost: np.ndarray, epsilon: float, differentiable: bool, repeats: int):
    start = time.perf_counter()
    for _ in range(repeats):
        plan = sinkhorn(tensor(cost, requires_grad=differentiable), epsilon, tol=1e-6, max_iter=500)
    elapsed = (time.perf_counter() - start) / repeats
    return elapsed, plan.iterations, plan.converged


def main():
    parser = argparse.ArgumentParser(description="Times the plain and unrolled Sinkhorn paths.")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"{'n x p':>10} {'eps':>6} {'plain ms':>10} {'unrolled ms':>12} {'sweeps':>7} {'conv':>5}")
    for n, p in SIZES:
        cost = random_cost(n, p, args.seed)
        for epsilon in EPSILONS:
            plain, sweeps, converged = time_solver(cost, epsilon, False, args.repeats)
            unrolled, _, _ = time_solver(cost, epsilon, True, args.repeats)
            print(
                f"{f'{n} x {p}':>10} {epsilon:>6g} {plain * 1000:>10.2f} {unrolled * 1000:>12.2f} "
                f"{sweeps:>7} {'yes' if converged else 'no':>5}"
            )


if __name__ == "__main__":
    main()
