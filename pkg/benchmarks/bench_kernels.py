"""Time the numba and numpy paths of the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 200]
"""

import argparse
import timeit

import numpy as np

from twotier import _accel, kernels
from twotier.manifold import random_point


def cg_case(rng, n_t, m):
    a = rng.standard_normal((n_t, n_t)) + 1j * rng.standard_normal((n_t, n_t))
    q = 0.5 * (a + a.conj().T)
    phi = random_point(n_t, m, rng)
    qp = q @ phi
    f = qp - phi @ (phi.conj().T @ qp)
    g = q - phi @ qp.conj().T - f @ phi.conj().T
    beta = np.linalg.eigvalsh(phi.conj().T @ qp)
    return g, phi, beta, f


def tin_case(rng, n_users, d, n_streams):
    gains = rng.standard_normal((n_users, d, n_streams)) + 1j * rng.standard_normal((n_users, d, n_streams))
    own = np.zeros((n_users, n_streams), dtype=bool)
    per = n_streams // n_users
    for u in range(n_users):
        own[u, u * per:(u + 1) * per] = True
    return gains, own, np.ones(n_users)


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba not importable; only the numpy path can run")
    rng = np.random.default_rng(0)

    print(f"{'kernel':<34}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for n_t, m, steps in [(16, 4, 1), (48, 8, 1), (48, 8, 8), (100, 8, 1)]:
        g, phi, beta, rhs = cg_case(rng, n_t, m)
        t_np = best_of(lambda: kernels.cg_shifted_numpy(g, phi, beta, rhs, steps), args.repeat)
        t_nb = best_of(lambda: kernels.cg_shifted_numba(g, phi, beta, rhs, steps), args.repeat)
        print(f"{f'cg n_t={n_t} m={m} steps={steps}':<34}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>10.2f}")
    for n_users, d in [(6, 1), (18, 2), (36, 1)]:
        gains, own, noise = tin_case(rng, n_users, d, n_users * d)
        t_np = best_of(lambda: kernels.tin_rates_numpy(gains, own, noise), args.repeat)
        t_nb = best_of(lambda: kernels.tin_rates_numba(gains, own, noise), args.repeat)
        print(f"{f'tin users={n_users} d={d}':<34}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>10.2f}")


if __name__ == "__main__":
    main()
