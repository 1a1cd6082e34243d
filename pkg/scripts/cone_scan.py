"""Rank and sampled gradient-ratio constant c0 of sigma_k^(1/k) over small (n, K, k)."""

import argparse

from torusflow.cone import OperatorSpec, index_sets, lemma3_empirical_c0, rank_condition_s02


def main(samples, seed):
    print(f"{'n':>2} {'K':>2} {'N':>3} {'k':>2} {'rank':>4} {'rank ok':>7} {'c0':>10}")
    for n in range(2, 5):
        for K in range(1, n):
            ls = index_sets(n, K)
            for k in range(1, min(ls.N, 4) + 1):
                op = OperatorSpec(ls, "sigma_k_root", k=k, cone_order=0 if k == 1 else None)
                ok, _, rank = rank_condition_s02(ls, k)
                est = lemma3_empirical_c0(op, 1.0, samples, seed)
                print(f"{n:>2} {K:>2} {ls.N:>3} {k:>2} {rank:>4} {str(ok):>7} {est.c0:>10.5g}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=12345)
    args = ap.parse_args()
    main(args.samples, args.seed)
