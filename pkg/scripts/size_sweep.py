#!/usr/bin/env python3
"""Public-dataset size sweep: improvement grows with the unlabeled pool.

Uses nested public datasets (each size is a row prefix of the next) so the
only variable across rows is how much shared unlabeled data the federation
votes on.
"""

import argparse

from fedcotrain.orchestrator import size_sweep_config, sweep_unlabeled_size


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--mode", choices=("iid", "noniid"), default="noniid")
    parser.add_argument("--sizes", default="100,500,2000,5000")
    args = parser.parse_args()

    config = size_sweep_config(mode=args.mode, master_seed=args.seed)
    sizes = [int(s) for s in args.sizes.split(",")]
    print(f"{'size':>7} {'pseudolabels':>13} {'mean_local':>11} {'mean_ratio':>11}")
    for size, report in sweep_unlabeled_size(config, sizes):
        ratio = report.mean_relative_accuracy
        print(f"{size:>7} {report.total_pseudolabels:>13} "
              f"{report.mean_local_accuracy:>11.4f} "
              f"{ratio if ratio is None else round(ratio, 4):>11}")


if __name__ == "__main__":
    main()
