#!/usr/bin/env python3
"""Comparative benchmark: regional personalized federation vs plain
averaging vs local-only training, across seeds and label-skew levels.

Reproduces the headline comparison with the shipped defaults:

    python3 scripts/run_benchmark.py
    python3 scripts/run_benchmark.py --rho 1.0 --seeds 0 1 2
"""

import argparse
import json
import sys
import time

import numpy as np

from regionfed.federation import (FederationConfig, run_fedavg_baseline,
                                  run_fedrav, run_local_baseline)
from regionfed.hypernet import HyperLearnConfig
from regionfed.model import TrainConfig
from regionfed.partition import PartitionConfig, partition
from regionfed.synth import SynthConfig, generate


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rho", type=float, default=0.2,
                   help="fraction of the label set on each vehicle")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--rounds", type=int, default=60)
    p.add_argument("--n-avs", type=int, default=20)
    p.add_argument("--cities", type=int, default=4)
    p.add_argument("--regions", type=int, default=4)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--out", default=None,
                   help="optional JSON file for the per-seed results")
    return p.parse_args(argv)


def run_seed(args, seed):
    synth_cfg = SynthConfig(n_avs=args.n_avs, n_cities=args.cities,
                            classes=10, feat_dim=12, rho=args.rho,
                            samples_per_av=50, test_fraction=0.3,
                            prototype_scale=0.6, seed=seed)
    fed_cfg = FederationConfig(
        rounds=args.rounds, client_fraction=0.2,
        local=TrainConfig(local_epochs=10, batch_size=20, learning_rate=0.1),
        region_agg_interval=10,
        hyper=HyperLearnConfig(lr_embedding=0.01, lr_params=0.01),
        hidden_units=16, seed=seed)

    out = generate(synth_cfg)
    structure = partition(out.fleet,
                          PartitionConfig(k_regions=args.regions,
                                          gamma=args.gamma),
                          np.random.default_rng(seed))
    _, fedrav_metrics = run_fedrav(structure, out.datasets, fed_cfg)
    fedavg_metrics = run_fedavg_baseline(out.datasets, fed_cfg)
    local_metrics = run_local_baseline(out.datasets, fed_cfg)
    return {
        "seed": seed,
        "region_sizes": [len(r) for r in structure.regions],
        "fedrav_stored": fedrav_metrics[-1]["mean_acc"],
        "fedrav_personalized": fedrav_metrics[-1]["mean_acc_personalized"],
        "fedavg": fedavg_metrics[-1]["mean_acc"],
        "local": local_metrics[-1]["mean_acc"],
    }


def main(argv=None):
    args = parse_args(argv)
    start = time.time()
    rows = [run_seed(args, seed) for seed in args.seeds]

    print(f"rho={args.rho}  rounds={args.rounds}  seeds={args.seeds}")
    print(f"{'seed':>4}  {'regions':>12}  {'personalized':>12}  "
          f"{'stored':>8}  {'fedavg':>8}  {'local':>8}")
    for r in rows:
        sizes = "/".join(map(str, r["region_sizes"]))
        print(f"{r['seed']:>4}  {sizes:>12}  {r['fedrav_personalized']:>12.4f}"
              f"  {r['fedrav_stored']:>8.4f}  {r['fedavg']:>8.4f}"
              f"  {r['local']:>8.4f}")
    mean = {k: float(np.mean([r[k] for r in rows]))
            for k in ("fedrav_personalized", "fedrav_stored", "fedavg",
                      "local")}
    print(f"{'mean':>4}  {'':>12}  {mean['fedrav_personalized']:>12.4f}"
          f"  {mean['fedrav_stored']:>8.4f}  {mean['fedavg']:>8.4f}"
          f"  {mean['local']:>8.4f}")
    gap_avg = 100 * (mean["fedrav_personalized"] - mean["fedavg"])
    gap_loc = 100 * (mean["fedrav_personalized"] - mean["local"])
    print(f"margin over plain averaging: {gap_avg:+.2f}pp")
    print(f"margin over local-only:      {gap_loc:+.2f}pp")
    print(f"elapsed: {time.time() - start:.1f}s")

    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"config": vars(args), "rows": rows, "mean": mean},
                      fh, indent=1)
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
