"""Model x memory-strategy grid over several seeds, printed as a table of median metrics.

    python scripts/run_grid.py --config configs/default_synthetic.json --seeds 5
"""
import argparse
import copy
import time

import numpy as np

from czsl.config import ExperimentConfig
from czsl.runner import Experiment

STRATEGIES = ("none", "reservoir", "ring_buffer", "mean_of_features")


def variant(base: ExperimentConfig, model: str, strategy: str, seed: int) -> ExperimentConfig:
    cfg = copy.deepcopy(base)
    cfg.model = model
    cfg.memory.strategy = strategy
    if strategy == "none":
        cfg.train.replay_enabled = cfg.train.kd_enabled = False
    cfg.train.seed = cfg.split_seed = seed
    if cfg.dataset.synthetic is not None:
        cfg.dataset.synthetic.seed = seed
    cfg.output_dir = None
    return cfg.validate()


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/default_synthetic.json")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--models", default="cada,cvae")
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    args = p.parse_args()

    base = ExperimentConfig.load(args.config)
    print(f"config hash {base.config_hash()[:12]}, setting {base.setting}, {args.seeds} seeds")
    print(f"{'method':28s} {'mSA':>7s} {'mUA':>7s} {'mH':>7s} {'forget':>7s} {'sec':>6s}")
    for model in args.models.split(","):
        for strategy in args.strategies.split(","):
            t0 = time.perf_counter()
            reports = [Experiment(variant(base, model, strategy, s)).run() for s in range(args.seeds)]
            name = f"Seq-{model.upper()}" if strategy == "none" else f"CZSL-{model}+{strategy}"

            def med(attr):
                vals = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
                return float(np.median(vals)) if vals else float("nan")

            print(f"{name:28s} {med('mSA'):7.4f} {med('mUA'):7.4f} {med('mH'):7.4f} "
                  f"{med('forgetting'):7.4f} {time.perf_counter() - t0:6.1f}", flush=True)


if __name__ == "__main__":
    main()
