"""Memory-size or latent-size sweep with medians over seeds; writes a plotdata TSV.

    python scripts/seed_sweep.py --axis memory_per_class --values 1,3,5,10 --out runs/memory
    python scripts/seed_sweep.py --axis latent_dim --values 8,16,32,64 --out runs/latent
"""
import argparse
from pathlib import Path

import numpy as np

from czsl.config import ExperimentConfig
from czsl.runner import SWEEP_AXES, plotdata_text, sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/default_synthetic.json")
    p.add_argument("--axis", choices=SWEEP_AXES, default="memory_per_class")
    p.add_argument("--values", default="1,3,5,10")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default=None, help="directory for the merged plotdata")
    args = p.parse_args()

    values = [int(v) for v in args.values.split(",")]
    base = ExperimentConfig.load(args.config)
    base.output_dir = None
    per_seed = []
    for seed in range(args.seeds):
        cfg = ExperimentConfig.from_dict(base.to_dict())
        cfg.train.seed = cfg.split_seed = seed
        if cfg.dataset.synthetic is not None:
            cfg.dataset.synthetic.seed = seed
        per_seed.append(sweep(cfg, args.axis, values))

    rows = []
    print(f"{args.axis:>18s} {'mSA':>7s} {'mUA':>7s} {'mH':>7s}")
    for i, v in enumerate(values):
        med = {}
        for name in ("mSA", "mUA", "mH", "forgetting"):
            vals = [getattr(s.reports[i], name) for s in per_seed]
            vals = [x for x in vals if x is not None]
            if vals:
                med[name] = float(np.median(vals))
                rows.append((v, name, med[name]))
        print(f"{v:18d} {med.get('mSA', np.nan):7.4f} {med.get('mUA', np.nan):7.4f} "
              f"{med.get('mH', np.nan):7.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"median_{args.axis}.plotdata.tsv").write_text(plotdata_text(rows), encoding="utf-8")


if __name__ == "__main__":
    main()
