"""Shape-count and opacity sweeps on the toy setup.

    python3 scripts/sweeps.py --config configs/toy.cfg            # n in {3, 8}, alpha_max in {0.1, 0.5}
    python3 scripts/sweeps.py --config configs/toy.cfg --full     # n in {3,5,7,10,15}, alpha_max in {0.1,...,0.9}
    python3 scripts/sweeps.py --config configs/toy.cfg --seeds 0,1,2,3

Each point is a full optimize-then-evaluate run. The n sweep holds alpha_max
at the config value; the alpha_max sweep holds n at 8. With several seeds the
table also shows the per-point mean, which is what the trend should be read
from. Results go to sweep_<axis>[_seed<k>].csv under run.out.
"""

import argparse
import logging
from dataclasses import replace

import numpy as np

from lenspatch import pipeline
from lenspatch.config import load_config
from lenspatch.evaluation import PAPER_SWEEPS, run_sweep, save_sweep

TOY_SWEEPS = {"n_shapes": (3, 8), "alpha_max": (0.1, 0.5)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/toy.cfg")
    ap.add_argument("--full", action="store_true", help="use the wider published sweep grids")
    ap.add_argument("--axis", choices=("n_shapes", "alpha_max"), default=None)
    ap.add_argument("--seeds", default=None, help="comma separated attack seeds (default: run.seed)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    det = pipeline.ensure_detector(cfg)
    data = pipeline.attack_data(cfg)
    target = pipeline.target_index(cfg, data.class_names)
    printable = pipeline.printable_colors(cfg)
    grids = PAPER_SWEEPS if args.full else TOY_SWEEPS
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.run.seed]
    caches = {seed: {} for seed in seeds}
    for axis in ([args.axis] if args.axis else ["n_shapes", "alpha_max"]):
        manual = cfg.patch if axis == "n_shapes" else replace(cfg.patch, n_shapes=8)
        table = []
        for seed in seeds:
            opt = cfg.with_seed(seed).optimizer
            rows = run_sweep(axis, grids[axis], data.train, data.val, data.test, det, opt, manual,
                             target, cache=caches[seed], printable=printable)
            suffix = f"_seed{seed}" if len(seeds) > 1 else ""
            print(f"-> {save_sweep(rows, axis, cfg.out_dir / f'sweep_{axis}{suffix}.csv')}")
            table.append([(r.target_ap, r.untargeted_ap) for r in rows])
        mean = np.mean(np.array(table), axis=0)
        print(f"\n{axis:>10s} {'target AP':>10s} {'untgt AP':>10s}   (mean over seeds {seeds})")
        for value, (t, u) in zip(grids[axis], mean):
            print(f"{value:10g} {t:10.3f} {u:10.3f}")


if __name__ == "__main__":
    main()
