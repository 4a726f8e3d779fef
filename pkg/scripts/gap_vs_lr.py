"""Same-context vs random cosine during pre-training for a few learning rates.

Snapshots the parameters every ``--every`` steps; used to pick the default rate.

    python3 scripts/gap_vs_lr.py --lrs 1e-4 3e-4 1e-3
"""

from __future__ import annotations

import argparse

import cityfm.pretrain.trainer as trainer
from cityfm.config import TrainingConfig
from cityfm.downstream.analysis import same_context_gap
from cityfm.downstream.synth import synth_city
from cityfm.geometry import build_context_groups
from cityfm.neural.checkpoint import ModelCheckpoint


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--lrs", type=float, nargs="+", default=[1e-4, 3e-4, 1e-3])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--every", type=int, default=250)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    corpus, _ = synth_city(args.seed)
    groups = build_context_groups(corpus, TrainingConfig.context_radius_m)
    base_step = trainer.optimizer_step
    for lr in args.lrs:
        config = TrainingConfig(max_steps=args.steps, lr=lr, seed=args.seed, plateau_window=10 * args.steps)
        data = trainer.prepare(corpus, config)
        seen = {"n": 0}

        def step(params, grads, state, rate):
            if seen["n"] % args.every == 0:
                ck = ModelCheckpoint(params, config, data.vocab, 1.0, data.road_ids)
                same, rand = same_context_gap(ck, corpus, groups)
                print(f"lr {lr:g} step {seen['n']:5d}  same {same:.3f}  random {rand:.3f}  gap {same - rand:.3f}")
            seen["n"] += 1
            return base_step(params, grads, state, rate)

        trainer.optimizer_step = step
        trainer.pretrain(corpus, config, data=data)
        trainer.optimizer_step = base_step


if __name__ == "__main__":
    main()
