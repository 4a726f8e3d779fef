"""Synthetic-city benchmark: pre-train, then run every probe and the similarity checks.

    python3 scripts/run_benchmark.py --seed 7 --out runs/bench
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from cityfm.config import TrainingConfig
from cityfm.downstream import analysis, tasks
from cityfm.downstream.embed import Embedder
from cityfm.downstream.synth import synth_city, write_city
from cityfm.pretrain.trainer import pretrain, write_loss_curve


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=TrainingConfig.lr)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--out", type=Path, default=Path("runs/benchmark"))
    args = ap.parse_args()

    t0 = time.perf_counter()
    corpus, truth = synth_city(args.seed)
    write_city(corpus, truth, args.out / "city")
    config = TrainingConfig(max_steps=args.steps, lr=args.lr, seed=args.seed)
    result = pretrain(corpus, config)
    result.checkpoint.save(args.out / "checkpoint.npz")
    write_loss_curve(result.curve, args.out / "loss_curve.csv")
    totals = np.array([r["loss_total"] for r in result.curve])
    tail = float(totals[-50:].mean())
    print(f"pretrain: {len(totals)} steps in {result.seconds:.1f}s, loss {totals[0]:.3f} -> {tail:.3f} "
          f"({100 * (1 - tail / totals[0]):.1f}% lower)")

    ckpt = result.checkpoint
    emb = Embedder(ckpt, corpus)
    speed = tasks.eval_speed(ckpt, corpus, [tasks.SpeedRow(*r) for r in truth.speeds], n_runs=args.runs,
                             seed=args.seed, embedder=emb)
    buildings = tasks.eval_buildings(ckpt, corpus, [tasks.LabelRow(*r) for r in truth.labels], n_runs=args.runs,
                                     seed=args.seed, embedder=emb)
    regions = tasks.eval_regions(ckpt, corpus, [tasks.DensityRow(i, tasks.parse_region_wkt(w), d)
                                                for i, w, d in truth.density], n_runs=args.runs, seed=args.seed,
                                 embedder=emb)
    groups = list(emb.groups.values())
    same, rand = analysis.same_context_gap(ckpt, corpus, groups)
    coloc = analysis.colocation_ranking(ckpt, corpus, groups, sorted(truth.poi_family))
    share = sum(r.satisfied for r in coloc) / len(coloc)

    print(f"speed     r2 {speed.mean['r2']:.3f} +- {speed.std['r2']:.3f}  shuffled r2 {speed.extra['shuffled_r2']:.3f}")
    print(f"buildings acc {buildings.mean['accuracy']:.3f}  macro-F1 {buildings.mean['macro_f1']:.3f}  "
          f"majority {buildings.extra['majority_rate']:.3f}")
    print(f"regions   r2 {regions.mean['r2']:.3f} +- {regions.std['r2']:.3f}")
    print(f"context   same {same:.3f}  random {rand:.3f}  gap {same - rand:.3f}")
    print(f"co-location queries satisfied {share:.0%} ({len(coloc)} queries)")
    print(f"total {time.perf_counter() - t0:.1f}s")

    summary = {
        "steps": len(totals), "loss_first": float(totals[0]), "loss_last50": tail,
        "speed": speed.to_dict(), "buildings": buildings.to_dict(), "regions": regions.to_dict(),
        "same_context_cosine": same, "random_cosine": rand, "colocation_share": share,
    }
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
