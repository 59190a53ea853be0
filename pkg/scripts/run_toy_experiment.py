#!/usr/bin/env python3
"""Full desk-scale experiment: generate data, train both stages, report.

Equivalent to:
    python scripts/make_toy_dataset.py --out <workdir>/pairs
    dualfuse train --config configs/desk.cfg --data <workdir>/pairs --out ...
    dualfuse eval --ckpt ... --dir <workdir>/pairs
but also prints loss trajectories and the single-input fusion baselines.
"""

import argparse
import os
import time

import numpy as np

from dualfuse import metrics
from dualfuse.autodiff import no_grad
from dualfuse.config import RunConfig
from dualfuse.losses import stage2_loss
from dualfuse.model import fuse_pair_arrays, image_to_tensor
from dualfuse.toydata import make_toy_pairs
from dualfuse.train import train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/toy_experiment")
    parser.add_argument("--pairs", type=int, default=8)
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--epochs", type=int, default=25,
                        help="epochs per stage (8 pairs, batch 1: 8 steps each)")
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = RunConfig(channels=8, crop=args.size, batch=1,
                    epochs_stage1=args.epochs, epochs_stage2=args.epochs,
                    lr=args.lr, seed=args.seed, out_dir=args.out)
    pairs = make_toy_pairs(args.pairs, args.size, seed=7)

    start = time.monotonic()
    result = train(cfg, pairs)
    minutes = (time.monotonic() - start) / 60.0

    stage1 = [float(r[-1]) for r in result.log_rows if r[0] == "I"]
    stage2 = [float(r[-1]) for r in result.log_rows if r[0] == "II"]
    print("trained %d + %d steps in %.1f min"
          % (len(stage1), len(stage2), minutes))
    print("stage I loss: %.4f -> %.4f" % (stage1[0], stage1[-1]))
    print("stage II loss: %.4f -> %.4f" % (stage2[0], stage2[-1]))

    fused_int, base_int, fused_q, base_q = [], [], [], []
    for pair in pairs:
        fused = fuse_pair_arrays(pair, result.model, cfg)
        img_a = image_to_tensor(pair.a)
        img_b = image_to_tensor(pair.b)
        with no_grad():
            fused_int.append(stage2_loss(image_to_tensor(fused), img_a,
                                         img_b).intensity.item())
            base_int.append(min(
                stage2_loss(img_a, img_a, img_b).intensity.item(),
                stage2_loss(img_b, img_a, img_b).intensity.item()))
        f_u8 = metrics.quantize_u8(fused)
        a_u8 = metrics.quantize_u8(pair.a)
        b_u8 = metrics.quantize_u8(pair.b)
        fused_q.append(metrics.metric_qabf(f_u8, a_u8, b_u8))
        base_q.append(metrics.metric_qabf(a_u8, a_u8, b_u8))
    print("fusion intensity loss %.4f vs best single input %.4f"
          % (np.mean(fused_int), np.mean(base_int)))
    print("edge preservation: fused %.4f vs single-input baseline %.4f"
          % (np.mean(fused_q), np.mean(base_q)))
    print("checkpoint: %s" % result.checkpoint_path)
    print("loss log:   %s" % os.path.join(cfg.out_dir, "loss_log.csv"))


if __name__ == "__main__":
    main()
