"""Sweep protocols for the small-data mixup comparison.

Ten training phantoms, a shared held-out set, three seeds per arm.
Reports mean validation IoU with mixup on versus off so a protocol
with a stable positive gap can be pinned for the regression suite.
"""

import sys
import tempfile
import time
from pathlib import Path

from thoraxseg.dataset import SplitSpec, SynthConfig, generate_synthetic, load_samples, split_ids
from thoraxseg.losses import LossConfig
from thoraxseg.mixup import MixupConfig
from thoraxseg.model import ModelConfig
from thoraxseg.trainer import TrainConfig, train_model

SEEDS = (0, 1, 2)


def run_arm(train_samples, val_samples, lr, epochs, seed, mixup_on):
    mixup = MixupConfig(enabled=mixup_on, delta=0.2, seed=seed)
    cfg = TrainConfig(epochs=epochs, batch_size=4, learning_rate=lr, seed=seed,
                      loss=LossConfig(), mixup=mixup)
    result = train_model(train_samples, val_samples, ModelConfig(depth=2, base_channels=4), cfg)
    return result.curves[-1].val_iou


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "data"
        manifest = generate_synthetic(root, SynthConfig(count=40, resolution=32, seed=11))
        split = split_ids(manifest.ids(), SplitSpec(mode="fixed_count", train_count=10, seed=0))
        train_samples = load_samples(manifest, split.train_ids, 32, None)
        val_samples = load_samples(manifest, split.test_ids, 32, None)
        print(f"train={len(train_samples)} val={len(val_samples)}", flush=True)
        for lr in (3e-3, 5e-3):
            for epochs in (100, 150):
                for mixup_on in (False, True):
                    finals = []
                    start = time.monotonic()
                    for seed in SEEDS:
                        finals.append(run_arm(train_samples, val_samples, lr, epochs, seed, mixup_on))
                    wall = time.monotonic() - start
                    mean = sum(finals) / len(finals)
                    tag = "on " if mixup_on else "off"
                    detail = " ".join(f"{v:.4f}" for v in finals)
                    print(f"lr={lr:g} epochs={epochs} mixup={tag}: mean={mean:.4f} [{detail}] wall={wall:.0f}s",
                          flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
