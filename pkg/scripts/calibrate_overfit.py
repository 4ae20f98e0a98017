"""Pick a learning rate for the tiny-memorization run.

Trains a depth-2 / base-4 model on 4 synthetic 64x64 samples at a few
learning rates and reports when train DSC crosses 0.99.
"""

import sys
import tempfile
import time
from pathlib import Path

from thoraxseg.dataset import SynthConfig, generate_synthetic, load_samples
from thoraxseg.losses import LossConfig
from thoraxseg.mixup import MixupConfig
from thoraxseg.model import ModelConfig
from thoraxseg.trainer import TrainConfig, train_model


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "data"
        manifest = generate_synthetic(root, SynthConfig(count=4, resolution=64, seed=7))
        samples = load_samples(manifest, manifest.ids(), 64, None)
        for lr in (3e-4, 1e-3, 3e-3):
            cfg = TrainConfig(epochs=200, batch_size=4, learning_rate=lr, seed=0,
                              loss=LossConfig(), mixup=MixupConfig(enabled=False))
            start = time.monotonic()
            hit = None
            best = 0.0

            def progress(row):
                nonlocal hit, best
                best = max(best, row.train_dsc)
                if hit is None and row.train_dsc >= 0.99:
                    hit = row.epoch

            result = train_model(samples, [], ModelConfig(depth=2, base_channels=4), cfg,
                                 progress=progress)
            wall = time.monotonic() - start
            print(f"lr={lr:g}: best train_dsc={best:.4f} "
                  f"first>=0.99 at epoch {hit} wall={wall:.0f}s "
                  f"final={result.curves[-1].train_dsc:.4f}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
