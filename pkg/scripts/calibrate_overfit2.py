"""Second sweep: higher learning rates, several seeds, margin check."""

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
        for lr in (5e-3, 8e-3):
            for seed in (0, 1, 2):
                cfg = TrainConfig(epochs=200, batch_size=4, learning_rate=lr, seed=seed,
                                  loss=LossConfig(), mixup=MixupConfig(enabled=False))
                start = time.monotonic()
                hit = None
                best = 0.0

                def progress(row):
                    nonlocal hit, best
                    best = max(best, row.train_dsc)
                    if hit is None and row.train_dsc >= 0.99:
                        hit = row.epoch

                train_model(samples, [], ModelConfig(depth=2, base_channels=4), cfg,
                            progress=progress)
                wall = time.monotonic() - start
                print(f"lr={lr:g} seed={seed}: best={best:.4f} hit={hit} wall={wall:.0f}s",
                      flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
