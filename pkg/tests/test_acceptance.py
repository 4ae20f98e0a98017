"""Release gates: one printed [PASS]/[FAIL] line per gate.

Run with `pytest tests/test_acceptance.py -v -rA` (or -s) to see the gate
lines. Every gate also asserts, so a FAIL line always comes with a failed
test. The slower gates (G6, G7) train real models and together take a few
minutes on one core.
"""

import math
import time
from fractions import Fraction

import numpy as np

from test_losses import _random_pair, _scalar_sums, soft_dice_oracle, tversky_oracle
from test_preprocess import _bracket, clahe_oracle

from thoraxseg.autograd import Tensor
from thoraxseg.cli import main
from thoraxseg.dataset import (
    SplitSpec,
    SynthConfig,
    generate_synthetic,
    load_samples,
    split_ids,
)
from thoraxseg.gradcheck import run_standard_checks
from thoraxseg.losses import (
    LossConfig,
    dice_loss,
    focal_tversky_loss,
    soft_dice,
    tversky_index,
    tversky_loss,
)
from thoraxseg.metrics import confusion_counts, dsc, iou
from thoraxseg.mixup import MixupConfig, mix_pair, sample_beta
from thoraxseg.model import ModelConfig
from thoraxseg.preprocess import ClaheConfig, RawImage, clahe
from thoraxseg.trainer import TrainConfig, default_epochs, train_model


def gate(name: str, passed: bool, detail: str) -> None:
    tag = "PASS" if passed else "FAIL"
    print(f"[{tag}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


def test_g1_gradient_suite_under_two_minutes():
    start = time.monotonic()
    results = run_standard_checks(None, seed=0)
    wall = time.monotonic() - start
    worst = max(r.max_rel_err for r in results)
    ok = all(r.passed for r in results) and wall < 120.0
    gate("G1 finite-difference gradients", ok,
         f"{sum(r.passed for r in results)}/{len(results)} ops passed, "
         f"worst rel err {worst:.2e} (tol 1e-4), {wall:.1f}s (budget 120s)")


def test_g2_loss_values_match_scalar_oracles():
    rng = np.random.default_rng(42)
    cfg = LossConfig()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 3))
        h = int(rng.integers(1, 6))
        w = int(rng.integers(1, 6))
        p, g = _random_pair(rng, n=n, c=3, h=h, w=w)
        pt = Tensor(p)
        for cls in range(3):
            worst = max(worst, abs(soft_dice(pt, g, cls, cfg.epsilon).item()
                                   - soft_dice_oracle(p, g, cls, cfg.epsilon)))
            worst = max(worst, abs(tversky_index(pt, g, cls, cfg).item()
                                   - tversky_oracle(p, g, cls, cfg)))
        dl = sum(1.0 - soft_dice_oracle(p, g, c, cfg.epsilon) for c in cfg.class_set)
        tl = sum(1.0 - tversky_oracle(p, g, c, cfg) for c in cfg.class_set)
        fl = sum(math.pow(1.0 - tversky_oracle(p, g, c, cfg), cfg.gamma_inv)
                 for c in cfg.class_set)
        worst = max(worst, abs(dice_loss(pt, g, cfg).item() - dl))
        worst = max(worst, abs(tversky_loss(pt, g, cfg).item() - tl))
        worst = max(worst, abs(focal_tversky_loss(pt, g, cfg).item() - fl))

    # Balanced weighting must reproduce the classic two-sided overlap ratio.
    balanced = LossConfig(alpha=0.5, beta=0.5)
    worst_balanced = 0.0
    for _ in range(20):
        p, g = _random_pair(rng)
        pt = Tensor(p)
        for cls in range(3):
            tp, fn, fp, sp, sg = _scalar_sums(p, g, cls)
            classic = (2.0 * tp + 2.0 * balanced.epsilon) / (sp + sg + 2.0 * balanced.epsilon)
            worst_balanced = max(worst_balanced,
                                 abs(tversky_index(pt, g, cls, balanced).item() - classic))

    # Dyadic fixture: tp = 1, fn = fp = 1.0625 exactly, so the index is
    # exactly 0.5 and the focal term must be pow(0.5, 0.675).
    dyadic = LossConfig(alpha=0.5, beta=0.5, epsilon=0.0625, class_set=(1,))
    p = np.zeros((1, 2, 1, 5))
    g = np.zeros((1, 2, 1, 5))
    p[0, 1, 0] = [1.0, 0.0, 0.0, 1.0, 0.0625]
    g[0, 1, 0] = [1.0, 1.0, 0.0625, 0.0, 0.0]
    pt = Tensor(p)
    ti_val = tversky_index(pt, g, 1, dyadic).item()
    focal = focal_tversky_loss(pt, g, dyadic).item()
    expected = math.pow(0.5, 0.675)
    focal_err = abs(focal - expected)

    ok = worst <= 1e-12 and worst_balanced <= 1e-12 and ti_val == 0.5 and focal_err <= 1e-12
    gate("G2 loss oracles", ok,
         f"100 randomized cases worst |err| {worst:.2e}, balanced-index worst "
         f"{worst_balanced:.2e} (tol 1e-12), half-overlap focal term {focal:.15f} "
         f"vs {expected:.15f} (|err| {focal_err:.2e})")


def test_g3_overlap_identity_on_crisp_pairs():
    rng = np.random.default_rng(7)
    worst = 0.0
    checked = 0
    exact_checked = 0
    for case in range(1000):
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        # Mix dense, sparse, and empty label maps so degenerate counts occur.
        density = rng.choice([0.0, 0.3, 0.8])
        pred = np.where(rng.random((h, w)) < density, rng.integers(1, 3, (h, w)), 0)
        truth = np.where(rng.random((h, w)) < density, rng.integers(1, 3, (h, w)), 0)
        for cls in range(3):
            counts = confusion_counts(pred, truth, cls)
            d = dsc(counts)
            j = iou(counts)
            worst = max(worst, abs(j - d / (2.0 - d)))
            checked += 1
            if case % 40 == 0:
                denom_d = 2 * counts.tp + counts.fp + counts.fn
                denom_j = counts.tp + counts.fp + counts.fn
                d_frac = Fraction(2 * counts.tp, denom_d) if denom_d else Fraction(1)
                j_frac = Fraction(counts.tp, denom_j) if denom_j else Fraction(1)
                assert j_frac == d_frac / (2 - d_frac)
                assert abs(j - float(j_frac)) <= 1e-15
                exact_checked += 1
    ok = worst <= 1e-12 and checked == 3000 and exact_checked >= 60
    gate("G3 crisp overlap identity", ok,
         f"iou == dsc/(2-dsc) on {checked} class pairs, worst |err| {worst:.2e} "
         f"(tol 1e-12), {exact_checked} rational-arithmetic spot checks exact")


def test_g4_mixing_weight_sampler_moments():
    rng = np.random.default_rng(0)
    delta = 0.2
    draws = np.array([sample_beta(delta, rng) for _ in range(100_000)])
    mean = float(draws.mean())
    var = float(draws.var())
    target_var = 1.0 / (4.0 * (2.0 * delta + 1.0))
    mean_ok = abs(mean - 0.5) <= 0.01
    var_ok = abs(var - target_var) <= 0.005

    image_a = np.linspace(0.0, 1.0, 12).reshape(1, 3, 4)
    mask_a = np.stack([np.ones((3, 4)), np.zeros((3, 4))])
    image_b = image_a[::-1].copy() + 0.25
    mask_b = mask_a[::-1].copy()
    mixed = mix_pair(image_a, mask_a, image_b, mask_b, 1.0)
    identity_ok = (mixed.image.tobytes() == image_a.tobytes()
                   and mixed.mask.tobytes() == mask_a.tobytes())

    ok = mean_ok and var_ok and identity_ok
    gate("G4 mixing weight sampler", ok,
         f"1e5 draws at delta=0.2: mean {mean:.4f} (0.5 +- 0.01), var {var:.4f} "
         f"({target_var:.4f} +- 0.005), weight-1.0 mix bitwise identical: {identity_ok}")


def _ahe_scalar(img: RawImage, cfg: ClaheConfig) -> np.ndarray:
    """Plain tiled adaptive equalization: per-tile histogram, no clipping."""
    rows, cols = cfg.tile_grid
    h, w = img.shape
    levels = 1 << img.bit_depth
    row_edges = [(h // rows) * k for k in range(rows)] + [h]
    col_edges = [(w // cols) * k for k in range(cols)] + [w]
    luts = {}
    centers_r = []
    centers_c = []
    for tr in range(rows):
        centers_r.append((row_edges[tr] + row_edges[tr + 1] - 1) / 2.0)
    for tc in range(cols):
        centers_c.append((col_edges[tc] + col_edges[tc + 1] - 1) / 2.0)
    for tr in range(rows):
        for tc in range(cols):
            hist = [0] * cfg.num_bins
            npix = 0
            for y in range(row_edges[tr], row_edges[tr + 1]):
                for x in range(col_edges[tc], col_edges[tc + 1]):
                    hist[(int(img.pixels[y, x]) * cfg.num_bins) // levels] += 1
                    npix += 1
            cdf = []
            run = 0
            for count in hist:
                run += count
                cdf.append(run / npix)
            luts[(tr, tc)] = [c * (levels - 1) for c in cdf]

    out = np.zeros((h, w), dtype=np.int64)
    for y in range(h):
        r0, r1, wr = _bracket(y, centers_r)
        for x in range(w):
            c0, c1, wc = _bracket(x, centers_c)
            b = (int(img.pixels[y, x]) * cfg.num_bins) // levels
            top = (1.0 - wc) * luts[(r0, c0)][b] + wc * luts[(r0, c1)][b]
            bot = (1.0 - wc) * luts[(r1, c0)][b] + wc * luts[(r1, c1)][b]
            value = (1.0 - wr) * top + wr * bot
            out[y, x] = int(math.floor(value + 0.5))
    return out


def test_g5_adaptive_equalization_fixtures():
    cfg = ClaheConfig(tile_grid=(2, 2), clip_limit_factor=2.0, num_bins=16)
    flat = RawImage(pixels=np.full((16, 16), 97, dtype=np.int64), bit_depth=8)
    flat_out = clahe(flat, cfg)
    constant_ok = len(np.unique(flat_out.pixels)) == 1

    rng = np.random.default_rng(5)
    noisy = RawImage(pixels=rng.integers(0, 256, (16, 16)), bit_depth=8)
    unclipped = ClaheConfig(tile_grid=(2, 2), clip_limit_factor=16.0, num_bins=16)
    ahe_ok = np.array_equal(clahe(noisy, unclipped).pixels, _ahe_scalar(noisy, unclipped))

    # Two-tile 16x16 fixture: a gradient with a bright band so the halves
    # carry different histograms and the blend path is exercised.
    pixels = np.add.outer(np.arange(16) * 8, np.arange(16) * 4)
    pixels[4:8, :] = 220
    fixture = RawImage(pixels=pixels.astype(np.int64), bit_depth=8)
    two_tile = ClaheConfig(tile_grid=(1, 2), clip_limit_factor=2.0, num_bins=16)
    got = clahe(fixture, two_tile).pixels
    want = clahe_oracle(fixture, two_tile)
    two_tile_ok = np.array_equal(got, want)

    ok = constant_ok and ahe_ok and two_tile_ok
    gate("G5 adaptive equalization", ok,
         f"constant image stays constant: {constant_ok}, unclipped limit matches "
         f"plain tiled equalization: {ahe_ok}, 16x16 two-tile fixture pixel-exact "
         f"vs scalar reference: {two_tile_ok}")


def test_g6_small_model_overfits_four_samples(tmp_path):
    root = tmp_path / "data"
    manifest = generate_synthetic(root, SynthConfig(count=4, resolution=64, seed=7))
    samples = load_samples(manifest, manifest.ids(), 64, None)
    cfg = TrainConfig(epochs=200, batch_size=4, learning_rate=5e-3, seed=0,
                      mixup=MixupConfig(enabled=False))
    hit_epoch = None
    best = 0.0

    def progress(row):
        nonlocal hit_epoch, best
        best = max(best, row.train_dsc)
        if hit_epoch is None and row.train_dsc >= 0.99:
            hit_epoch = row.epoch

    start = time.monotonic()
    train_model(samples, [], ModelConfig(depth=2, base_channels=4), cfg, progress=progress)
    wall = time.monotonic() - start
    ok = hit_epoch is not None and wall < 600.0
    gate("G6 four-sample overfit", ok,
         f"train dsc {best:.4f} (>= 0.99 first reached at epoch {hit_epoch} of 200), "
         f"{wall:.0f}s (budget 600s)")


def test_g7_mixup_improves_small_data_generalization(tmp_path):
    root = tmp_path / "data"
    manifest = generate_synthetic(root, SynthConfig(count=40, resolution=32, seed=11))
    split = split_ids(manifest.ids(), SplitSpec(mode="fixed_count", train_count=10, seed=0))
    train_samples = load_samples(manifest, split.train_ids, 32, None)
    val_samples = load_samples(manifest, split.test_ids, 32, None)

    def arm(mixup_on: bool) -> list[float]:
        finals = []
        for seed in (0, 1, 2):
            cfg = TrainConfig(epochs=150, batch_size=4, learning_rate=3e-3, seed=seed,
                              mixup=MixupConfig(enabled=mixup_on, delta=0.2, seed=seed))
            result = train_model(train_samples, val_samples,
                                 ModelConfig(depth=2, base_channels=4), cfg)
            finals.append(result.curves[-1].val_iou)
        return finals

    plain = arm(False)
    mixed = arm(True)
    mean_plain = sum(plain) / len(plain)
    mean_mixed = sum(mixed) / len(mixed)

    report = tmp_path / "mixup_benefit.txt"
    lines = ["ten training samples, three seeds, final held-out iou",
             "mixup off: " + " ".join(f"{v:.6f}" for v in plain) + f" mean {mean_plain:.6f}",
             "mixup on:  " + " ".join(f"{v:.6f}" for v in mixed) + f" mean {mean_mixed:.6f}"]
    report.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))

    ok = mean_mixed >= mean_plain
    gate("G7 mixup benefit", ok,
         f"mean held-out iou with mixup {mean_mixed:.4f} vs without {mean_plain:.4f} "
         f"(3 seeds, 10 training samples; report at {report})")


def test_g8_split_sizes_and_epoch_schedule():
    ids = [f"s{k:04d}" for k in range(247)]
    split = split_ids(ids, SplitSpec(train_fraction=0.85, seed=0))
    sizes_ok = len(split.train_ids) == 209 and len(split.test_ids) == 38
    disjoint_ok = not set(split.train_ids) & set(split.test_ids)

    schedule_ok = (default_epochs(209) == 50 and default_epochs(20) == 500
                   and default_epochs(10) == 1000)
    worst_dev = 0.0
    for size in range(10, 209):
        presentations = size * default_epochs(size)
        worst_dev = max(worst_dev, abs(presentations - 10_000) / 10_000)
    budget_ok = worst_dev <= 0.05

    ok = sizes_ok and disjoint_ok and schedule_ok and budget_ok
    gate("G8 split and schedule", ok,
         f"247 -> {len(split.train_ids)}/{len(split.test_ids)} split, "
         f"epochs(209/20/10) = {default_epochs(209)}/{default_epochs(20)}/{default_epochs(10)}, "
         f"worst presentation deviation {worst_dev:.1%} (budget 5%)")


def test_g9_identical_runs_are_bitwise_identical(tmp_path):
    root = tmp_path / "data"
    code = main(["synth", "--out", str(root),
                 "--set", "synth.count=6", "--set", "synth.resolution=16"])
    assert code == 0
    overrides = ["--set", f"data.root={root}",
                 "--set", "model.depth=2", "--set", "model.base_channels=2",
                 "--set", "data.resolution=16", "--set", "data.clahe_enabled=false",
                 "--set", "train.epochs=3", "--set", "train.batch_size=2",
                 "--set", "data.split.train_fraction=0.7",
                 "--seed", "123"]
    outs = []
    for name in ("run_a", "run_b"):
        out = tmp_path / name
        code = main(["train", "--out", str(out)] + overrides)
        assert code == 0
        outs.append(out)

    curves_a = (outs[0] / "curves.csv").read_bytes()
    curves_b = (outs[1] / "curves.csv").read_bytes()
    ckpt_a = (outs[0] / "checkpoint.sgm").read_bytes()
    ckpt_b = (outs[1] / "checkpoint.sgm").read_bytes()
    curves_ok = curves_a == curves_b
    ckpt_ok = ckpt_a == ckpt_b
    ok = curves_ok and ckpt_ok
    gate("G9 run repeatability", ok,
         f"identical seed and config twice: curves.csv bytes equal: {curves_ok} "
         f"({len(curves_a)}B), checkpoint bytes equal: {ckpt_ok} ({len(ckpt_a)}B)")
