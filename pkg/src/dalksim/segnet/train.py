"""Seeded SGD training with phantom-grouped five-fold cross-validation.

Frames from one phantom never appear in both the train and test split of a
fold. Training runs on vertical crop windows (the cornea band occupies a
minority of the 1024 rows, so full frames waste most of the compute on
empty background); windows are biased to overlap the band.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .. import dsp
from .loss import loss_and_grad, region_map
from .network import PAD, SegNet, preprocess


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.12
    dropout: float = 0.5
    lr: float = 0.03
    epochs: int = 3
    batch: int = 4
    seed: int = 0
    folds: int = 5
    momentum: float = 0.95
    crop_height: int = 232
    crops_per_frame: int = 2
    base_channels: int = 8
    bottleneck_channels: int = 32
    max_grad_norm: float = 1.0  # 0 disables clipping
    warmup_steps: int = 20
    prior_bias_init: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss scales must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.folds < 2:
            raise ValueError("cross-validation needs at least 2 folds")
        if self.crop_height % 4:
            raise ValueError("crop_height must be divisible by 4 (two pooling levels)")


@dataclass
class TrainSample:
    pixels: np.ndarray  # (1024, 48) raw intensity
    mask: np.ndarray  # (1024, 48) binary cornea mask
    phantom_id: str


@dataclass
class FoldMetrics:
    fold: int
    n_train: int
    n_test: int
    epoch_loss: list[float]
    pixel_accuracy: float
    boundary_error_px: float


@dataclass
class TrainResult:
    nets: list[SegNet]
    metrics: list[FoldMetrics]
    config: TrainConfig = field(repr=False, default=None)


def grouped_folds(phantom_ids, n_folds, seed=0):
    """Round-robin split of whole phantoms into folds."""
    unique = sorted(set(phantom_ids))
    if len(unique) < n_folds:
        raise ValueError(f"{len(unique)} phantoms cannot fill {n_folds} folds")
    order = list(np.random.default_rng(seed).permutation(unique))
    folds = [set(order[k::n_folds]) for k in range(n_folds)]
    return [(set(unique) - test, test) for test in folds]


def _train_window(sample, padded, cfg, rng):
    """Pick a crop start row in padded coordinates.

    Most windows bracket the cornea band (roughly class-balanced crops keep
    the optimizer away from the all-background solution); the rest are
    uniform so plain background is still seen.
    """
    span = padded.shape[0] - cfg.crop_height
    out_rows = cfg.crop_height - 2 * PAD
    fg_rows = np.nonzero(sample.mask.any(axis=1))[0]
    if fg_rows.size and rng.random() < 0.7:
        top, bottom = int(fg_rows[0]), int(fg_rows[-1])
        # prefer windows containing the whole band; fall back to overlap
        lo, hi = bottom - out_rows + 1, top
        if hi < lo:
            lo, hi = top - out_rows // 2, bottom - out_rows // 2
        lo, hi = max(0, lo), min(span, max(hi, 0))
        if hi >= lo:
            return int(rng.integers(lo, hi + 1))
    return int(rng.integers(0, span + 1))


def _sgd_step(net, velocity, lr, momentum, grads=None):
    for name, p, g in net.parameters():
        if grads is not None:
            g = grads[name]
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v -= lr * g
        p += v


def _accumulate(net, grads, scale):
    for name, _, g in net.parameters():
        if name in grads:
            grads[name] += g * scale
        else:
            grads[name] = g * scale


def _clip_grads(grads, max_norm):
    if max_norm <= 0:
        return
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def train_single(samples, cfg, seed_offset=0):
    """Train one network on all given samples; returns (net, per-epoch mean loss)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, seed_offset]))
    net = SegNet(seed=int(rng.integers(2**31)), base_channels=cfg.base_channels,
                 bottleneck_channels=cfg.bottleneck_channels, dropout_rate=cfg.dropout)
    if cfg.prior_bias_init:
        # start the head at the dataset's foreground prior so the first
        # updates train features instead of swinging the output biases
        prior = float(np.clip(np.mean([s.mask.mean() for s in samples]), 1e-3, 1 - 1e-3))
        net.head.b[...] = np.log([1.0 - prior, prior]).astype(net.head.b.dtype)
    velocity = {}
    epoch_loss = []
    padded_cache = [preprocess(s.pixels) for s in samples]
    batch = max(1, cfg.batch)
    pending, grads = 0, {}
    step = 0
    for epoch in range(cfg.epochs):
        # linear decay to 20% of the base rate over the run
        lr_epoch = cfg.lr * (1.0 - 0.8 * epoch / max(cfg.epochs - 1, 1))
        order = rng.permutation(len(samples))
        losses = []
        for idx in order:
            sample, padded = samples[idx], padded_cache[idx]
            for _ in range(cfg.crops_per_frame):
                a = _train_window(sample, padded, cfg, rng)
                window = padded[a:a + cfg.crop_height, :]
                truth = sample.mask[a:a + cfg.crop_height - 2 * PAD, :]
                region = None
                if truth.any():
                    region = region_map(truth, rng_seed=rng)
                logits = net.forward_logits(window, train_mode=True, rng=rng)
                crop = logits[PAD:-PAD, PAD:-PAD]
                total, _, _, dcrop = loss_and_grad(
                    crop, truth, region, alpha=cfg.alpha, beta=cfg.beta)
                dfull = np.zeros(logits.shape, dtype=logits.dtype)
                dfull[PAD:-PAD, PAD:-PAD] = dcrop
                net.backward(dfull)
                _accumulate(net, grads, 1.0 / batch)
                pending += 1
                if pending == batch:
                    lr = lr_epoch
                    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
                        lr *= (0.1 + 0.9 * step / cfg.warmup_steps)
                    _clip_grads(grads, cfg.max_grad_norm)
                    _sgd_step(net, velocity, lr, cfg.momentum, grads=grads)
                    pending, grads = 0, {}
                    step += 1
                losses.append(total)
        epoch_loss.append(float(np.mean(losses)))
    if pending:
        _clip_grads(grads, cfg.max_grad_norm)
        _sgd_step(net, velocity, cfg.lr * 0.2, cfg.momentum, grads=grads)
    return net, epoch_loss


def evaluate(net, samples):
    """Pixel accuracy and mean per-column edge error of thresholded predictions."""
    accs, edge_errors = [], []
    for s in samples:
        prob = net.forward(preprocess(s.pixels))
        pred = prob >= 0.5
        truth = s.mask > 0.5
        accs.append(float((pred == truth).mean()))
        for col in range(truth.shape[1]):
            t_rows = np.nonzero(truth[:, col])[0]
            p_rows = np.nonzero(pred[:, col])[0]
            if t_rows.size and p_rows.size:
                edge_errors.append(abs(int(t_rows[0]) - int(p_rows[0])))
                edge_errors.append(abs(int(t_rows[-1]) - int(p_rows[-1])))
            elif t_rows.size != p_rows.size:
                edge_errors.append(truth.shape[0])  # total miss
    return float(np.mean(accs)), float(np.mean(edge_errors)) if edge_errors else float("nan")


def train(samples, cfg):
    """Phantom-grouped k-fold training; returns per-fold nets and metrics."""
    folds = grouped_folds([s.phantom_id for s in samples], cfg.folds, seed=cfg.seed)
    nets, metrics = [], []
    for k, (train_ids, test_ids) in enumerate(folds):
        train_set = [s for s in samples if s.phantom_id in train_ids]
        test_set = [s for s in samples if s.phantom_id in test_ids]
        net, epoch_loss = train_single(train_set, cfg, seed_offset=k + 1)
        acc, edge = evaluate(net, test_set)
        nets.append(net)
        metrics.append(FoldMetrics(fold=k, n_train=len(train_set), n_test=len(test_set),
                                   epoch_loss=epoch_loss, pixel_accuracy=acc,
                                   boundary_error_px=edge))
    return TrainResult(nets=nets, metrics=metrics, config=cfg)


# -- dataset manifest ----------------------------------------------------------


def write_manifest(path, entries):
    """entries: iterable of (phantom_id, frame_path, mask_path)."""
    with open(path, "w", encoding="utf-8") as fh:
        for phantom_id, frame_path, mask_path in entries:
            fh.write(f"{phantom_id}\t{frame_path}\t{mask_path}\n")


def read_manifest(path):
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            phantom_id, frame_path, mask_path = line.split("\t")
            entries.append((phantom_id, frame_path, mask_path))
    return entries


def load_dataset(manifest_path):
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for phantom_id, frame_path, mask_path in read_manifest(manifest_path):
        frame_path = frame_path if os.path.isabs(frame_path) else os.path.join(base, frame_path)
        mask_path = mask_path if os.path.isabs(mask_path) else os.path.join(base, mask_path)
        scan, _ = dsp.read_mscan_fixture(frame_path)
        mask = np.load(mask_path)
        samples.append(TrainSample(pixels=scan.pixels, mask=mask, phantom_id=phantom_id))
    return samples
