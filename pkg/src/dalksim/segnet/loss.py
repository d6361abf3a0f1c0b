"""Composite segmentation loss: pixel cross-entropy plus a convex-shape term.

The shape term takes the ground-truth object center c and a stratified
sample of interior pixels p (four per directional octant around c). For
each p it walks the rasterized segment c -> p and penalizes every point q
whose foreground probability dips below the endpoint's:

    penalty(p) = sum_q max(0, y_p - y_q) / len(segment)

which is zero exactly when the prediction is star-shaped about c along the
sampled rays. Total loss is alpha * L_ce + beta * L_con.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import softmax2

ALPHA_DEFAULT = 1.0
BETA_DEFAULT = 0.12
SAMPLES_PER_ROI = 4
N_ROIS = 8


@dataclass
class RegionMap:
    """Object center plus the interior pixels sampled from its 8 octants."""

    center: tuple[int, int]
    samples: np.ndarray  # (n, 2) row/col indices
    sector_of: np.ndarray  # (n,) octant index of each sample

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int64).reshape(-1, 2)


def region_map(truth_mask, rng_seed=0, samples_per_roi=SAMPLES_PER_ROI):
    """Build the region map of a binary mask: centroid + stratified octant samples."""
    mask = np.asarray(truth_mask) > 0.5
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("region map needs a non-empty foreground")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    cr, cc = int(round(rows.mean())), int(round(cols.mean()))
    if not mask[cr, cc]:
        # snap the centroid to the nearest foreground pixel
        d2 = (rows - cr) ** 2 + (cols - cc) ** 2
        k = int(np.argmin(d2))
        cr, cc = int(rows[k]), int(cols[k])
    theta = np.arctan2(rows - cr, cols - cc)
    sectors = np.floor((theta + np.pi) / (np.pi / 4)).astype(int) % N_ROIS
    picked, picked_sectors = [], []
    for s in range(N_ROIS):
        idx = np.nonzero(sectors == s)[0]
        if idx.size == 0:
            continue
        take = rng.choice(idx, size=min(samples_per_roi, idx.size), replace=False)
        for k in take:
            picked.append((rows[k], cols[k]))
            picked_sectors.append(s)
    return RegionMap(center=(cr, cc), samples=np.array(picked),
                     sector_of=np.array(picked_sectors))


def _segment_points(c, p):
    """Unit-step rasterization of the segment c -> p (both endpoints included)."""
    steps = int(max(abs(p[0] - c[0]), abs(p[1] - c[1])))
    if steps == 0:
        return np.array([c], dtype=np.int64)
    t = np.arange(steps + 1) / steps
    rr = np.rint(c[0] + t * (p[0] - c[0])).astype(np.int64)
    cc = np.rint(c[1] + t * (p[1] - c[1])).astype(np.int64)
    return np.stack([rr, cc], axis=1)


def _check_region(truth, region):
    if not (np.asarray(truth) > 0.5)[region.center]:
        raise ValueError("region center must lie inside the truth foreground")


def convex_shape_loss(prob_fg, region, grad=None):
    """L_con and, when grad is given, its accumulation into d/d prob_fg."""
    total = 0.0
    n = len(region.samples)
    if n == 0:
        return 0.0
    for p in region.samples:
        seg = _segment_points(region.center, tuple(p))
        yq = prob_fg[seg[:, 0], seg[:, 1]]
        yp = prob_fg[p[0], p[1]]
        diff = yp - yq
        active = diff > 0
        total += diff[active].sum() / len(seg)
        if grad is not None and active.any():
            w = 1.0 / (len(seg) * n)
            grad[p[0], p[1]] += active.sum() * w
            np.subtract.at(grad, (seg[active, 0], seg[active, 1]), w)
    return total / n


def cross_entropy(prob_fg, truth):
    t = (np.asarray(truth) > 0.5).astype(np.float64)
    p = np.clip(prob_fg, 1e-12, 1 - 1e-12)
    return float(-(t * np.log(p) + (1 - t) * np.log(1 - p)).mean())


def loss(pred_probs, truth, region, alpha=ALPHA_DEFAULT, beta=BETA_DEFAULT):
    """(total, l_ce, l_con) evaluated on a probability map."""
    if pred_probs.shape != np.asarray(truth).shape:
        raise ValueError("prediction and truth shapes must match")
    _check_region(truth, region)
    l_ce = cross_entropy(pred_probs, truth)
    l_con = convex_shape_loss(np.asarray(pred_probs, dtype=np.float64), region)
    return alpha * l_ce + beta * l_con, l_ce, l_con


def loss_and_grad(logits, truth, region, alpha=ALPHA_DEFAULT, beta=BETA_DEFAULT):
    """(total, l_ce, l_con, dlogits) for a (H, W, 2) logit map.

    The cross-entropy path is the usual softmax gradient; the shape path
    chains d/d prob_fg through the 2-class softmax jacobian.
    """
    truth_b = np.asarray(truth) > 0.5
    if logits.shape[:2] != truth_b.shape:
        raise ValueError("logit and truth shapes must match")
    if region is not None:
        _check_region(truth_b, region)
    probs = softmax2(np.asarray(logits, dtype=np.float64))
    p_fg = probs[:, :, 1]
    n_px = truth_b.size

    l_ce = float(-(np.where(truth_b, np.log(np.clip(p_fg, 1e-300, None)),
                            np.log(np.clip(1 - p_fg, 1e-300, None)))).mean())
    dlogits = probs.copy()
    dlogits[:, :, 1] -= truth_b
    dlogits[:, :, 0] -= ~truth_b
    dlogits *= alpha / n_px

    l_con = 0.0
    if region is not None:
        dp = np.zeros_like(p_fg)
        l_con = convex_shape_loss(p_fg, region, grad=dp)
        jac = p_fg * probs[:, :, 0]  # d p_fg / d logit_fg = -d p_fg / d logit_bg
        dlogits[:, :, 1] += beta * dp * jac
        dlogits[:, :, 0] -= beta * dp * jac
    total = alpha * l_ce + beta * l_con
    return total, l_ce, l_con, dlogits.astype(logits.dtype)
