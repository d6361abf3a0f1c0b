import numpy as np
import pytest

from dalksim.segnet import (
    PAD,
    RegionMap,
    SegNet,
    TrainConfig,
    TrainSample,
    convex_shape_loss,
    grouped_folds,
    load_dataset,
    loss,
    preprocess,
    region_map,
    train_single,
    write_manifest,
)
from dalksim.segnet.train import train


def test_preprocess_shape_and_padding():
    out = preprocess(np.random.default_rng(0).random((1024, 48)))
    assert out.shape == (1040, 64)


def test_preprocess_linear_map_hand_values():
    # half -1, half +1: mean 0, std 1; no clipping, so the map is (v+3)/7
    frame = np.ones((64, 48))
    frame[:32] = -1.0
    out = preprocess(frame, pad=0)
    assert set(np.round(np.unique(out), 12)) == {round(2 / 7, 12), round(4 / 7, 12)}


def test_preprocess_clips_outliers_to_unit_range():
    rng = np.random.default_rng(1)
    frame = rng.normal(size=(256, 48))
    frame[0, 0] = 1e6  # far beyond +4 sigma
    frame[0, 1] = -1e6
    out = preprocess(frame, pad=0)
    assert out[0, 0] == 1.0
    assert out[0, 1] == 0.0
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_preprocess_constant_frame_maps_to_half():
    out = preprocess(np.full((1024, 48), 3.7))
    assert np.all(out == 0.5)


def test_zero_weights_give_uniform_half_probability():
    net = SegNet(seed=0, base_channels=2, bottleneck_channels=2)
    for _, p, _ in net.parameters():
        p[...] = 0.0
    prob = net.forward(np.random.default_rng(2).random((64, 64)), pad=PAD)
    assert np.allclose(prob, 0.5)


def test_forward_output_is_cropped_to_frame_size():
    net = SegNet(seed=0, base_channels=2, bottleneck_channels=2)
    prob = net.forward(preprocess(np.random.default_rng(3).random((1024, 48))))
    assert prob.shape == (1024, 48)
    assert prob.min() >= 0.0 and prob.max() <= 1.0


def test_seeded_dropout_forward_is_repeatable():
    net = SegNet(seed=4, base_channels=2, bottleneck_channels=2)
    x = np.random.default_rng(5).random((64, 64))
    a = net.forward(x, train_mode=True, rng=np.random.default_rng(9))
    b = net.forward(x, train_mode=True, rng=np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_forward_shift_equivariance_in_interior():
    net = SegNet(seed=6, base_channels=4, bottleneck_channels=8)
    rng = np.random.default_rng(7)
    x = rng.random((128, 64))
    shift = 4  # multiple of the total pooling stride
    x_shifted = np.roll(x, shift, axis=0)
    y = net.forward(x, pad=0)
    y_shifted = net.forward(x_shifted, pad=0)
    margin = 40
    a = y[margin:-margin - shift]
    b = y_shifted[margin + shift:-margin]
    assert np.allclose(a, b, atol=1e-5)


def test_weights_roundtrip(tmp_path):
    net = SegNet(seed=8, base_channels=4, bottleneck_channels=8)
    x = np.random.default_rng(9).random((64, 64))
    path = str(tmp_path / "net.weights")
    net.save(path)
    loaded = SegNet.load(path)
    assert np.allclose(net.forward(x), loaded.forward(x))


# -- region map and shape loss ----------------------------------------------------


def star_mask(rng, size=48):
    """Random mask that is star-shaped about its center in the discrete sense:
    the rasterized segment from the center to any foreground pixel stays
    inside the foreground (enforced by removing violators to a fixpoint)."""
    from dalksim.segnet.loss import _segment_points

    c = (size // 2 + int(rng.integers(-4, 5)), size // 2 + int(rng.integers(-4, 5)))
    radii = rng.uniform(5.0, 16.0, 16)
    rows, cols = np.mgrid[0:size, 0:size]
    theta = np.arctan2(rows - c[0], cols - c[1])
    k = ((theta + np.pi) / (2 * np.pi) * 16).astype(int) % 16
    dist = np.hypot(rows - c[0], cols - c[1])
    mask = dist <= radii[k]
    mask[c] = True
    while True:
        keep = mask.copy()
        for r, cc in zip(*np.nonzero(mask)):
            seg = _segment_points(c, (r, cc))
            if not mask[seg[:, 0], seg[:, 1]].all():
                keep[r, cc] = False
        if np.array_equal(keep, mask):
            break
        mask = keep
    return mask.astype(float), c


def test_shape_loss_zero_on_star_shaped_predictions():
    rng = np.random.default_rng(10)
    for _ in range(50):
        mask, c = star_mask(rng)
        rows, cols = np.nonzero(mask)
        take = rng.choice(rows.size, size=min(32, rows.size), replace=False)
        region = RegionMap(center=c, samples=np.stack([rows[take], cols[take]], axis=1),
                           sector_of=np.zeros(take.size, dtype=int))
        assert convex_shape_loss(mask, region) == 0.0


def test_shape_loss_positive_with_interior_hole():
    truth = np.zeros((32, 32))
    truth[8:24, 8:24] = 1.0
    region = region_map(truth, rng_seed=11)
    pred = truth.copy()
    pred[12:14, 12:14] = 0.0  # hole between center and the outer interior
    assert convex_shape_loss(pred, region) > 0.0


def test_loss_op_on_perfect_star_convex_prediction():
    truth = np.zeros((32, 32))
    truth[10:22, 6:26] = 1.0
    region = region_map(truth, rng_seed=12)
    total, l_ce, l_con = loss(np.clip(truth, 1e-9, 1 - 1e-9), truth, region)
    assert l_con == 0.0
    assert l_ce < 1e-6


def test_loss_rejects_center_outside_foreground():
    truth = np.zeros((16, 16))
    truth[2:6, 2:6] = 1.0
    region = RegionMap(center=(12, 12), samples=np.array([[3, 3]]),
                       sector_of=np.array([0]))
    with pytest.raises(ValueError):
        loss(truth, truth, region)


def test_region_map_requires_foreground():
    with pytest.raises(ValueError):
        region_map(np.zeros((8, 8)))


# -- training ------------------------------------------------------------------


def tiny_band_samples(n_phantoms, frames_each, rng, height=64):
    samples = []
    for p in range(n_phantoms):
        top = int(rng.integers(12, 28))
        bottom = top + int(rng.integers(12, 24))
        for _ in range(frames_each):
            mask = np.zeros((height, 48))
            mask[top:bottom + 1] = 1.0
            pixels = mask * rng.uniform(3.0, 5.0) + rng.normal(0, 0.2, (height, 48))
            samples.append(TrainSample(pixels=pixels, mask=mask,
                                       phantom_id=f"p{p}"))
    return samples


def tiny_cfg(**kw):
    base = dict(seed=1, epochs=2, lr=0.02, crop_height=64, crops_per_frame=1,
                base_channels=2, bottleneck_channels=4, warmup_steps=5, batch=2)
    base.update(kw)
    return TrainConfig(**base)


def test_grouped_folds_hold_out_whole_phantoms():
    ids = [f"p{k}" for k in range(10) for _ in range(3)]
    folds = grouped_folds(ids, 5, seed=2)
    assert len(folds) == 5
    seen = set()
    for train_ids, test_ids in folds:
        assert len(test_ids) == 2
        assert not train_ids & test_ids
        seen |= test_ids
    assert seen == set(f"p{k}" for k in range(10))


def test_grouped_folds_reject_too_few_phantoms():
    with pytest.raises(ValueError):
        grouped_folds(["a", "b", "c"], 5)


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(13)
    samples = tiny_band_samples(3, 3, rng)
    net1, loss1 = train_single(samples, tiny_cfg())
    net2, loss2 = train_single(samples, tiny_cfg())
    assert loss1 == loss2
    for (n1, p1, _), (n2, p2, _) in zip(net1.parameters(), net2.parameters()):
        assert n1 == n2
        assert np.array_equal(p1, p2)


def test_loss_moving_average_non_increasing_over_ten_epochs():
    rng = np.random.default_rng(14)
    samples = tiny_band_samples(5, 10, rng)  # 50-frame synthetic set
    _, losses = train_single(samples, tiny_cfg(epochs=10))
    ma = np.convolve(losses, np.ones(3) / 3, mode="valid")
    assert all(ma[i + 1] <= ma[i] + 1e-3 for i in range(len(ma) - 1))
    assert losses[-1] < losses[0]


def test_train_reports_fold_metrics():
    rng = np.random.default_rng(15)
    samples = tiny_band_samples(4, 3, rng)
    result = train(samples, tiny_cfg(folds=2))
    assert len(result.nets) == 2
    assert all(m.n_test > 0 for m in result.metrics)


def test_manifest_roundtrip(tmp_path):
    import dalksim.dsp as dsp
    from dalksim.segnet import read_manifest

    rng = np.random.default_rng(16)
    frame = rng.random((1024, 48)).astype(np.float32)
    mask = (rng.random((1024, 48)) > 0.5).astype(np.uint8)
    fpath, mpath = tmp_path / "f0.mscn", tmp_path / "m0.npy"
    dsp.write_mscan_fixture(str(fpath), dsp.MScan(pixels=frame), dsp.DepthAxis())
    np.save(mpath, mask)
    manifest = tmp_path / "manifest.tsv"
    write_manifest(str(manifest), [("pA", "f0.mscn", "m0.npy")])
    assert read_manifest(str(manifest)) == [("pA", "f0.mscn", "m0.npy")]
    samples = load_dataset(str(manifest))
    assert samples[0].phantom_id == "pA"
    assert np.array_equal(samples[0].mask, mask)
    assert np.allclose(samples[0].pixels, frame)
