"""Central finite-difference checks for every layer type and the composite loss."""

import numpy as np

from dalksim.segnet.layers import Conv2D, Dropout, MaxPool2, ReLU, UpsampleNearest2
from dalksim.segnet.loss import loss_and_grad, region_map
from dalksim.segnet.network import SegNet

H = 1e-6


def numeric_grad(f, x, h=H):
    g = np.zeros_like(x)
    flat, gflat = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return g


def rel_err(a, b):
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else np.linalg.norm(a - b) / denom


def scalarize(y, weights):
    return float((y * weights).sum())


def check_layer_input_grad(layer, x, **fwd_kw):
    rng = np.random.default_rng(1)
    weights = rng.normal(size=layer.forward(x.copy(), **fwd_kw).shape)
    analytic = layer.backward(weights.copy())
    numeric = numeric_grad(lambda: scalarize(layer.forward(x, **fwd_kw), weights), x)
    assert rel_err(analytic, numeric) < 1e-7


def test_conv_gradients():
    rng = np.random.default_rng(0)
    layer = Conv2D(3, 4, ksize=3, rng=rng, dtype=np.float64)
    x = rng.normal(size=(10, 8, 3))
    check_layer_input_grad(layer, x)
    weights = np.random.default_rng(1).normal(size=(10, 8, 4))
    layer.forward(x)
    layer.backward(weights)
    for _, p, g in layer.params():
        numeric = numeric_grad(lambda: scalarize(layer.forward(x), weights), p)
        assert rel_err(g, numeric) < 1e-7


def test_conv_1x1_gradients():
    rng = np.random.default_rng(2)
    layer = Conv2D(4, 2, ksize=1, rng=rng, dtype=np.float64)
    x = rng.normal(size=(6, 6, 4))
    check_layer_input_grad(layer, x)


def test_relu_gradient():
    x = np.random.default_rng(3).normal(size=(8, 8, 2)) + 0.05
    check_layer_input_grad(ReLU(), x)


def test_maxpool_gradient():
    x = np.random.default_rng(4).normal(size=(8, 6, 3))
    check_layer_input_grad(MaxPool2(), x)


def test_upsample_gradient():
    x = np.random.default_rng(5).normal(size=(5, 4, 2))
    check_layer_input_grad(UpsampleNearest2(), x)


def test_dropout_gradient_with_frozen_mask():
    x = np.random.default_rng(6).normal(size=(8, 8, 2))
    layer = Dropout(0.5)
    layer.forward(x.copy(), train_mode=True, rng=np.random.default_rng(7))
    mask = layer._mask

    class Frozen(Dropout):
        def forward(self, xx, train_mode=False, rng=None):
            self._mask = mask
            return xx * mask

    check_layer_input_grad(Frozen(0.5), x)


def test_dropout_seeded_masks_repeat():
    x = np.ones((16, 16, 4))
    layer = Dropout(0.5)
    a = layer.forward(x, train_mode=True, rng=np.random.default_rng(11))
    b = layer.forward(x, train_mode=True, rng=np.random.default_rng(11))
    assert np.array_equal(a, b)


def test_softmax_cross_entropy_and_shape_loss_gradient():
    rng = np.random.default_rng(8)
    truth = np.zeros((16, 16), dtype=bool)
    truth[4:12, 3:13] = True
    region = region_map(truth, rng_seed=9)
    logits = rng.normal(scale=0.7, size=(16, 16, 2))
    total, l_ce, l_con, dlogits = loss_and_grad(logits, truth, region)
    assert l_con > 0  # random logits are not star-shaped
    numeric = numeric_grad(lambda: loss_and_grad(logits, truth, region)[0], logits)
    assert rel_err(dlogits, numeric) < 1e-6


def test_full_network_gradient_on_16x16_crop():
    """End-to-end check: d(alpha*L_ce + beta*L_con)/d(theta) for every tensor."""
    rng = np.random.default_rng(10)
    net = SegNet(seed=12, base_channels=3, bottleneck_channels=4, dtype=np.float64)
    x = rng.normal(size=(16, 16))
    truth = np.zeros((16, 16), dtype=bool)
    truth[5:12, 4:12] = True
    region = region_map(truth, rng_seed=13)

    def objective():
        logits = net.forward_logits(x)
        return loss_and_grad(logits, truth, region)[0]

    logits = net.forward_logits(x)
    total, _, _, dlogits = loss_and_grad(logits, truth, region)
    net.backward(dlogits.astype(np.float64))
    for name, p, g in net.parameters():
        idx = np.unravel_index(
            np.random.default_rng(hash(name) % 2**32).choice(p.size, size=min(6, p.size),
                                                             replace=False), p.shape)
        numeric = np.zeros(len(idx[0]))
        analytic = g[idx]
        for k in range(len(idx[0])):
            sel = tuple(ax[k] for ax in idx)
            orig = p[sel]
            p[sel] = orig + H
            hi = objective()
            p[sel] = orig - H
            lo = objective()
            p[sel] = orig
            numeric[k] = (hi - lo) / (2 * H)
        err = rel_err(analytic, numeric)
        assert err < 1e-4, f"{name}: rel err {err}"
