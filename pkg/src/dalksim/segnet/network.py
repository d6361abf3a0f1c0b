"""Compact 2-level encoder/decoder segmentation network for cornea masks.

Encoder channels 8 -> 16 with two 3x3 convs per level and 2x2 max pooling,
a dropout(0.5) bottleneck, a mirrored decoder with nearest-neighbor
upsampling and skip concatenation, and a final 1x1 conv to two logits
(cornea vs background). Needle reflections are background: the needle depth
comes from the fixed fiber-to-tip offset, not from segmentation.

Input frames are standardized, clipped to [-3, 4], mapped linearly onto
[0, 1] and symmetric-padded by 8 on every side (1024x48 -> 1040x64); the
forward pass crops the padding back off the output.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .. import dsp
from .layers import Conv2D, Dropout, MaxPool2, ReLU, UpsampleNearest2, softmax2

PAD = 8
CLIP_LO, CLIP_HI = -3.0, 4.0

WEIGHTS_MAGIC = b"TSUW"
WEIGHTS_VERSION = 1


def preprocess(mscan, pad=PAD):
    """Standardize, clip to [-3, 4], rescale to [0, 1], symmetric-pad."""
    pixels = mscan.pixels if isinstance(mscan, dsp.MScan) else np.asarray(mscan, dtype=np.float64)
    std = pixels.std()
    if std <= 1e-12 * (abs(pixels.mean()) + 1.0):  # constant frame
        scaled = np.full_like(pixels, 0.5, dtype=np.float64)
    else:
        z = (pixels - pixels.mean()) / std
        scaled = (np.clip(z, CLIP_LO, CLIP_HI) - CLIP_LO) / (CLIP_HI - CLIP_LO)
    return np.pad(scaled, pad, mode="symmetric")


class SegNet:
    """Two-level U-shaped network operating on one padded frame at a time."""

    def __init__(self, seed=0, base_channels=8, bottleneck_channels=32,
                 dropout_rate=0.5, dtype=np.float32):
        # float32 in production; gradient checks build float64 instances
        rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.base_channels = base_channels
        self.bottleneck_channels = bottleneck_channels
        self.dropout_rate = dropout_rate
        c1, c2, cb = base_channels, base_channels * 2, bottleneck_channels

        def conv(ci, co, k=3):
            return Conv2D(ci, co, ksize=k, rng=rng, dtype=dtype)

        self.enc1a, self.enc1b = conv(1, c1), conv(c1, c1)
        self.enc2a, self.enc2b = conv(c1, c2), conv(c2, c2)
        self.bot_a, self.bot_b = conv(c2, cb), conv(cb, cb)
        self.dropout = Dropout(dropout_rate)
        self.dec2a, self.dec2b = conv(cb + c2, c2), conv(c2, c2)
        self.dec1a, self.dec1b = conv(c2 + c1, c1), conv(c1, c1)
        self.head = conv(c1, 2, k=1)
        self.pool1, self.pool2 = MaxPool2(), MaxPool2()
        self.up2, self.up1 = UpsampleNearest2(), UpsampleNearest2()
        self.acts = {name: ReLU() for name in
                     ("enc1a", "enc1b", "enc2a", "enc2b", "bot_a", "bot_b",
                      "dec2a", "dec2b", "dec1a", "dec1b")}

    # -- plumbing -------------------------------------------------------------

    def conv_layers(self):
        return [("enc1a", self.enc1a), ("enc1b", self.enc1b),
                ("enc2a", self.enc2a), ("enc2b", self.enc2b),
                ("bot_a", self.bot_a), ("bot_b", self.bot_b),
                ("dec2a", self.dec2a), ("dec2b", self.dec2b),
                ("dec1a", self.dec1a), ("dec1b", self.dec1b),
                ("head", self.head)]

    def parameters(self):
        out = []
        for lname, layer in self.conv_layers():
            for pname, p, g in layer.params():
                out.append((f"{lname}.{pname}", p, g))
        return out

    # -- forward / backward ----------------------------------------------------

    def forward_logits(self, padded, train_mode=False, rng=None):
        """Logits over the padded tensor; caches everything needed for backward."""
        x = padded[:, :, None].astype(self.dtype)
        if x.shape[0] % 4 or x.shape[1] % 4:
            raise ValueError("padded input sides must be divisible by 4")
        act = self.acts
        a = act["enc1a"].forward(self.enc1a.forward(x))
        a = act["enc1b"].forward(self.enc1b.forward(a))
        p1 = self.pool1.forward(a)
        b = act["enc2a"].forward(self.enc2a.forward(p1))
        b = act["enc2b"].forward(self.enc2b.forward(b))
        p2 = self.pool2.forward(b)
        c = act["bot_a"].forward(self.bot_a.forward(p2))
        c = act["bot_b"].forward(self.bot_b.forward(c))
        c = self.dropout.forward(c, train_mode=train_mode, rng=rng)
        u2 = self.up2.forward(c)
        d = act["dec2a"].forward(self.dec2a.forward(np.concatenate([u2, b], axis=2)))
        d = act["dec2b"].forward(self.dec2b.forward(d))
        u1 = self.up1.forward(d)
        e = act["dec1a"].forward(self.dec1a.forward(np.concatenate([u1, a], axis=2)))
        e = act["dec1b"].forward(self.dec1b.forward(e))
        self._skip_channels = (u2.shape[2], u1.shape[2])
        return self.head.forward(e)

    def backward(self, dlogits):
        act = self.acts
        de = self.head.backward(dlogits)
        de = self.dec1a.backward(act["dec1a"].backward(
            self.dec1b.backward(act["dec1b"].backward(de))))
        cb, c1 = self._skip_channels[1], None
        du1, da_skip = de[:, :, :cb], de[:, :, cb:]
        dd = self.up1.backward(du1)
        dd = self.dec2a.backward(act["dec2a"].backward(
            self.dec2b.backward(act["dec2b"].backward(dd))))
        cb2 = self._skip_channels[0]
        du2, db_skip = dd[:, :, :cb2], dd[:, :, cb2:]
        dc = self.dropout.backward(self.up2.backward(du2))
        dc = self.bot_a.backward(act["bot_a"].backward(
            self.bot_b.backward(act["bot_b"].backward(dc))))
        db = self.pool2.backward(dc) + db_skip
        db = self.enc2a.backward(act["enc2a"].backward(
            self.enc2b.backward(act["enc2b"].backward(db))))
        da = self.pool1.backward(db) + da_skip
        da = self.enc1a.backward(act["enc1a"].backward(
            self.enc1b.backward(act["enc1b"].backward(da))))
        return da[:, :, 0]

    def forward(self, padded, train_mode=False, rng=None, pad=PAD):
        """Foreground probability map with the padding cropped off."""
        logits = self.forward_logits(padded, train_mode=train_mode, rng=rng)
        probs = softmax2(logits.astype(np.float64))[:, :, 1]
        return probs[pad:-pad, pad:-pad] if pad else probs

    # -- weights file -----------------------------------------------------------

    def save(self, path):
        spec = {
            "base_channels": self.base_channels,
            "bottleneck_channels": self.bottleneck_channels,
            "dropout_rate": self.dropout_rate,
            "tensors": [[name, list(p.shape)] for name, p, _ in self.parameters()],
        }
        blob = json.dumps(spec).encode()
        with open(path, "wb") as fh:
            fh.write(WEIGHTS_MAGIC)
            fh.write(struct.pack("<HI", WEIGHTS_VERSION, len(blob)))
            fh.write(blob)
            for _, p, _ in self.parameters():
                fh.write(p.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(4) != WEIGHTS_MAGIC:
                raise ValueError("bad weights magic")
            version, spec_len = struct.unpack("<HI", fh.read(6))
            if version != WEIGHTS_VERSION:
                raise ValueError(f"unsupported weights version {version}")
            spec = json.loads(fh.read(spec_len).decode())
            net = cls(
                base_channels=spec["base_channels"],
                bottleneck_channels=spec["bottleneck_channels"],
                dropout_rate=spec["dropout_rate"],
            )
            for (name, shape), (pname, p, _) in zip(spec["tensors"], net.parameters()):
                if name != pname or list(p.shape) != shape:
                    raise ValueError(f"weights file does not match architecture at {pname}")
                raw = fh.read(int(np.prod(shape)) * 4)
                p[...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
        return net
