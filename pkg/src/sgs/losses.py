"""Training losses and the weighted total objective.

The adversarial term is sigmoid binary cross-entropy over patch logits
(at all-zero logits the discriminator loss is exactly 2*ln 2 and the
generator loss ln 2).  Content is mean absolute error.  Perceptual and
parsing terms run both images through small *fixed* seeded conv stacks:
a two-tap feature extractor standing in for a pretrained backbone, and a
twelve-class soft parser standing in for a pretrained face parser.  The
graph terms come from :mod:`sgs.graphs`.  All reductions over feature
elements use means so the default weights transfer across image sizes.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .layout import N_CLASSES
from .numerics import (
    ShapeError,
    Tensor,
    avg_pool2d,
    clip,
    conv2d,
    log,
    relu,
    softmax,
    softplus,
)

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the non-adversarial objective terms."""

    content: float = 100.0
    perceptual: float = 10.0
    parsing: float = 15.0
    intra_graph: float = 100.0
    inter_graph: float = 100.0
    cycle: float = 5.0

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")
        return self


def _he_conv(rng, cout, cin, k):
    std = np.sqrt(2.0 / (cin * k * k))
    w = Tensor(rng.normal(0.0, std, size=(cout, cin, k, k)))
    b = Tensor(np.zeros(cout))
    return w, b


class FeatureExtractor:
    """Fixed seeded two-stage conv stack with a tap after each pooling.

    The weights are drawn once from the seed and never trained; the
    taps give low- and mid-frequency summaries of an image, and the
    second tap doubles as the embedding for distribution metrics (after
    global average pooling).
    """

    def __init__(self, in_channels, seed, widths=(8, 16)):
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.seed = seed
        self.w1, self.b1 = _he_conv(rng, widths[0], in_channels, 3)
        self.w2, self.b2 = _he_conv(rng, widths[1], widths[0], 3)

    def features(self, img):
        """Taps of ``img`` ([C, H, W], H and W divisible by 4)."""
        if img.data.ndim != 3 or img.data.shape[0] != self.in_channels:
            raise ShapeError(
                f"extractor expects [{self.in_channels}, H, W], got {img.data.shape}"
            )
        h = relu(conv2d(img.reshape((1,) + img.data.shape), self.w1, self.b1,
                        stride=1, padding=1))
        t1 = avg_pool2d(h, 2)
        h = relu(conv2d(t1, self.w2, self.b2, stride=1, padding=1))
        t2 = avg_pool2d(h, 2)
        return t1, t2

    def embed(self, img):
        """Deterministic embedding vector: second tap, globally pooled."""
        img_t = img if isinstance(img, Tensor) else Tensor(img)
        _, t2 = self.features(img_t.detach())
        return t2.data.mean(axis=(2, 3)).ravel()


class ParsingOracle:
    """Fixed seeded conv stack ending in a per-pixel 12-class softmax."""

    def __init__(self, in_channels, seed, hidden=16):
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.seed = seed
        self.w1, self.b1 = _he_conv(rng, hidden, in_channels, 3)
        self.w2, self.b2 = _he_conv(rng, N_CLASSES, hidden, 3)

    def probs(self, img):
        """Soft class assignment [1, 12, H, W]; sums to one per pixel."""
        if img.data.ndim != 3 or img.data.shape[0] != self.in_channels:
            raise ShapeError(
                f"parser expects [{self.in_channels}, H, W], got {img.data.shape}"
            )
        h = relu(conv2d(img.reshape((1,) + img.data.shape), self.w1, self.b1,
                        stride=1, padding=1))
        logits = conv2d(h, self.w2, self.b2, stride=1, padding=1)
        return softmax(logits, axis=1)


def adversarial_losses(d, source, m, y_real, y_fake, mode="bce"):
    """(discriminator loss, generator loss) for one sample.

    The fake is detached inside the discriminator loss so its gradients
    touch only the discriminator; the generator loss sees the live fake.
    ``mode="lsgan"`` swaps in least-squares targets on the raw logits.
    """
    real_logits = d.forward(source, m, y_real)
    fake_logits_d = d.forward(source, m, y_fake.detach())
    fake_logits_g = d.forward(source, m, y_fake)
    if mode == "bce":
        loss_d = softplus(-real_logits).mean() + softplus(fake_logits_d).mean()
        loss_g = softplus(-fake_logits_g).mean()
    elif mode == "lsgan":
        loss_d = ((real_logits - 1.0) * (real_logits - 1.0)).mean() \
            + (fake_logits_d * fake_logits_d).mean()
        loss_g = ((fake_logits_g - 1.0) * (fake_logits_g - 1.0)).mean()
    else:
        raise ValueError(f"unknown adversarial mode {mode!r}")
    return loss_d, loss_g


def content_loss(y_real, y_fake):
    """Mean absolute difference between target and synthesized images."""
    if y_real.data.shape != y_fake.data.shape:
        raise ShapeError(
            f"content loss shapes differ: {y_real.data.shape} vs {y_fake.data.shape}"
        )
    return (y_real - y_fake).abs().mean()


def tap_mse(real_taps, fake_taps):
    """Sum over tap pairs of the mean squared feature difference."""
    total = None
    for a, b in zip(real_taps, fake_taps):
        d = a - b
        term = (d * d).mean()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("tap_mse needs at least one tap pair")
    return total


def tap_l1(real_taps, fake_taps, names):
    """Sum over named taps of the mean absolute activation difference.

    ``real_taps``/``fake_taps`` are name -> Tensor dicts; the real side
    is detached so gradients only reach the fake branch.
    """
    if not names:
        raise ValueError("tap_l1 needs at least one tap name")
    total = None
    for name in names:
        if name not in real_taps or name not in fake_taps:
            raise KeyError(f"tap {name!r} not produced by the generator")
        term = (fake_taps[name] - real_taps[name].detach()).abs().mean()
        total = term if total is None else total + term
    return total


def perceptual_loss(extractor, y_real, y_fake):
    """Sum over both taps of the mean squared feature difference."""
    return tap_mse(extractor.features(y_real), extractor.features(y_fake))


def binary_cross_entropy(target_probs, probs):
    """Elementwise-mean BCE of ``probs`` against (constant) target probs.

    Probabilities are clamped away from {0, 1} before the logs, so exact
    one-hot inputs evaluate to exactly zero loss against themselves.
    """
    if target_probs.data.shape != probs.data.shape:
        raise ShapeError(
            f"BCE shapes differ: {target_probs.data.shape} vs {probs.data.shape}"
        )
    p = target_probs.detach()
    pos = p * log(clip(probs, PROB_EPS, 1.0))
    neg = (1.0 - p) * log(clip(1.0 - probs, PROB_EPS, 1.0))
    return -(pos + neg).mean()


def parsing_loss(oracle, y_real, y_fake):
    """BCE between the parser's soft maps of target and synthesized images."""
    return binary_cross_entropy(oracle.probs(y_real), oracle.probs(y_fake))


def total_objective(adversarial, content, perceptual, parsing, intra, inter,
                    cycle, weights):
    """Weighted sum of all generator-side terms."""
    weights.validate()
    return (
        adversarial
        + weights.content * content
        + weights.perceptual * perceptual
        + weights.parsing * parsing
        + weights.intra_graph * intra
        + weights.inter_graph * inter
        + weights.cycle * cycle
    )


LOSS_CSV_COLUMNS = (
    "step", "l_gan_d", "l_gan_g", "l_content", "l_perc", "l_bce",
    "l_iag", "l_itg", "l_ict", "l_total",
)


class LossLog:
    """Append-only CSV log of per-step loss components."""

    def __init__(self, path):
        self.path = path
        with open(path, "w", encoding="utf-8") as f:
            f.write(",".join(LOSS_CSV_COLUMNS) + "\n")

    def append(self, step, values):
        row = [str(int(step))]
        for key in LOSS_CSV_COLUMNS[1:]:
            row.append(repr(float(values[key])))
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(",".join(row) + "\n")
