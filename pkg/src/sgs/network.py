"""Statistics-injection generator and patch discriminator.

The generator is an encoder of strided 4x4 convolutions followed by a
decoder of residual blocks, each preceded by nearest-neighbor x2
upsampling.  Every decoder block re-injects the semantic layout through
statistics-injection (SI) modules: the one-hot layout, downsampled to
the block's working resolution, is mapped by a small conv stack to a
gamma and beta field that multiply and shift the instance-normalized
activation.  The discriminator is a standard patch classifier over the
channel-concatenated (source, saliency, candidate) stack.
"""
from __future__ import annotations

import numpy as np

from .layout import N_CLASSES, downsample_layout
from .numerics import (
    Parameter,
    ShapeError,
    Tensor,
    concat,
    conv2d,
    leaky_relu,
    normalize,
    relu,
    tanh,
    upsample_nearest,
)

WEIGHT_STD = 0.02


class Module:
    """Tiny container base: parameter discovery, freezing, grad reset."""

    def named_params(self, prefix=""):
        out = []
        for attr, val in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(val, Parameter):
                out.append((path, val))
            elif isinstance(val, Module):
                out.extend(val.named_params(path + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Parameter):
                        out.append((f"{path}.{i}", item))
                    elif isinstance(item, Module):
                        out.extend(item.named_params(f"{path}.{i}."))
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def freeze(self):
        """Stop recording gradients into these parameters.

        Gradients still flow *through* frozen modules to their inputs,
        which is exactly what distillation through a fixed opposite
        generator needs.
        """
        for p in self.params():
            p.requires_grad = False


def _conv_params(rng, cout, cin, k):
    w = Parameter(rng.normal(0.0, WEIGHT_STD, size=(cout, cin, k, k)))
    b = Parameter(np.zeros(cout))
    return w, b


class SIModule(Module):
    """Layout-conditioned modulation of a normalized activation.

    A shared 3x3 convolution over the one-hot layout feeds two 3x3
    heads producing gamma and beta; the output is
    ``gamma * normalize(x) + beta`` (the modulation is applied exactly
    in this form, with no residual 1+gamma variant).
    """

    def __init__(self, channels, rng, hidden=32, eps=1e-5, stats="instance"):
        self.channels = channels
        self.eps = eps
        self.stats = stats
        self.shared_w, self.shared_b = _conv_params(rng, hidden, N_CLASSES, 3)
        self.gamma_w, self.gamma_b = _conv_params(rng, channels, hidden, 3)
        self.beta_w, self.beta_b = _conv_params(rng, channels, hidden, 3)

    def forward(self, x, layout_planes):
        """``x`` is [N, C, h, w]; ``layout_planes`` is [N, 12, h, w]."""
        if x.data.shape[1] != self.channels:
            raise ShapeError(f"SI module built for {self.channels} channels, got {x.data.shape}")
        if layout_planes.data.shape[-2:] != x.data.shape[-2:]:
            raise ShapeError(
                f"layout resolution {layout_planes.data.shape[-2:]} does not match "
                f"activation {x.data.shape[-2:]}"
            )
        h = relu(conv2d(layout_planes, self.shared_w, self.shared_b, stride=1, padding=1))
        gamma = conv2d(h, self.gamma_w, self.gamma_b, stride=1, padding=1)
        beta = conv2d(h, self.beta_w, self.beta_b, stride=1, padding=1)
        return gamma * normalize(x, eps=self.eps, stats=self.stats) + beta


class SIResBlock(Module):
    """Residual block with two (SI -> relu -> conv) legs.

    The shortcut is the identity when channel counts match and a 1x1
    convolution otherwise.
    """

    def __init__(self, cin, cout, rng, hidden=32, eps=1e-5, stats="instance"):
        cmid = min(cin, cout)
        self.si1 = SIModule(cin, rng, hidden=hidden, eps=eps, stats=stats)
        self.conv1_w, self.conv1_b = _conv_params(rng, cmid, cin, 3)
        self.si2 = SIModule(cmid, rng, hidden=hidden, eps=eps, stats=stats)
        self.conv2_w, self.conv2_b = _conv_params(rng, cout, cmid, 3)
        if cin != cout:
            self.skip_w, self.skip_b = _conv_params(rng, cout, cin, 1)
        else:
            self.skip_w = None
            self.skip_b = None

    def forward(self, x, layout_planes):
        h = conv2d(relu(self.si1.forward(x, layout_planes)), self.conv1_w, self.conv1_b,
                   stride=1, padding=1)
        h = conv2d(relu(self.si2.forward(h, layout_planes)), self.conv2_w, self.conv2_b,
                   stride=1, padding=1)
        if self.skip_w is not None:
            return h + conv2d(x, self.skip_w, self.skip_b, stride=1, padding=0)
        return h + x


def _saliency_channel(m, h, w):
    if m is None:
        return Tensor(np.zeros((1, 1, h, w)))
    if m.values.shape != (h, w):
        raise ShapeError(f"saliency {m.values.shape} does not match image {(h, w)}")
    return Tensor(m.values[None, None, :, :])


class Generator(Module):
    """Layout-modulated encoder/decoder mapping source image -> image.

    The source image is concatenated with a saliency channel (a zero
    plane when saliency is disabled, keeping shapes fixed) and squeezed
    through ``depth`` stride-2 convolutions; the decoder mirrors with
    ``depth`` upsample + SI residual blocks and ends in a 3x3 conv and a
    tanh mapped to [0, 1].
    """

    def __init__(self, in_channels, out_channels, depth=5, base_channels=16,
                 si_hidden=32, use_saliency=True, image_size=64, seed=0,
                 stats="instance", channel_cap=8):
        if depth < 1:
            raise ShapeError(f"depth must be >= 1, got {depth}")
        if image_size % (1 << depth):
            raise ShapeError(
                f"image size {image_size} must be divisible by 2**depth = {1 << depth}"
            )
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.depth = depth
        self.base_channels = base_channels
        self.use_saliency = use_saliency
        self.image_size = image_size
        self.seed = seed

        enc_ch = [min(base_channels << i, base_channels * channel_cap) for i in range(depth)]
        self.enc_ws = []
        self.enc_bs = []
        prev = in_channels + 1
        for c in enc_ch:
            w, b = _conv_params(rng, c, prev, 4)
            self.enc_ws.append(w)
            self.enc_bs.append(b)
            prev = c

        self.blocks = []
        for j in range(depth):
            cout = enc_ch[depth - 2 - j] if j < depth - 1 else base_channels
            self.blocks.append(
                SIResBlock(prev, cout, rng, hidden=si_hidden, stats=stats)
            )
            prev = cout
        self.out_w, self.out_b = _conv_params(rng, out_channels, prev, 3)

    def forward(self, x, m, layout, want_taps=False):
        """Run ``x`` ([Cin, H, W]) through the network.

        Returns the synthesized [Cout, H, W] image, or with
        ``want_taps=True`` a ``(image, taps)`` pair where ``taps`` maps
        "enc_bottleneck" and "dec_block<i>" to their activations and
        "dec_block<i>_layout_hw" to the layout resolution each SI block
        consumed.
        """
        if x.data.ndim != 3 or x.data.shape[0] != self.in_channels:
            raise ShapeError(
                f"generator expects [{self.in_channels}, H, W] input, got {x.data.shape}"
            )
        h, w = x.data.shape[1:]
        if h % (1 << self.depth) or w % (1 << self.depth):
            raise ShapeError(
                f"input {h}x{w} must be divisible by 2**depth = {1 << self.depth}"
            )
        if (layout.height, layout.width) != (h, w):
            raise ShapeError(
                f"layout {layout.height}x{layout.width} does not match input {h}x{w}"
            )

        sal = _saliency_channel(m if self.use_saliency else None, h, w)
        z = concat([x.reshape((1,) + x.data.shape), sal], axis=1)
        for w_, b_ in zip(self.enc_ws, self.enc_bs):
            z = leaky_relu(conv2d(z, w_, b_, stride=2, padding=1), 0.2)
        taps = {"enc_bottleneck": z}

        for j, block in enumerate(self.blocks, start=1):
            z = upsample_nearest(z, 2)
            res = z.data.shape[2:]
            planes = downsample_layout(layout, h // res[0]).one_hot()
            z = block.forward(z, Tensor(planes[None, :, :, :]))
            taps[f"dec_block{j}"] = z
            taps[f"dec_block{j}_layout_hw"] = res

        out = tanh(conv2d(z, self.out_w, self.out_b, stride=1, padding=1))
        out = ((out + 1.0) * 0.5).reshape((self.out_channels, h, w))
        if want_taps:
            return out, taps
        return out


class PatchDiscriminator(Module):
    """Patch logit map over concat(source, saliency, candidate).

    Three stride-2 4x4 convolutions, then two stride-1 layers, all with
    leaky-relu(0.2); a 64x64 input yields a 6x6 logit map.  When saliency
    is disabled a zero channel is substituted so shapes stay fixed.
    """

    def __init__(self, source_channels, candidate_channels, base_channels=16,
                 use_saliency=True, seed=0, stats="instance"):
        rng = np.random.default_rng(seed)
        self.source_channels = source_channels
        self.candidate_channels = candidate_channels
        self.use_saliency = use_saliency
        self.stats = stats
        cin = source_channels + 1 + candidate_channels
        chans = [base_channels, base_channels * 2, base_channels * 4, base_channels * 8]
        self.ws = []
        self.bs = []
        prev = cin
        for c in chans:
            w, b = _conv_params(rng, c, prev, 4)
            self.ws.append(w)
            self.bs.append(b)
            prev = c
        self.final_w, self.final_b = _conv_params(rng, 1, prev, 4)

    def forward(self, source, m, candidate):
        """All images are [C, H, W]; returns the [1, 1, h', w'] logit map."""
        if source.data.shape[0] != self.source_channels:
            raise ShapeError(
                f"discriminator source has {source.data.shape[0]} channels, "
                f"expected {self.source_channels}"
            )
        if candidate.data.shape[0] != self.candidate_channels:
            raise ShapeError(
                f"discriminator candidate has {candidate.data.shape[0]} channels, "
                f"expected {self.candidate_channels}"
            )
        if source.data.shape[1:] != candidate.data.shape[1:]:
            raise ShapeError(
                f"source {source.data.shape[1:]} and candidate "
                f"{candidate.data.shape[1:]} sizes differ"
            )
        h, w = source.data.shape[1:]
        sal = _saliency_channel(m if self.use_saliency else None, h, w)
        z = concat(
            [source.reshape((1,) + source.data.shape), sal,
             candidate.reshape((1,) + candidate.data.shape)],
            axis=1,
        )
        for i, (w_, b_) in enumerate(zip(self.ws, self.bs)):
            stride = 2 if i < 3 else 1
            z = conv2d(z, w_, b_, stride=stride, padding=1)
            if i > 0:
                z = normalize(z, stats=self.stats)
            z = leaky_relu(z, 0.2)
        return conv2d(z, self.final_w, self.final_b, stride=1, padding=1)
