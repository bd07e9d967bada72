"""Region-statistics graphs over semantic layouts.

An image (or any feature map) is summarized per layout class by a mean
node and a variance node.  Two graph views are built on top: cosine
similarities between the pooled global feature vector and each node
(the intra-class graph), and pairwise Euclidean distances between nodes
(the inter-class graph).  Squared-difference losses over matched graph
pairs keep a synthesized image's regional statistics tied to its target.

Everything here is differentiable through the image argument, so the
losses can train a generator; targets are detached by the caller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layout import N_CLASSES
from .numerics import Tensor

COSINE_EPS = 1e-12
# Additive guard inside square roots: keeps gradients finite at exactly-zero
# vectors while perturbing norms by less than 1e-12.
NORM_GUARD = 1e-24

_OFF_DIAGONAL = 1.0 - np.eye(N_CLASSES)


@dataclass
class GraphNodes:
    """Per-class mean/variance feature nodes plus a presence mask."""

    mu: Tensor  # [12, Cf]
    nu: Tensor  # [12, Cf]
    present: np.ndarray  # [12] bool


@dataclass
class IntraClassGraph:
    """Cosine similarity of the pooled feature vector with each node."""

    c1: Tensor  # [12] against mean nodes
    c2: Tensor  # [12] against variance nodes


@dataclass
class InterClassGraph:
    """Pairwise Euclidean distances between nodes of each kind."""

    e1: Tensor  # [12, 12] between mean nodes
    e2: Tensor  # [12, 12] between variance nodes


def compute_nodes(f, layout, variance="literal"):
    """Mean and variance nodes of ``f`` ([Cf, H, W]) under ``layout``.

    The mean node of class c averages f over the class region.  The
    default "literal" variance sums (mask * f - mu)^2 over the whole
    image before normalizing by the region size, so pixels outside the
    region contribute (-mu)^2 terms; ``variance="masked"`` restricts the
    squared deviations to the region instead.  Absent classes yield zero
    nodes and present=False.
    """
    if f.data.ndim != 3:
        raise ValueError(f"feature map must be [Cf, H, W], got {f.data.shape}")
    cf, h, w = f.data.shape
    if (h, w) != (layout.height, layout.width):
        raise ValueError(
            f"feature map {h}x{w} does not match layout {layout.height}x{layout.width}"
        )
    if variance not in ("literal", "masked"):
        raise ValueError(f"unknown variance mode {variance!r}")

    planes = layout.one_hot()  # [12, H, W]
    counts = planes.sum(axis=(1, 2))
    present = counts > 0
    denom = Tensor(np.maximum(counts, 1.0)[:, None])
    presence = Tensor(present.astype(np.float64)[:, None])

    masks = Tensor(planes[:, None, :, :])  # [12, 1, H, W]
    fb = f.reshape((1, cf, h, w))
    masked = fb * masks  # [12, Cf, H, W]
    mu = (masked.sum(axis=(2, 3)) / denom) * presence

    mu_b = mu.reshape((N_CLASSES, cf, 1, 1))
    if variance == "literal":
        dev = masked - mu_b
    else:
        dev = (fb - mu_b) * masks
    nu = ((dev * dev).sum(axis=(2, 3)) / denom) * presence
    return GraphNodes(mu=mu, nu=nu, present=present)


def _guarded_norm(x, axis=None):
    return ((x * x).sum(axis=axis) + NORM_GUARD) ** 0.5


def intra_graph(f, nodes):
    """Cosine of the pooled global feature vector with every node.

    Entries for absent classes are forced to zero, and the epsilon in
    the denominator maps exactly-zero vectors to similarity zero rather
    than NaN.
    """
    if f.data.ndim != 3:
        raise ValueError(f"feature map must be [Cf, H, W], got {f.data.shape}")
    cf = f.data.shape[0]
    if nodes.mu.data.shape != (N_CLASSES, cf):
        raise ValueError(
            f"nodes have width {nodes.mu.data.shape}, feature map has {cf} channels"
        )
    fbar = f.mean(axis=(1, 2))  # [Cf]
    norm_f = _guarded_norm(fbar)
    presence = Tensor(nodes.present.astype(np.float64))

    def cosine(node):
        dots = (node * fbar.reshape((1, cf))).sum(axis=(1,))
        norms = _guarded_norm(node, axis=(1,))
        return presence * dots / (norm_f * norms + COSINE_EPS)

    return IntraClassGraph(c1=cosine(nodes.mu), c2=cosine(nodes.nu))


def inter_graph(nodes):
    """Symmetric pairwise Euclidean distance matrices over the nodes."""

    def pairwise(node):
        cf = node.data.shape[1]
        a = node.reshape((N_CLASSES, 1, cf))
        b = node.reshape((1, N_CLASSES, cf))
        d = a - b
        sq = (d * d).sum(axis=(2,))
        # The mask pins the diagonal — and any exactly-coincident node
        # pair, whose true distance is zero and whose gradient already
        # vanishes — to exactly zero; the guard keeps sqrt differentiable
        # where distances merely approach zero.
        mask = _OFF_DIAGONAL * (sq.data > 0.0)
        return ((sq + NORM_GUARD) ** 0.5) * Tensor(mask)

    return InterClassGraph(e1=pairwise(nodes.mu), e2=pairwise(nodes.nu))


def intra_graph_loss(target, fake):
    """Sum of squared per-class differences across both cosine rows."""
    d1 = target.c1 - fake.c1
    d2 = target.c2 - fake.c2
    return (d1 * d1).sum() + (d2 * d2).sum()


def inter_graph_loss(target, fake):
    """Sum over classes of squared edge-row distances, for both matrices.

    Summing squared row norms touches every entry once, so this equals
    the squared Frobenius norm of each matrix difference.
    """
    d1 = target.e1 - fake.e1
    d2 = target.e2 - fake.e2
    return (d1 * d1).sum() + (d2 * d2).sum()


def graph_dump(f, layout, variance="literal"):
    """JSON-ready dict of nodes and graphs for one image and layout."""
    fc = f if isinstance(f, Tensor) else Tensor(f)
    nodes = compute_nodes(fc, layout, variance=variance)
    intra = intra_graph(fc, nodes)
    inter = inter_graph(nodes)
    return {
        "mu": nodes.mu.data.tolist(),
        "nu": nodes.nu.data.tolist(),
        "c1": intra.c1.data.tolist(),
        "c2": intra.c2.data.tolist(),
        "e1": inter.e1.data.tolist(),
        "e2": inter.e2.data.tolist(),
        "present": [bool(p) for p in nodes.present],
    }
