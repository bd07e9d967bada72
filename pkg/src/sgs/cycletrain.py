"""Biphasic training: independent stages plus iterative cycle refinement.

Direction "k" synthesizes sketches from photos, direction "o" photos
from sketches.  Stage 0 trains each direction alone.  Every later stage
re-initializes both networks from scratch and adds a distillation term:
the candidate (real or synthesized) target image is pushed through the
*frozen* opposite-direction generator from the previous stage, and L1
differences over five tapped activations (encoder bottleneck plus the
first four decoder blocks) tie the two branches together.  Frozen
generators only ever shape gradients that flow through them; their own
weights are never stepped.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .graphs import compute_nodes, inter_graph, inter_graph_loss, intra_graph, intra_graph_loss
from .layout import DataError
from .losses import (
    FeatureExtractor,
    LossLog,
    LossWeights,
    ParsingOracle,
    binary_cross_entropy,
    tap_l1,
    tap_mse,
)
from .metrics import evaluate_pairs
from .network import Generator, PatchDiscriminator
from .numerics import Tensor, adam_step, load_params, lr_at_epoch, save_params, softplus

DIRECTIONS = ("k", "o")  # k: photo -> sketch, o: sketch -> photo
DEFAULT_ICT_TAPS = (
    "enc_bottleneck", "dec_block1", "dec_block2", "dec_block3", "dec_block4",
)

MODEL_JSON_KEYS = (
    "depth", "base_channels", "in_channels", "out_channels",
    "use_saliency", "image_size", "seed",
)


class ConfigError(ValueError):
    """Configuration that cannot be trained with."""


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    """Everything one run needs; all randomness derives from ``seed``."""

    epochs: int = 40
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 7
    image_size: int = 64
    depth: int = 5
    base_channels: int = 16
    si_hidden: int = 32
    use_saliency: bool = True
    stages: int = 4
    gan_mode: str = "bce"
    stats: str = "instance"
    variance_mode: str = "literal"
    val_count: int = 8
    ict_taps: tuple = DEFAULT_ICT_TAPS

    def validate(self):
        if self.epochs < 2:
            raise ConfigError(f"epochs must be >= 2, got {self.epochs}")
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0 or not np.isfinite(self.lr):
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.depth < 1 or self.image_size % (1 << self.depth):
            raise ConfigError(
                f"image_size {self.image_size} must divide by 2**depth = {1 << self.depth}"
            )
        if self.image_size < 32:
            # The patch discriminator's five k=4 convolutions shrink the
            # map below 1x1 for anything smaller.
            raise ConfigError(f"image_size must be >= 32, got {self.image_size}")
        if self.gan_mode not in ("bce", "lsgan"):
            raise ConfigError(f"unknown gan_mode {self.gan_mode!r}")
        if self.stats not in ("instance", "batch"):
            raise ConfigError(f"unknown stats mode {self.stats!r}")
        if self.variance_mode not in ("literal", "masked"):
            raise ConfigError(f"unknown variance mode {self.variance_mode!r}")
        if len(self.ict_taps) != 5:
            raise ConfigError(
                f"cycle distillation needs exactly 5 taps, got {len(self.ict_taps)}"
            )
        for name in self.ict_taps:
            if name != "enc_bottleneck":
                if not name.startswith("dec_block") or not name[9:].isdigit():
                    raise ConfigError(f"unknown tap name {name!r}")
                if int(name[9:]) > self.depth:
                    raise ConfigError(
                        f"tap {name!r} exceeds decoder depth {self.depth}"
                    )
        try:
            self.weights.validate()
        except ValueError as err:
            raise ConfigError(str(err)) from err
        return self


@dataclass
class Checkpoint:
    stage: int
    direction: str
    path: str
    val: dict
    digest: str


@dataclass
class StageResult:
    generator: Generator
    discriminator: PatchDiscriminator
    checkpoint: Checkpoint
    epoch_total: list
    epoch_ict: list


def _dir_index(direction):
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return DIRECTIONS.index(direction)


def _other(direction):
    return "o" if direction == "k" else "k"


def direction_channels(direction):
    """(source channels, target channels) for a direction."""
    return (3, 1) if _dir_index(direction) == 0 else (1, 3)


def sample_views(sample, direction):
    """(source, source saliency, source layout, target, target saliency,
    target layout) for one direction.

    The generator and the graph terms condition on the source-side
    layout; the frozen opposite generator, whose own source is the
    target image, conditions on the target-side saliency and layout.
    """
    if _dir_index(direction) == 0:
        return (sample.photo, sample.saliency_photo, sample.layout_photo,
                sample.sketch, sample.saliency_sketch, sample.layout_sketch)
    return (sample.sketch, sample.saliency_sketch, sample.layout_sketch,
            sample.photo, sample.saliency_photo, sample.layout_photo)


def cycle_distillation_loss(frozen_gen, y_real, y_fake, m, layout,
                            taps=DEFAULT_ICT_TAPS):
    """L1 agreement of frozen-generator activations on real vs fake input.

    The real branch is detached; gradients reach only ``y_fake``.
    Exactly five taps are required (the full objective's cycle term);
    :func:`tap_l1` remains available for ad-hoc tap sets.
    """
    if len(taps) != 5:
        raise ConfigError(f"cycle distillation needs exactly 5 taps, got {len(taps)}")
    _, real_taps = frozen_gen.forward(y_real.detach(), m, layout, want_taps=True)
    _, fake_taps = frozen_gen.forward(y_fake, m, layout, want_taps=True)
    return tap_l1(real_taps, fake_taps, taps)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def save_generator(gen, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    bin_path = os.path.join(out_dir, "model.bin")
    save_params(bin_path, gen.named_params())
    cfg = {
        "depth": gen.depth,
        "base_channels": gen.base_channels,
        "in_channels": gen.in_channels,
        "out_channels": gen.out_channels,
        "use_saliency": gen.use_saliency,
        "image_size": gen.image_size,
        "seed": gen.seed if isinstance(gen.seed, int) else list(gen.seed),
    }
    with open(os.path.join(out_dir, "model.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(cfg, sort_keys=True, indent=2) + "\n")
    return bin_path


def load_generator(model_dir, stats="instance"):
    """Rebuild a generator from model.json + model.bin.

    The SI hidden width is not part of the config file; it is inferred
    from the shared-conv weight shape in the checkpoint.
    """
    json_path = os.path.join(model_dir, "model.json")
    bin_path = os.path.join(model_dir, "model.bin")
    for p in (json_path, bin_path):
        if not os.path.exists(p):
            raise DataError(f"missing checkpoint file {p}")
    with open(json_path, "r", encoding="utf-8") as f:
        cfg = json.load(f)
    missing = [k for k in MODEL_JSON_KEYS if k not in cfg]
    if missing:
        raise ConfigError(f"{model_dir}/model.json missing keys {missing}")
    from .numerics import load_checkpoint

    blob = load_checkpoint(os.path.join(model_dir, "model.bin"))
    hidden = blob["blocks.0.si1.shared_w"].shape[0]
    gen = Generator(
        in_channels=cfg["in_channels"],
        out_channels=cfg["out_channels"],
        depth=cfg["depth"],
        base_channels=cfg["base_channels"],
        si_hidden=int(hidden),
        use_saliency=cfg["use_saliency"],
        image_size=cfg["image_size"],
        seed=cfg["seed"],
        stats=stats,
    )
    load_params(os.path.join(model_dir, "model.bin"), gen.named_params())
    return gen


def synthesize_sample(gen, sample, direction):
    """Run one sample through a generator; returns the fake as numpy."""
    src, m_src, lay_src, _, _, _ = sample_views(sample, direction)
    return gen.forward(src, m_src, lay_src).data


def evaluate_direction(gen, val_samples, direction, extractor):
    """Pairwise SSIM/FSIM plus the embedding Frechet proxy on a val set."""
    reals, fakes = [], []
    for s in val_samples:
        _, _, _, tgt, _, _ = sample_views(s, direction)
        reals.append(tgt.data)
        fakes.append(synthesize_sample(gen, s, direction))
    embed = extractor.embed if len(val_samples) >= 2 else None
    return evaluate_pairs(reals, fakes, embed=embed).summary()


class _TargetCache:
    """Constant per-sample artifacts reused every epoch of a stage."""

    def __init__(self, cfg, direction, extractor, oracle, frozen_opp):
        self.cfg = cfg
        self.direction = direction
        self.extractor = extractor
        self.oracle = oracle
        self.frozen_opp = frozen_opp
        self._store = {}

    def get(self, sample):
        hit = self._store.get(sample.id)
        if hit is None:
            _, _, lay_src, tgt, m_tgt, lay_tgt = sample_views(sample, self.direction)
            tgt_c = tgt.detach()
            nodes = compute_nodes(tgt_c, lay_src, variance=self.cfg.variance_mode)
            hit = {
                "taps": [t.detach() for t in self.extractor.features(tgt_c)],
                "probs": self.oracle.probs(tgt_c).detach(),
                "intra": intra_graph(tgt_c, nodes),
                "inter": inter_graph(nodes),
            }
            if self.frozen_opp is not None:
                _, real_taps = self.frozen_opp.forward(tgt_c, m_tgt, lay_tgt,
                                                       want_taps=True)
                hit["ict"] = {name: real_taps[name].detach()
                              for name in self.cfg.ict_taps}
            self._store[sample.id] = hit
        return hit


def train_direction(train_samples, val_samples, cfg, direction, stage,
                    frozen_opp, out_dir):
    """Train one direction for one stage; writes the checkpoint directory.

    ``frozen_opp`` is the opposite-direction generator from the previous
    stage (None at stage 0, where the cycle term is absent).
    """
    cfg.validate()
    didx = _dir_index(direction)
    in_ch, out_ch = direction_channels(direction)
    if frozen_opp is not None:
        if (frozen_opp.in_channels, frozen_opp.out_channels) != (out_ch, in_ch):
            raise ConfigError(
                f"frozen opposite generator maps {frozen_opp.in_channels}->"
                f"{frozen_opp.out_channels} channels; direction {direction!r} "
                f"needs {out_ch}->{in_ch}"
            )
        frozen_opp.freeze()

    gen = Generator(in_ch, out_ch, depth=cfg.depth, base_channels=cfg.base_channels,
                    si_hidden=cfg.si_hidden, use_saliency=cfg.use_saliency,
                    image_size=cfg.image_size, seed=[cfg.seed, stage, didx, 0],
                    stats=cfg.stats)
    disc = PatchDiscriminator(in_ch, out_ch, base_channels=cfg.base_channels,
                              use_saliency=cfg.use_saliency,
                              seed=[cfg.seed, stage, didx, 1], stats=cfg.stats)
    extractor = FeatureExtractor(out_ch, seed=[cfg.seed, 91, didx])
    oracle = ParsingOracle(out_ch, seed=[cfg.seed, 92, didx])
    shuffle_rng = np.random.default_rng([cfg.seed, stage, didx, 4])
    cache = _TargetCache(cfg, direction, extractor, oracle, frozen_opp)

    os.makedirs(out_dir, exist_ok=True)
    log = LossLog(os.path.join(out_dir, "losses.csv"))
    w = cfg.weights
    step = 0
    epoch_total, epoch_ict = [], []

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg.lr, epoch, cfg.epochs)
        order = shuffle_rng.permutation(len(train_samples))
        sums = {"l_total": 0.0, "l_ict": 0.0}
        steps_this_epoch = 0

        for start in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            scale = 1.0 / len(batch)

            # Discriminator phase: fakes detached so only D learns here.
            disc.zero_grad()
            fakes = []
            vals = dict.fromkeys(
                ("l_gan_d", "l_gan_g", "l_content", "l_perc", "l_bce",
                 "l_iag", "l_itg", "l_ict", "l_total"), 0.0)
            for s in batch:
                src, m_src, lay_src, tgt, _, _ = sample_views(s, direction)
                fake = gen.forward(src, m_src, lay_src)
                fakes.append((s, fake))
                real_logits = disc.forward(src, m_src, tgt)
                fake_logits = disc.forward(src, m_src, fake.detach())
                if cfg.gan_mode == "bce":
                    loss_d = softplus(-real_logits).mean() + softplus(fake_logits).mean()
                else:
                    loss_d = ((real_logits - 1.0) * (real_logits - 1.0)).mean() \
                        + (fake_logits * fake_logits).mean()
                if not np.isfinite(loss_d.data):
                    raise NumericalError(
                        f"non-finite discriminator loss at stage {stage} "
                        f"direction {direction} step {step}"
                    )
                (loss_d * scale).backward()
                vals["l_gan_d"] += loss_d.item() * scale
            adam_step(disc.params(), lr, cfg.beta1, cfg.beta2)

            # Generator phase.
            gen.zero_grad()
            disc.zero_grad()
            for s, fake in fakes:
                src, m_src, lay_src, tgt, m_tgt, lay_tgt = sample_views(s, direction)
                art = cache.get(s)
                fake_logits = disc.forward(src, m_src, fake)
                if cfg.gan_mode == "bce":
                    l_gan_g = softplus(-fake_logits).mean()
                else:
                    l_gan_g = ((fake_logits - 1.0) * (fake_logits - 1.0)).mean()
                l_content = (tgt.detach() - fake).abs().mean()
                l_perc = tap_mse(art["taps"], extractor.features(fake))
                l_bce = binary_cross_entropy(art["probs"], oracle.probs(fake))
                nodes_f = compute_nodes(fake, lay_src, variance=cfg.variance_mode)
                l_iag = intra_graph_loss(art["intra"], intra_graph(fake, nodes_f))
                l_itg = inter_graph_loss(art["inter"], inter_graph(nodes_f))
                if frozen_opp is not None:
                    _, fake_taps = frozen_opp.forward(fake, m_tgt, lay_tgt,
                                                      want_taps=True)
                    l_ict = tap_l1(art["ict"], fake_taps, cfg.ict_taps)
                else:
                    l_ict = Tensor(0.0)
                total = (l_gan_g + w.content * l_content + w.perceptual * l_perc
                         + w.parsing * l_bce + w.intra_graph * l_iag
                         + w.inter_graph * l_itg + w.cycle * l_ict)
                if not np.isfinite(total.data):
                    raise NumericalError(
                        f"non-finite generator loss at stage {stage} "
                        f"direction {direction} step {step}"
                    )
                (total * scale).backward()
                for key, t in (("l_gan_g", l_gan_g), ("l_content", l_content),
                               ("l_perc", l_perc), ("l_bce", l_bce),
                               ("l_iag", l_iag), ("l_itg", l_itg),
                               ("l_ict", l_ict), ("l_total", total)):
                    vals[key] += t.item() * scale
            adam_step(gen.params(), lr, cfg.beta1, cfg.beta2)

            step += 1
            steps_this_epoch += 1
            log.append(step, vals)
            sums["l_total"] += vals["l_total"]
            sums["l_ict"] += vals["l_ict"]

        epoch_total.append(sums["l_total"] / steps_this_epoch)
        epoch_ict.append(sums["l_ict"] / steps_this_epoch)

    save_generator(gen, out_dir)
    val = evaluate_direction(gen, val_samples, direction, extractor)
    with open(os.path.join(out_dir, "val_metrics.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(val, sort_keys=True) + "\n")
    ckpt = Checkpoint(stage=stage, direction=direction, path=out_dir, val=val,
                      digest=_sha256(os.path.join(out_dir, "model.bin")))
    return StageResult(generator=gen, discriminator=disc, checkpoint=ckpt,
                       epoch_total=epoch_total, epoch_ict=epoch_ict)


def train_stage0(train_samples, val_samples, cfg, out_root):
    """Train both directions independently (no cycle term)."""
    results = {}
    for d in DIRECTIONS:
        out_dir = os.path.join(out_root, f"stage0_{d}")
        results[d] = train_direction(train_samples, val_samples, cfg, d, 0,
                                     None, out_dir)
    return results


def run_iterative(train_samples, val_samples, cfg, out_root):
    """Full iterative schedule: stage 0 plus ``cfg.stages`` cycle stages.

    Every stage trains both directions from scratch; stage i+1 distills
    through the frozen stage-i generator of the opposite direction.
    Returns per-direction checkpoint lists plus per-stage results.
    """
    cfg.validate()
    os.makedirs(out_root, exist_ok=True)
    checkpoints = {d: [] for d in DIRECTIONS}
    stage_results = []

    results = train_stage0(train_samples, val_samples, cfg, out_root)
    for d in DIRECTIONS:
        checkpoints[d].append(results[d].checkpoint)
    stage_results.append(results)
    frozen = {d: results[d].generator for d in DIRECTIONS}
    for d in DIRECTIONS:
        frozen[d].freeze()

    for stage in range(1, cfg.stages + 1):
        results = {}
        for d in DIRECTIONS:
            out_dir = os.path.join(out_root, f"stage{stage}_{d}")
            results[d] = train_direction(train_samples, val_samples, cfg, d,
                                         stage, frozen[_other(d)], out_dir)
            checkpoints[d].append(results[d].checkpoint)
        stage_results.append(results)
        frozen = {d: results[d].generator for d in DIRECTIONS}
        for d in DIRECTIONS:
            frozen[d].freeze()

    manifest = {
        "config": asdict(cfg),
        "checkpoints": {
            d: [asdict(c) for c in checkpoints[d]] for d in DIRECTIONS
        },
    }
    with open(os.path.join(out_root, "manifest.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return {"checkpoints": checkpoints, "stages": stage_results}


def select_optimal(checkpoints):
    """Lowest Frechet proxy wins; ties break toward higher mean SSIM."""
    if not checkpoints:
        raise ValueError("select_optimal needs at least one checkpoint")
    return min(checkpoints,
               key=lambda c: (c.val["frechet_proxy"], -c.val["ssim_mean"]))
