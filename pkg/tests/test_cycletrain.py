"""Tests for biphasic cycle training: config validation, direction
routing, checkpoint round-trips, the cycle-distillation term, and small
end-to-end training runs with determinism and frozen-weight checks.
"""
import dataclasses
import json
import os

import numpy as np
import pytest

from sgs.cycletrain import (
    DEFAULT_ICT_TAPS,
    DIRECTIONS,
    Checkpoint,
    ConfigError,
    TrainConfig,
    cycle_distillation_loss,
    direction_channels,
    evaluate_direction,
    load_generator,
    run_iterative,
    sample_views,
    save_generator,
    select_optimal,
    synthesize_sample,
    train_direction,
)
from sgs.layout import DataError, SaliencyMap, SemanticLayout
from sgs.network import Generator
from sgs.numerics import Tensor

TINY = dict(epochs=2, image_size=32, depth=4, base_channels=4, si_hidden=4,
            stages=1, val_count=2, seed=3)


def tiny_config(**over):
    kw = dict(TINY)
    kw.update(over)
    return TrainConfig(**kw)


def rand_layout(rng, size):
    return SemanticLayout(rng.integers(0, 12, size=(size, size)).astype(np.uint8))


class TestTrainConfig:
    def test_defaults_validate(self):
        cfg = TrainConfig()
        assert cfg.validate() is cfg
        assert cfg.epochs == 40 and cfg.lr == 2e-4 and cfg.seed == 7
        assert cfg.stages == 4 and cfg.image_size == 64 and cfg.depth == 5

    @pytest.mark.parametrize("field,value,hint", [
        ("epochs", 1, "epochs"),
        ("stages", 0, "stages"),
        ("batch_size", 0, "batch_size"),
        ("lr", 0.0, "lr"),
        ("lr", float("nan"), "lr"),
        ("image_size", 40, "2\\*\\*depth"),
        ("gan_mode", "wasserstein", "gan_mode"),
        ("stats", "layer", "stats"),
        ("variance_mode", "robust", "variance"),
    ])
    def test_rejections(self, field, value, hint):
        with pytest.raises(ConfigError, match=hint):
            tiny_config(**{field: value}).validate()

    def test_image_size_floor(self):
        with pytest.raises(ConfigError, match=">= 32"):
            tiny_config(image_size=16, depth=4).validate()

    def test_tap_count_must_be_five(self):
        with pytest.raises(ConfigError, match="5 taps"):
            tiny_config(ict_taps=("enc_bottleneck",)).validate()

    def test_unknown_tap_name(self):
        bad = ("enc_bottleneck", "dec_block1", "dec_block2", "dec_block3", "foo")
        with pytest.raises(ConfigError, match="foo"):
            tiny_config(ict_taps=bad).validate()

    def test_tap_beyond_depth(self):
        bad = ("enc_bottleneck", "dec_block1", "dec_block2", "dec_block3",
               "dec_block5")
        with pytest.raises(ConfigError, match="dec_block5"):
            tiny_config(depth=4, ict_taps=bad).validate()

    def test_default_taps_fit_default_depth(self):
        TrainConfig().validate()
        assert all(t == "enc_bottleneck" or int(t[9:]) <= 5
                   for t in DEFAULT_ICT_TAPS)

    def test_bad_weights_become_config_errors(self):
        from sgs.losses import LossWeights
        with pytest.raises(ConfigError, match="content"):
            tiny_config(weights=LossWeights(content=-1.0)).validate()


class TestDirectionPlumbing:
    def test_direction_channels(self):
        assert direction_channels("k") == (3, 1)
        assert direction_channels("o") == (1, 3)

    def test_unknown_direction(self):
        with pytest.raises(ConfigError, match="'x'"):
            direction_channels("x")

    def test_sample_views_photo_to_sketch(self, tiny_corpus):
        s = tiny_corpus["samples"][0]
        src, m_src, lay_src, tgt, m_tgt, lay_tgt = sample_views(s, "k")
        assert src is s.photo and tgt is s.sketch
        assert m_src is s.saliency_photo and m_tgt is s.saliency_sketch
        assert lay_src is s.layout_photo and lay_tgt is s.layout_sketch

    def test_sample_views_sketch_to_photo(self, tiny_corpus):
        s = tiny_corpus["samples"][0]
        src, m_src, lay_src, tgt, m_tgt, lay_tgt = sample_views(s, "o")
        assert src is s.sketch and tgt is s.photo
        assert m_src is s.saliency_sketch and m_tgt is s.saliency_photo
        assert lay_src is s.layout_sketch and lay_tgt is s.layout_photo


class TestCycleDistillation:
    @staticmethod
    def frozen_gen():
        gen = Generator(1, 3, depth=4, base_channels=2, si_hidden=2,
                        image_size=32, seed=5)
        gen.freeze()
        return gen

    def test_zero_when_fake_equals_real(self):
        gen = self.frozen_gen()
        rng = np.random.default_rng(0)
        y = Tensor(rng.uniform(size=(1, 32, 32)))
        m = SaliencyMap(rng.uniform(size=(32, 32)))
        lay = rand_layout(rng, 32)
        loss = cycle_distillation_loss(gen, y, Tensor(y.data.copy()), m, lay)
        assert loss.item() == 0.0

    def test_positive_when_different(self):
        gen = self.frozen_gen()
        rng = np.random.default_rng(1)
        y = Tensor(rng.uniform(size=(1, 32, 32)))
        y_fake = Tensor(rng.uniform(size=(1, 32, 32)))
        m = SaliencyMap(rng.uniform(size=(32, 32)))
        lay = rand_layout(rng, 32)
        assert cycle_distillation_loss(gen, y, y_fake, m, lay).item() > 0

    def test_requires_exactly_five_taps(self):
        gen = self.frozen_gen()
        rng = np.random.default_rng(2)
        y = Tensor(rng.uniform(size=(1, 32, 32)))
        m = SaliencyMap(rng.uniform(size=(32, 32)))
        lay = rand_layout(rng, 32)
        with pytest.raises(ConfigError, match="5 taps"):
            cycle_distillation_loss(gen, y, y, m, lay,
                                    taps=("enc_bottleneck", "dec_block1"))

    def test_gradient_reaches_fake_only(self):
        gen = self.frozen_gen()
        rng = np.random.default_rng(3)
        y = Tensor(rng.uniform(size=(1, 32, 32)), requires_grad=True)
        y_fake = Tensor(rng.uniform(size=(1, 32, 32)), requires_grad=True)
        m = SaliencyMap(rng.uniform(size=(32, 32)))
        lay = rand_layout(rng, 32)
        cycle_distillation_loss(gen, y, y_fake, m, lay).backward()
        assert y.grad is None or not np.any(y.grad)
        assert y_fake.grad is not None and np.any(y_fake.grad)
        for p in gen.params():
            assert p.grad is None or not np.any(p.grad)


class TestCheckpointRoundTrip:
    def make_gen(self, **over):
        kw = dict(in_channels=3, out_channels=1, depth=4, base_channels=4,
                  si_hidden=3, image_size=32, seed=21)
        kw.update(over)
        return Generator(**kw)

    def test_forward_replay_is_bit_identical(self, tmp_path, tiny_corpus):
        gen = self.make_gen()
        save_generator(gen, str(tmp_path))
        loaded = load_generator(str(tmp_path))
        s = tiny_corpus["samples"][0]
        a = synthesize_sample(gen, s, "k")
        b = synthesize_sample(loaded, s, "k")
        assert np.array_equal(a, b)

    def test_si_hidden_inferred_from_blob(self, tmp_path):
        gen = self.make_gen(si_hidden=3)
        save_generator(gen, str(tmp_path))
        loaded = load_generator(str(tmp_path))
        assert loaded.blocks[0].si1.shared_w.data.shape[0] == 3

    def test_model_json_keys(self, tmp_path):
        save_generator(self.make_gen(), str(tmp_path))
        with open(tmp_path / "model.json") as f:
            cfg = json.load(f)
        assert set(cfg) == {"depth", "base_channels", "in_channels",
                            "out_channels", "use_saliency", "image_size", "seed"}

    def test_missing_files_rejected(self, tmp_path):
        with pytest.raises(DataError, match="model.json"):
            load_generator(str(tmp_path / "nope"))
        save_generator(self.make_gen(), str(tmp_path))
        os.remove(tmp_path / "model.bin")
        with pytest.raises(DataError, match="model.bin"):
            load_generator(str(tmp_path))

    def test_missing_json_key_rejected(self, tmp_path):
        save_generator(self.make_gen(), str(tmp_path))
        with open(tmp_path / "model.json") as f:
            cfg = json.load(f)
        del cfg["depth"]
        with open(tmp_path / "model.json", "w") as f:
            json.dump(cfg, f)
        with pytest.raises(ConfigError, match="depth"):
            load_generator(str(tmp_path))

    def test_list_seed_round_trips(self, tmp_path):
        gen = self.make_gen(seed=[3, 0, 1, 0])
        save_generator(gen, str(tmp_path))
        loaded = load_generator(str(tmp_path))
        rng = np.random.default_rng(9)
        x = Tensor(rng.uniform(size=(3, 32, 32)))
        m = SaliencyMap(rng.uniform(size=(32, 32)))
        lay = rand_layout(rng, 32)
        assert np.array_equal(gen.forward(x, m, lay).data,
                              loaded.forward(x, m, lay).data)


class TestSynthesizeAndEvaluate:
    def test_synthesize_shapes(self, tiny_corpus):
        s = tiny_corpus["samples"][0]
        gen_k = Generator(3, 1, depth=4, base_channels=2, si_hidden=2,
                          image_size=32, seed=1)
        gen_o = Generator(1, 3, depth=4, base_channels=2, si_hidden=2,
                          image_size=32, seed=2)
        out_k = synthesize_sample(gen_k, s, "k")
        out_o = synthesize_sample(gen_o, s, "o")
        assert out_k.shape == (1, 32, 32) and out_o.shape == (3, 32, 32)
        assert out_k.min() >= 0.0 and out_k.max() <= 1.0

    def test_evaluate_direction_summary(self, tiny_corpus):
        from sgs.losses import FeatureExtractor
        gen = Generator(3, 1, depth=4, base_channels=2, si_hidden=2,
                        image_size=32, seed=4)
        ext = FeatureExtractor(1, seed=44)
        val = evaluate_direction(gen, tiny_corpus["samples"][:3], "k", ext)
        assert set(val) == {"ssim_mean", "fsim_mean", "frechet_proxy", "n"}
        assert val["n"] == 3
        assert np.isfinite(val["ssim_mean"]) and np.isfinite(val["frechet_proxy"])


class TestTrainDirection:
    def test_stage0_smoke(self, tiny_corpus, tmp_path):
        cfg = tiny_config()
        train = tiny_corpus["samples"][:4]
        val = tiny_corpus["samples"][4:]
        res = train_direction(train, val, cfg, "k", 0, None, str(tmp_path / "r"))
        assert len(res.epoch_total) == cfg.epochs
        assert all(np.isfinite(v) for v in res.epoch_total)
        assert res.epoch_ict == [0.0, 0.0]
        lines = (tmp_path / "r" / "losses.csv").read_text().splitlines()
        assert len(lines) == 1 + cfg.epochs * len(train)
        assert lines[0].startswith("step,l_gan_d,l_gan_g,")
        assert os.path.exists(tmp_path / "r" / "model.bin")
        assert os.path.exists(tmp_path / "r" / "val_metrics.json")

    def test_deterministic_given_seed(self, tiny_corpus, tmp_path):
        cfg = tiny_config()
        train = tiny_corpus["samples"][:3]
        val = tiny_corpus["samples"][3:5]
        a = train_direction(train, val, cfg, "o", 0, None, str(tmp_path / "a"))
        b = train_direction(train, val, cfg, "o", 0, None, str(tmp_path / "b"))
        assert a.checkpoint.digest == b.checkpoint.digest
        assert (tmp_path / "a" / "losses.csv").read_bytes() == \
            (tmp_path / "b" / "losses.csv").read_bytes()

    def test_checkpoint_digest_matches_file(self, tiny_corpus, tmp_path):
        import hashlib
        cfg = tiny_config()
        res = train_direction(tiny_corpus["samples"][:3],
                              tiny_corpus["samples"][3:5], cfg, "k", 0, None,
                              str(tmp_path / "r"))
        with open(tmp_path / "r" / "model.bin", "rb") as f:
            assert res.checkpoint.digest == hashlib.sha256(f.read()).hexdigest()

    def test_saved_model_replays_final_generator(self, tiny_corpus, tmp_path):
        cfg = tiny_config()
        res = train_direction(tiny_corpus["samples"][:3],
                              tiny_corpus["samples"][3:5], cfg, "k", 0, None,
                              str(tmp_path / "r"))
        loaded = load_generator(str(tmp_path / "r"))
        s = tiny_corpus["samples"][5]
        assert np.array_equal(synthesize_sample(res.generator, s, "k"),
                              synthesize_sample(loaded, s, "k"))

    def test_frozen_opp_channel_validation(self, tiny_corpus, tmp_path):
        cfg = tiny_config()
        wrong = Generator(3, 1, depth=4, base_channels=2, si_hidden=2,
                          image_size=32, seed=0)
        with pytest.raises(ConfigError, match="frozen opposite"):
            train_direction(tiny_corpus["samples"][:2],
                            tiny_corpus["samples"][2:4], cfg, "k", 1, wrong,
                            str(tmp_path / "r"))


@pytest.fixture(scope="module")
def run(tiny_corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("iter")
    cfg = tiny_config()
    out = run_iterative(tiny_corpus["samples"][:3],
                        tiny_corpus["samples"][3:5], cfg, str(root))
    return {"root": root, "out": out, "cfg": cfg}


class TestRunIterative:
    def test_checkpoint_counts(self, run):
        ckpts = run["out"]["checkpoints"]
        for d in DIRECTIONS:
            assert len(ckpts[d]) == run["cfg"].stages + 1
            assert [c.stage for c in ckpts[d]] == [0, 1]

    def test_stage_directories_exist(self, run):
        for stage in (0, 1):
            for d in DIRECTIONS:
                assert (run["root"] / f"stage{stage}_{d}" / "model.bin").exists()

    def test_manifest_json(self, run):
        with open(run["root"] / "manifest.json") as f:
            manifest = json.load(f)
        assert set(manifest) == {"config", "checkpoints"}
        assert manifest["config"]["stages"] == 1
        assert len(manifest["checkpoints"]["k"]) == 2

    def test_frozen_stage0_untouched_by_stage1(self, run):
        """Cycle distillation must never update the frozen generator."""
        import hashlib
        for d in DIRECTIONS:
            recorded = run["out"]["checkpoints"][d][0].digest
            with open(run["root"] / f"stage0_{d}" / "model.bin", "rb") as f:
                assert hashlib.sha256(f.read()).hexdigest() == recorded

    def test_cycle_term_active_in_stage1(self, run):
        for d in DIRECTIONS:
            stage1 = run["out"]["stages"][1][d]
            assert all(v > 0 for v in stage1.epoch_ict)
            assert all(np.isfinite(v) for v in stage1.epoch_ict)

    def test_stage0_has_no_cycle_term(self, run):
        for d in DIRECTIONS:
            assert run["out"]["stages"][0][d].epoch_ict == [0.0, 0.0]


class TestSelectOptimal:
    @staticmethod
    def ckpt(stage, frechet, ssim_mean):
        return Checkpoint(stage=stage, direction="k", path=f"s{stage}",
                          val={"frechet_proxy": frechet, "ssim_mean": ssim_mean},
                          digest="")

    def test_lowest_frechet_wins(self):
        best = select_optimal([self.ckpt(0, 5.0, 0.2), self.ckpt(1, 1.0, 0.1),
                               self.ckpt(2, 3.0, 0.9)])
        assert best.stage == 1

    def test_tie_breaks_toward_higher_ssim(self):
        best = select_optimal([self.ckpt(0, 2.0, 0.3), self.ckpt(1, 2.0, 0.8)])
        assert best.stage == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_optimal([])
