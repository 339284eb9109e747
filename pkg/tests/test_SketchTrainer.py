import json
import math
import os
import tempfile
import unittest

import torch

from facesketch import (
    Checkpoint,
    CheckpointIO,
    DiscriminatorSpec,
    GeneratorSpec,
    LossWeights,
    PairedAugmenter,
    PairedDataIO,
    SketchTrainer,
    SplitSpec,
    SyntheticFaces,
    TrainConfig,
)
from facesketch.SketchObjective import TERM_NAMES

SMALL_G = GeneratorSpec().with_widths(8, 1)
SMALL_D = DiscriminatorSpec(layers="C8-C16-C32-C64")


def small_trainer(**overrides) -> SketchTrainer:
    options = {"epochs_constant": 1, "epochs_decay": 1, "replay_buffer_size": 4}
    options.update(overrides)
    return SketchTrainer(TrainConfig(**options), SMALL_G, SMALL_D, config_hash="test")


def random_batch(seed: int, size: int = 1) -> dict:
    gen = torch.Generator().manual_seed(seed)
    photo = torch.rand(size, 3, 256, 256, generator=gen) * 2 - 1
    sketch = torch.rand(size, 3, 256, 256, generator=gen) * 2 - 1
    return {"photo": photo, "sketch": sketch, "photo_input": photo, "sketch_input": sketch}


def snapshot(module: torch.nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def same_state(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def close_state(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(
        torch.allclose(a[k].float(), b[k].float(), atol=1e-6, rtol=0) for k in a
    )


class TestSchedule(unittest.TestCase):
    def test_linear_decay(self):
        cfg = TrainConfig()
        self.assertEqual(SketchTrainer.lr_at_epoch(cfg, 1), 2e-4)
        self.assertEqual(SketchTrainer.lr_at_epoch(cfg, 50), 2e-4)
        self.assertEqual(SketchTrainer.lr_at_epoch(cfg, 100), 2e-4)
        self.assertAlmostEqual(SketchTrainer.lr_at_epoch(cfg, 150), 1e-4)
        self.assertEqual(SketchTrainer.lr_at_epoch(cfg, 200), 0.0)
        with self.assertRaises(ValueError):
            SketchTrainer.lr_at_epoch(cfg, 0)
        with self.assertRaises(ValueError):
            SketchTrainer.lr_at_epoch(cfg, 201)

    def test_no_decay_phase(self):
        cfg = TrainConfig(epochs_constant=10, epochs_decay=0)
        self.assertEqual(SketchTrainer.lr_at_epoch(cfg, 10), 2e-4)


class TestTrainStep(unittest.TestCase):
    # ----------------- optimizers -----------------
    def test_optimizer_separation(self):
        trainer = small_trainer()
        g_params = {id(p) for group in trainer.opt_g.param_groups for p in group["params"]}
        expected_g = {id(p) for p in trainer.models.g_A.parameters()} | {
            id(p) for p in trainer.models.g_B.parameters()
        }
        self.assertEqual(g_params, expected_g)
        self.assertEqual(len(trainer.opt_d), 6)
        seen = set()
        for key, opt in trainer.opt_d.items():
            params = {id(p) for group in opt.param_groups for p in group["params"]}
            d = trainer.models.discriminator(key[0], int(key[1:]))
            self.assertEqual(params, {id(p) for p in d.parameters()})
            self.assertFalse(params & g_params)
            self.assertFalse(params & seen)
            seen |= params

    # ----------------- ablation mask -----------------
    def _changed_discriminators(self, mask) -> set[str]:
        trainer = small_trainer(ablation_level_mask=frozenset(mask))
        names = [n for n in trainer.models.all_modules() if n.startswith("d_")]
        before = {n: snapshot(trainer.models.all_modules()[n]) for n in names}
        g_before = snapshot(trainer.models.g_A)
        trainer.train_step(random_batch(0))
        after = {n: snapshot(trainer.models.all_modules()[n]) for n in names}
        self.assertFalse(same_state(g_before, snapshot(trainer.models.g_A)))
        return {n for n in names if not same_state(before[n], after[n])}

    def test_mask_top_level_only(self):
        self.assertEqual(self._changed_discriminators({256}), {"d_A256", "d_B256"})

    def test_mask_all_levels(self):
        self.assertEqual(
            self._changed_discriminators({64, 128, 256}),
            {"d_A64", "d_A128", "d_A256", "d_B64", "d_B128", "d_B256"},
        )

    def test_masked_terms_are_zero(self):
        trainer = small_trainer(ablation_level_mask=frozenset({256}))
        g, d = trainer.train_step(random_batch(1))
        record = g.components()
        for level in (64, 128):
            self.assertEqual(record[f"gan_A_{level}"], 0.0)
            self.assertEqual(record[f"gan_B_{level}"], 0.0)
        self.assertGreater(record["gan_A_256"], 0.0)
        self.assertGreater(record["syn_A_64"], 0.0)
        self.assertEqual(d.components()["gan_B_64"], 0.0)
        self.assertGreater(d.components()["gan_B_256"], 0.0)

    # ----------------- objective bookkeeping -----------------
    def test_total_is_weighted_sum(self):
        weights = LossWeights(lambda_A=(1.0, 0.5, 2.0), eta_B=0.3)
        trainer = small_trainer(weights=weights)
        g, _ = trainer.train_step(random_batch(2))
        expected = sum(
            weights.coefficient(name, i) * float(g.terms[name][i])
            for name in TERM_NAMES
            for i in range(3)
        )
        self.assertAlmostEqual(float(g.total), expected, places=4)
        self.assertIsNone(g.first_non_finite())

    def test_step_record_logged(self):
        trainer = small_trainer()
        with self.assertLogs("facesketch.steps", level="INFO") as cm:
            g, d = trainer.train_step(random_batch(3))
        record = json.loads(cm.records[0].getMessage())
        self.assertEqual(record["step"], 1)
        self.assertEqual(len([k for k in record if k.split("_")[0] in ("gan", "syn", "cyc")]), 18)
        self.assertAlmostEqual(record["total"], float(g.total), places=5)
        self.assertAlmostEqual(record["d_total"], float(d.total), places=5)
        self.assertEqual(trainer.step, 1)

    def test_non_finite_input(self):
        trainer = small_trainer()
        batch = random_batch(4)
        batch["photo_input"] = torch.full_like(batch["photo"], float("nan"))
        with self.assertRaises(FloatingPointError):
            trainer.train_step(batch)

    def test_determinism(self):
        a, b = small_trainer(seed=5), small_trainer(seed=5)
        for seed in range(2):
            ga, _ = a.train_step(random_batch(seed))
            gb, _ = b.train_step(random_batch(seed))
            self.assertEqual(float(ga.total), float(gb.total))
        self.assertTrue(same_state(snapshot(a.models.g_B), snapshot(b.models.g_B)))
        self.assertTrue(same_state(snapshot(a.models.d_A["64"]), snapshot(b.models.d_A["64"])))

        c = small_trainer(seed=6)
        self.assertFalse(same_state(snapshot(c.models.g_B), snapshot(small_trainer(seed=5).models.g_B)))

    def test_batch_of_two(self):
        trainer = small_trainer(batch_size=2)
        g, _ = trainer.train_step(random_batch(5, size=2))
        self.assertIsNone(g.first_non_finite())


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.trainer = small_trainer()
        self.trainer.train_step(random_batch(0))

    def test_round_trip_digest(self):
        ckpt = self.trainer.make_checkpoint()
        with tempfile.TemporaryDirectory() as tmpdir:
            path = CheckpointIO.save(ckpt, os.path.join(tmpdir, "ckpt.bin"))
            loaded = CheckpointIO.load(path)
            self.assertEqual(loaded.digest(), ckpt.digest())
            self.assertEqual(loaded.step, 1)
            self.assertEqual(loaded.config_hash, "test")
            self.assertEqual(loaded.generator_spec(), SMALL_G)
            self.assertEqual(loaded.discriminator_spec(), SMALL_D)
            models = loaded.build_models()
            self.assertTrue(same_state(snapshot(models.g_A), snapshot(self.trainer.models.g_A)))

    def test_resumed_step_matches(self):
        ckpt = self.trainer.make_checkpoint()
        other = small_trainer()
        other.load_checkpoint(ckpt)
        ga, _ = self.trainer.train_step(random_batch(1))
        gb, _ = other.train_step(random_batch(1))
        self.assertAlmostEqual(float(ga.total), float(gb.total), places=6)
        self.assertTrue(close_state(snapshot(self.trainer.models.g_A), snapshot(other.models.g_A)))

    def test_digest_tracks_content(self):
        first = self.trainer.make_checkpoint().digest()
        self.trainer.train_step(random_batch(1))
        self.assertNotEqual(first, self.trainer.make_checkpoint().digest())

    def test_load_errors(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            with self.assertRaises(FileNotFoundError):
                CheckpointIO.load(os.path.join(tmpdir, "missing.bin"))
            with self.assertRaises(FileNotFoundError):
                CheckpointIO.find_for_inference(tmpdir)

            path = os.path.join(tmpdir, "corrupt.bin")
            with open(path, "wb") as f:
                f.write(b"not a checkpoint")
            with self.assertRaisesRegex(ValueError, "Corrupt checkpoint"):
                CheckpointIO.load(path)

            payload = self.trainer.make_checkpoint().to_payload()
            del payload["models"]
            torch.save(payload, path)
            with self.assertRaisesRegex(ValueError, "Corrupt checkpoint"):
                CheckpointIO.load(path)

    def test_from_payload(self):
        payload = self.trainer.make_checkpoint().to_payload()
        self.assertIsInstance(Checkpoint.from_payload(payload), Checkpoint)
        with self.assertRaises(ValueError):
            Checkpoint.from_payload({"epoch": 1})


class TestFit(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.data_dir = os.path.join(cls._tmp.name, "data")
        SyntheticFaces.write_dataset(cls.data_dir, count=4, seed=0)
        cls.splits = PairedDataIO.load_dataset(cls.data_dir, SplitSpec(2, 1, 1))

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_fit_writes_artifacts(self):
        trainer = small_trainer(checkpoint_interval=1)
        with tempfile.TemporaryDirectory() as out_dir:
            history = trainer.fit(self.splits, out_dir, augmenter=PairedAugmenter())
            self.assertEqual([r["epoch"] for r in history], [1, 2])
            self.assertEqual(history[0]["lr"], 2e-4)
            self.assertEqual(history[1]["lr"], 0.0)
            self.assertEqual(history[0]["steps"], 2)
            self.assertIsNotNone(history[0]["val_ssim"])
            for name in ("ckpt_e1.bin", "ckpt_e2.bin", "ckpt_last.bin", "ckpt_best.bin"):
                self.assertTrue(os.path.isfile(os.path.join(out_dir, name)))

            with open(os.path.join(out_dir, "train_log.jsonl"), encoding="utf-8") as f:
                lines = [json.loads(line) for line in f]
            self.assertEqual([r["step"] for r in lines], [1, 2, 3, 4])
            self.assertEqual(lines[-1]["epoch"], 2)

            last = CheckpointIO.load(CheckpointIO.last_path(out_dir))
            self.assertEqual(last.epoch, 2)
            self.assertEqual(len(last.history), 2)

    def test_resume_matches_uninterrupted(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            full_dir = os.path.join(tmpdir, "full")
            full = small_trainer(checkpoint_interval=1)
            full.fit(self.splits, full_dir)

            resumed = small_trainer(checkpoint_interval=1)
            resumed_dir = os.path.join(tmpdir, "resumed")
            history = resumed.fit(
                self.splits, resumed_dir, resume_from=CheckpointIO.epoch_path(full_dir, 1)
            )
            self.assertEqual([r["epoch"] for r in history], [1, 2])
            for name, module in full.models.all_modules().items():
                self.assertTrue(
                    close_state(snapshot(module), snapshot(resumed.models.all_modules()[name])),
                    name,
                )

    def test_constant_phase_only(self):
        trainer = small_trainer(epochs_decay=0, validate=False)
        with tempfile.TemporaryDirectory() as out_dir:
            history = trainer.fit(self.splits, out_dir)
            self.assertEqual(len(history), 1)
            self.assertEqual(history[0]["lr"], 2e-4)
            self.assertIsNone(history[0]["val_ssim"])
            self.assertFalse(os.path.exists(CheckpointIO.best_path(out_dir)))
            self.assertEqual(CheckpointIO.find_for_inference(out_dir), CheckpointIO.last_path(out_dir))

    def test_empty_train_split(self):
        splits = PairedDataIO.load_dataset(self.data_dir, SplitSpec(0, 2, 2))
        with tempfile.TemporaryDirectory() as out_dir:
            with self.assertRaises(ValueError):
                small_trainer().fit(splits, out_dir)


class TestOverfit(unittest.TestCase):
    def _pairs(self, tmpdir: str) -> list[dict]:
        SyntheticFaces.write_dataset(tmpdir, count=2, seed=3)
        samples = PairedDataIO.load_dataset(tmpdir, SplitSpec(2, 0, 0))["train"]
        return [{"photo": s.photo[None], "sketch": s.sketch[None]} for s in samples]

    def _syn_curve(self, trainer: SketchTrainer, pairs: list[dict], steps: int) -> list[float]:
        curve = []
        for i in range(steps):
            g, _ = trainer.train_step(pairs[i % len(pairs)])
            curve.append((float(g.terms["syn_A"][2]) + float(g.terms["syn_B"][2])) / 2)
        return curve

    def test_two_pairs_loss_halves(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            pairs = self._pairs(tmpdir)
            trainer = SketchTrainer(
                TrainConfig(epochs_constant=1, epochs_decay=1, replay_buffer_size=4),
                GeneratorSpec().with_widths(16, 3),
                SMALL_D,
                config_hash="test",
            )
            curve = self._syn_curve(trainer, pairs, 200)
            self.assertTrue(all(math.isfinite(v) for v in curve))
            self.assertLessEqual(curve[199], 0.5 * curve[9])

    @unittest.skipUnless(os.environ.get("FACESKETCH_SLOW_TESTS") == "1", "slow")
    def test_two_pairs_full_model(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            pairs = self._pairs(tmpdir)
            trainer = SketchTrainer(TrainConfig(epochs_constant=1, epochs_decay=1))
            curve = self._syn_curve(trainer, pairs, 200)
            self.assertTrue(all(math.isfinite(v) for v in curve))
            self.assertLessEqual(curve[199], 0.5 * curve[9])


if __name__ == "__main__":
    unittest.main()
