import json
import os
import tempfile
import unittest

from facesketch import SketchConfig, SketchConfigIO, TrainConfig


class TestSketchConfig(unittest.TestCase):
    def setUp(self):
        self.config = SketchConfig()

    # ----------------- defaults -----------------
    def test_defaults(self):
        cfg = self.config.train_config()
        self.assertEqual((cfg.epochs_constant, cfg.epochs_decay), (100, 100))
        self.assertEqual(cfg.base_lr, 2e-4)
        self.assertEqual((cfg.adam_beta1, cfg.adam_beta2), (0.5, 0.999))
        self.assertEqual(cfg.ablation_level_mask, frozenset({64, 128, 256}))
        self.assertEqual(cfg.replay_buffer_size, 50)
        self.assertEqual(cfg.weights.lambda_A, (1.0, 1.0, 1.0))
        self.assertEqual(cfg.weights.eta_B, (0.7, 0.7, 0.7))
        self.assertEqual(self.config.split_spec().sizes(), {"train": 60, "val": 28, "test": 100})
        self.assertEqual(self.config.aligner().crop_size, (200, 250))
        self.assertEqual(self.config.discriminator_spec().strides, (2, 2, 2, 1))

    # ----------------- overrides -----------------
    def test_overrides(self):
        self.config.apply_overrides(
            [
                "trainer.epochs_constant=3",
                "base_lr=0.001",
                "seed=7",
                "ablation_level_mask=[256]",
                "dataset.root=/data/cuhk",
                "objective.lambda_A=[1, 2, 3]",
            ]
        )
        cfg = self.config.train_config()
        self.assertEqual(cfg.epochs_constant, 3)
        self.assertEqual(cfg.base_lr, 0.001)
        self.assertEqual(cfg.seed, 7)
        self.assertEqual(cfg.ablation_level_mask, frozenset({256}))
        self.assertEqual(cfg.weights.lambda_A, (1.0, 2.0, 3.0))
        self.assertEqual(cfg.weights.lambda_B, (1.0, 1.0, 1.0))
        self.assertEqual(self.config.get("root"), "/data/cuhk")
        self.assertEqual(self.config.split_spec().seed, 7)

    def test_string_values(self):
        self.config.set("model.generator", SketchConfig.parse_value("C7S1-8, C3-16, C3-32, RB32x1, TC8, TC4, C7S1-3"))
        self.assertEqual(self.config.generator_spec().layers, "C7S1-8, C3-16, C3-32, RB32x1, TC8, TC4, C7S1-3")
        self.assertEqual(SketchConfig.parse_value("C8-C16-C32-C64"), "C8-C16-C32-C64")
        self.assertIs(SketchConfig.parse_value("False"), False)

    def test_unknown_keys(self):
        with self.assertRaises(KeyError):
            self.config.set("trainer.momentum", 0.9)
        with self.assertRaises(KeyError):
            self.config.set("nonsense", 1)
        with self.assertRaises(KeyError):
            SketchConfig({"optimizer": {"lr": 1}})
        with self.assertRaises(KeyError):
            SketchConfig({"trainer": {"lr": 1}})
        with self.assertRaises(ValueError):
            self.config.apply_overrides(["trainer.epochs_constant"])

    def test_validate(self):
        with self.assertRaises(ValueError):
            self.config.copy().set("ablation_level_mask", []).validate()
        with self.assertRaises(ValueError):
            self.config.copy().set("ablation_level_mask", [32]).validate()
        with self.assertRaises(ValueError):
            self.config.copy().set("gan_mode", "wgan").validate()
        with self.assertRaises(ValueError):
            self.config.copy().set("model.generator", "C7S1-64, Q9").validate()
        self.assertIs(self.config.validate(), self.config)

    # ----------------- hash/io -----------------
    def test_hash(self):
        copy = self.config.copy()
        self.assertEqual(copy.config_hash(), self.config.config_hash())
        copy.set("seed", 1)
        self.assertNotEqual(copy.config_hash(), self.config.config_hash())
        self.assertEqual(len(self.config.config_hash()), 64)

    def test_json_round_trip(self):
        self.config.set("trainer.batch_size", 4)
        with tempfile.TemporaryDirectory() as tmpdir:
            filepath = os.path.join(tmpdir, "config.json")
            SketchConfigIO.save_to_json_file(self.config, filepath)
            loaded = SketchConfigIO.load_from_json_file(filepath)
            self.assertEqual(loaded.to_dict(), self.config.to_dict())
            self.assertEqual(loaded.config_hash(), self.config.config_hash())

            with open(filepath, "w", encoding="utf-8") as f:
                json.dump([1, 2, 3], f)
            with self.assertRaises(ValueError):
                SketchConfigIO.load_from_json_file(filepath)

    def test_partial_file(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            filepath = os.path.join(tmpdir, "config.json")
            with open(filepath, "w", encoding="utf-8") as f:
                json.dump({"trainer": {"epochs_decay": 0}, "seed": 3}, f)
            loaded = SketchConfigIO.load_from_json_file(filepath)
            self.assertEqual(loaded.train_config().epochs_decay, 0)
            self.assertEqual(loaded["trainer"]["epochs_constant"], 100)
            self.assertEqual(loaded["seed"], 3)


class TestTrainConfig(unittest.TestCase):
    def test_invalid(self):
        with self.assertRaises(ValueError):
            TrainConfig(epochs_constant=0, epochs_decay=0)
        with self.assertRaises(ValueError):
            TrainConfig(base_lr=-1.0)
        with self.assertRaises(ValueError):
            TrainConfig(batch_size=0)
        with self.assertRaises(ValueError):
            TrainConfig(ablation_level_mask=frozenset())

    def test_total_epochs(self):
        self.assertEqual(TrainConfig().total_epochs(), 200)
        self.assertEqual(TrainConfig(epochs_constant=5, epochs_decay=0).total_epochs(), 5)
        self.assertEqual(TrainConfig(ablation_level_mask=[256]).ablation_level_mask, frozenset({256}))


if __name__ == "__main__":
    unittest.main()
