import os
import tempfile
import unittest

import numpy as np
import torch

from facesketch import CMCCurve, ResultRenderer


class TestResultRenderer(unittest.TestCase):
    def setUp(self):
        self.renderer = ResultRenderer()
        self.tensor = torch.rand(3, 32, 32) * 2 - 1
        self.array = np.full((32, 32), 200.0)

    def test_to_display(self):
        img = ResultRenderer.to_display(self.tensor)
        self.assertEqual(img.shape, (32, 32, 3))
        self.assertEqual(img.dtype, np.uint8)
        gray = ResultRenderer.to_display(self.array)
        self.assertEqual(gray.shape, (32, 32, 3))
        self.assertEqual(int(gray.max()), 200)

    def test_grid_returns_fig_axes(self):
        fig, axes = self.renderer.draw_grid_return_fig(
            [[self.tensor, self.array], [None, self.tensor]],
            ["input", "output"],
            row_labels=["a", "b"],
        )
        self.assertIsNotNone(fig)
        self.assertEqual(axes.shape, (2, 2))
        fig.clf()

    def test_grid_errors(self):
        with self.assertRaises(ValueError):
            self.renderer.draw_grid_return_fig([], ["input"])
        with self.assertRaises(ValueError):
            self.renderer.draw_grid_return_fig([[self.tensor]], ["input", "output"])

    def test_comparison_saves_file(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            filepath = os.path.join(tmpdir, "grid.png")
            self.renderer.draw_comparison(
                [self.tensor, self.tensor], [self.array, self.array], [None, None], filename=filepath
            )
            self.assertGreater(os.path.getsize(filepath), 0)
        with self.assertRaises(ValueError):
            self.renderer.draw_comparison([self.tensor], [])

    def test_ablation_figure(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            filepath = os.path.join(tmpdir, "ablation.png")
            self.renderer.draw_ablation(
                [self.tensor],
                [self.array],
                {"C-D256": [self.tensor], "C-D256,128,64": [self.tensor]},
                filename=filepath,
            )
            self.assertTrue(os.path.exists(filepath))

    def test_cmc(self):
        curves = {"a": CMCCurve([0.5, 0.8, 1.0]), "b": CMCCurve([0.9, 1.0, 1.0])}
        fig, ax = self.renderer.draw_cmc_return_fig(curves, title="photo matching")
        lines = ax.get_lines()
        self.assertEqual(len(lines), 2)
        np.testing.assert_allclose(lines[0].get_ydata(), [50.0, 80.0, 100.0])
        self.assertEqual(ax.get_ylabel(), "Matching rate (%)")
        fig.clf()

        with tempfile.TemporaryDirectory() as tmpdir:
            filepath = os.path.join(tmpdir, "cmc.png")
            self.renderer.draw_cmc(curves, filename=filepath)
            self.assertGreater(os.path.getsize(filepath), 0)

    def test_style_override(self):
        renderer = ResultRenderer({"cmc": {"ylabel": "Rate"}, "dpi": 50})
        fig, ax = renderer.draw_cmc_return_fig({"a": CMCCurve([1.0])})
        self.assertEqual(ax.get_ylabel(), "Rate")
        self.assertEqual(ax.get_xlabel(), "Rank")
        fig.clf()


if __name__ == "__main__":
    unittest.main()
