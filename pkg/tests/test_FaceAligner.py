import math
import unittest

import numpy as np
import torch
from skimage.transform import SimilarityTransform, warp

from facesketch import FaceAligner, LandmarkAnnotation


def wave_image(height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    return 127.5 + 100.0 * np.sin(xx / 9.0) * np.cos(yy / 13.0)


class TestLandmarkAnnotation(unittest.TestCase):
    def test_inter_ocular(self):
        lm = LandmarkAnnotation("a", (10.0, 20.0), (13.0, 24.0))
        self.assertAlmostEqual(lm.inter_ocular(), 5.0)

    def test_check_degenerate(self):
        lm = LandmarkAnnotation("a", (50.0, 50.0), (50.0, 50.0))
        with self.assertRaises(ValueError):
            lm.check()

    def test_check_order_and_bounds(self):
        with self.assertRaises(ValueError):
            LandmarkAnnotation("a", (80.0, 50.0), (40.0, 50.0)).check()
        with self.assertRaises(ValueError):
            LandmarkAnnotation("a", (40.0, 50.0), (120.0, 50.0)).check(100, 100)
        LandmarkAnnotation("a", (40.0, 50.0), (60.0, 50.0)).check(100, 100)


class TestFaceAligner(unittest.TestCase):
    def setUp(self):
        self.aligner = FaceAligner()

    # ----------------- align_and_crop -----------------
    def test_canonical_is_identity(self):
        image = wave_image(250, 200)
        lm = LandmarkAnnotation("c", (75.0, 125.0), (125.0, 125.0))
        np.testing.assert_allclose(self.aligner.transform_for(lm).params, np.eye(3), atol=1e-12)
        out = self.aligner.align_and_crop(image, lm)
        self.assertEqual(out.shape, (250, 200))
        np.testing.assert_allclose(out, image, atol=1e-3)

    def test_crop_size_color(self):
        image = np.stack([wave_image(300, 240)] * 3, axis=2)
        lm = LandmarkAnnotation("c", (100.0, 140.0), (145.0, 150.0))
        out = self.aligner.align_and_crop(image, lm)
        self.assertEqual(out.shape, (250, 200, 3))

    def test_rotation_is_undone(self):
        image = wave_image(400, 400)
        left, right = np.array([175.0, 200.0]), np.array([225.0, 200.0])
        mx, my = (left + right) / 2
        theta = math.radians(10.0)
        c, s = math.cos(theta), math.sin(theta)
        rotation = SimilarityTransform(
            matrix=np.array(
                [
                    [c, -s, mx - c * mx + s * my],
                    [s, c, my - s * mx - c * my],
                    [0.0, 0.0, 1.0],
                ]
            )
        )
        rotated = warp(image, rotation.inverse, order=3, mode="edge", preserve_range=True)
        new_left, new_right = rotation(np.stack([left, right]))

        base = self.aligner.align_and_crop(image, LandmarkAnnotation("u", tuple(left), tuple(right)))
        undone = self.aligner.align_and_crop(
            rotated, LandmarkAnnotation("r", tuple(new_left), tuple(new_right))
        )
        self.assertLess(np.mean(np.abs(base - undone)) / 255.0, 0.02)

    def test_zero_inter_ocular(self):
        image = wave_image(250, 200)
        with self.assertRaises(ValueError):
            self.aligner.align_and_crop(image, LandmarkAnnotation("z", (90.0, 90.0), (90.0, 90.0)))

    def test_custom_crop(self):
        aligner = FaceAligner(
            {"width": 100, "height": 120, "left_eye": (30.0, 60.0), "right_eye": (70.0, 60.0)}
        )
        self.assertEqual(aligner.crop_size, (100, 120))
        out = aligner.align_and_crop(
            wave_image(250, 200), LandmarkAnnotation("c", (75.0, 125.0), (125.0, 125.0))
        )
        self.assertEqual(out.shape, (120, 100))

        with self.assertRaises(KeyError):
            FaceAligner({"eye_distance": 50})
        with self.assertRaises(ValueError):
            FaceAligner({"left_eye": (125.0, 125.0), "right_eye": (75.0, 125.0)})

    # ----------------- to_model_resolution -----------------
    def test_constant_images(self):
        for value, expected in ((128, 128 / 127.5 - 1), (0, -1.0), (255, 1.0)):
            x = FaceAligner.to_model_resolution(np.full((250, 200, 3), value, dtype=np.uint8))
            self.assertEqual(tuple(x.shape), (3, 256, 256))
            self.assertTrue(torch.allclose(x, torch.full_like(x, expected), atol=1e-5))

    def test_gray_input_replicated(self):
        x = FaceAligner.to_model_resolution(wave_image(250, 200))
        self.assertEqual(tuple(x.shape), (3, 256, 256))
        self.assertTrue(torch.equal(x[0], x[1]) and torch.equal(x[1], x[2]))
        self.assertLessEqual(float(x.abs().max()), 1.0)

    def test_malformed_input(self):
        with self.assertRaises(ValueError):
            FaceAligner.to_model_resolution(np.zeros((250, 200, 2)))

    # ----------------- conversions -----------------
    def test_luminance(self):
        image = np.zeros((4, 4, 3))
        image[..., 0] = 100
        np.testing.assert_allclose(FaceAligner.to_luminance(image), 29.9)
        chw = torch.zeros(3, 4, 4)
        chw[2] = 200
        np.testing.assert_allclose(FaceAligner.to_luminance(chw), 22.8)

    def test_tensor_to_uint8(self):
        x = torch.stack([torch.full((2, 2), v) for v in (-1.0, 0.0, 1.0)])
        img = FaceAligner.tensor_to_uint8(x)
        self.assertEqual(img.shape, (2, 2, 3))
        self.assertEqual(img.dtype, np.uint8)
        self.assertEqual(img[0, 0].tolist(), [0, 128, 255])


if __name__ == "__main__":
    unittest.main()
