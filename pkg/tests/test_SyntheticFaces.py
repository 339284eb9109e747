import os
import tempfile
import unittest

import numpy as np

from facesketch import PairedDataIO, SyntheticFaces
from facesketch.utils import numpy_rng


class TestSyntheticFaces(unittest.TestCase):
    def test_render_face(self):
        image, lm = SyntheticFaces.render_face(numpy_rng(0, 1))
        self.assertEqual(image.shape, (300, 240, 3))
        self.assertEqual(image.dtype, np.uint8)
        lm.check(image.shape[1], image.shape[0])
        self.assertGreater(lm.inter_ocular(), 30)

    def test_identities_differ(self):
        a, _ = SyntheticFaces.render_face(numpy_rng(0, 0))
        b, _ = SyntheticFaces.render_face(numpy_rng(0, 1))
        self.assertFalse(np.array_equal(a, b))

    def test_sketch_is_gray(self):
        image, _ = SyntheticFaces.render_face(numpy_rng(5))
        sketch = SyntheticFaces.sketch_of(image)
        self.assertEqual(sketch.shape, (300, 240))
        self.assertEqual(sketch.dtype, np.uint8)

    def test_write_dataset(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            ids = SyntheticFaces.write_dataset(tmpdir, count=3, seed=2)
            self.assertEqual(ids, ["face0000", "face0001", "face0002"])
            self.assertEqual(sorted(PairedDataIO.find_images(os.path.join(tmpdir, "photos"))), ids)
            self.assertEqual(sorted(PairedDataIO.find_images(os.path.join(tmpdir, "sketches"))), ids)
            landmarks = PairedDataIO.read_landmarks(os.path.join(tmpdir, "landmarks.txt"))
            self.assertEqual(sorted(landmarks), ids)

            with open(os.path.join(tmpdir, "landmarks.txt"), encoding="utf-8") as f:
                first = f.read()
            SyntheticFaces.write_dataset(tmpdir, count=3, seed=2)
            with open(os.path.join(tmpdir, "landmarks.txt"), encoding="utf-8") as f:
                self.assertEqual(f.read(), first)


if __name__ == "__main__":
    unittest.main()
