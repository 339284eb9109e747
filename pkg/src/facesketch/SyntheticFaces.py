import math
import os

import numpy as np
from PIL import Image
from skimage import draw, filters

from .FaceAligner import LandmarkAnnotation
from .PairedData import PairedDataIO
from .utils import logger, numpy_rng


class SyntheticFaces:
    """
    Procedural face-like photos with edge-filtered "sketches", written in the
    paired dataset layout. Each identity gets its own skin tone, hair shape,
    background texture and a small random pose.
    """

    _SIZE = (240, 300)  # width, height of the source images

    @staticmethod
    def render_face(rng: np.random.Generator) -> tuple[np.ndarray, LandmarkAnnotation]:
        width, height = SyntheticFaces._SIZE
        cx = width / 2 + rng.uniform(-10, 10)
        cy = height / 2 + rng.uniform(-10, 10)
        scale = rng.uniform(0.9, 1.1)
        angle = rng.uniform(-0.15, 0.15)

        # background: smooth per-identity texture
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        fx, fy, phase = rng.uniform(0.02, 0.12), rng.uniform(0.02, 0.12), rng.uniform(0, 6.28)
        base = rng.uniform(60, 200, size=3)
        wave = 30 * np.sin(fx * xx + fy * yy + phase)
        image = np.clip(base[None, None, :] + wave[:, :, None], 0, 255)

        def rot(dx: float, dy: float) -> tuple[float, float]:
            c, s = math.cos(angle), math.sin(angle)
            return cx + scale * (c * dx - s * dy), cy + scale * (s * dx + c * dy)

        # hair, face, eyes, nose, mouth
        hair = rng.uniform(10, 90, size=3)
        rr, cc = draw.ellipse(
            *rot(0, -25)[::-1], 95 * scale, 80 * scale * rng.uniform(0.9, 1.2),
            shape=(height, width), rotation=-angle,
        )
        image[rr, cc] = hair
        skin = np.array([rng.uniform(170, 240), rng.uniform(130, 200), rng.uniform(100, 170)])
        rr, cc = draw.ellipse(
            *rot(0, 10)[::-1], 85 * scale, 65 * scale, shape=(height, width), rotation=-angle
        )
        image[rr, cc] = skin

        eye_dx, eye_dy = 25 * rng.uniform(0.9, 1.1), -10
        left, right = rot(-eye_dx, eye_dy), rot(eye_dx, eye_dy)
        for ex, ey in (left, right):
            rr, cc = draw.disk((ey, ex), 7 * scale, shape=(height, width))
            image[rr, cc] = 250
            rr, cc = draw.disk((ey, ex), 3.5 * scale, shape=(height, width))
            image[rr, cc] = 20
        nx, ny = rot(0, 20)
        rr, cc = draw.polygon(
            [ny - 12 * scale, ny + 8 * scale, ny + 8 * scale],
            [nx, nx - 7 * scale, nx + 7 * scale],
            shape=(height, width),
        )
        image[rr, cc] = skin * 0.8
        mx, my = rot(0, 45)
        rr, cc = draw.ellipse(
            my, mx, 5 * scale, 18 * scale * rng.uniform(0.8, 1.2),
            shape=(height, width), rotation=-angle,
        )
        image[rr, cc] = (150, 40, 50)

        image = filters.gaussian(image, sigma=1.0, channel_axis=-1, preserve_range=True)
        landmarks = LandmarkAnnotation("", left, right)
        return np.clip(image, 0, 255).astype(np.uint8), landmarks

    @staticmethod
    def sketch_of(photo: np.ndarray) -> np.ndarray:
        """
        Pencil-like rendering: inverted edge magnitude over a light paper tone.
        """
        gray = photo.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
        edges = filters.sobel(gray / 255.0)
        shade = filters.gaussian(gray / 255.0, sigma=3.0)
        sketch = 1.0 - np.clip(4.0 * edges, 0, 1)
        sketch = sketch * (0.75 + 0.25 * shade)
        return np.clip(sketch * 255.0, 0, 255).astype(np.uint8)

    @staticmethod
    def write_dataset(root_dir: str, count: int = 16, seed: int = 0) -> list[str]:
        """
        Write `count` identities to root_dir/{photos,sketches,landmarks.txt}.
        Returns the identity list.
        """
        photo_dir = os.path.join(root_dir, "photos")
        sketch_dir = os.path.join(root_dir, "sketches")
        os.makedirs(photo_dir, exist_ok=True)
        os.makedirs(sketch_dir, exist_ok=True)

        identities, annotations = [], []
        for i in range(count):
            identity = f"face{i:04d}"
            photo, lm = SyntheticFaces.render_face(numpy_rng(seed, i))
            Image.fromarray(photo).save(os.path.join(photo_dir, f"{identity}.png"))
            Image.fromarray(SyntheticFaces.sketch_of(photo)).save(
                os.path.join(sketch_dir, f"{identity}.png")
            )
            annotations.append(LandmarkAnnotation(identity, lm.left_eye, lm.right_eye))
            identities.append(identity)

        PairedDataIO.save_landmarks(annotations, os.path.join(root_dir, "landmarks.txt"))
        logger.info(f"Saved {count} synthetic pairs to {root_dir}")
        return identities
