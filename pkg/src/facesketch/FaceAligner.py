import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from skimage.transform import SimilarityTransform, warp

from .utils import MODEL_SIZE
from .utils import Types as T


@dataclass(frozen=True)
class LandmarkAnnotation:
    """
    Eye centers of one source image, in source-image pixel coordinates (x right, y down).
    """

    image_id: str
    left_eye: T.Point
    right_eye: T.Point

    def inter_ocular(self) -> float:
        (lx, ly), (rx, ry) = self.left_eye, self.right_eye
        return math.hypot(rx - lx, ry - ly)

    def check(self, width: int | None = None, height: int | None = None) -> None:
        """
        Raise ValueError if the annotation cannot drive an alignment.
        """
        if self.inter_ocular() == 0:
            raise ValueError(
                f"Degenerate landmarks for {self.image_id!r}: zero inter-ocular distance"
            )
        if not self.left_eye[0] < self.right_eye[0]:
            raise ValueError(
                f"Invalid landmarks for {self.image_id!r}: "
                f"left_eye={self.left_eye} must lie left of right_eye={self.right_eye}"
            )
        if width is not None and height is not None:
            for x, y in (self.left_eye, self.right_eye):
                if not (0 <= x < width and 0 <= y < height):
                    raise ValueError(
                        f"Landmark ({x}, {y}) of {self.image_id!r} outside image "
                        f"bounds {width}x{height}"
                    )


class FaceAligner:
    """
    Eye-based similarity alignment, crop and model-resolution conversion.
    """

    _DEFAULT_CROP = {
        "width": 200,
        "height": 250,
        "left_eye": (75.0, 125.0),
        "right_eye": (125.0, 125.0),
    }

    def __init__(self, crop: dict | None = None):
        self._crop = dict(self._DEFAULT_CROP)
        if isinstance(crop, dict):
            for key, value in crop.items():
                if key not in self._crop:
                    raise KeyError(f"Unknown crop option: {key!r}")
                self._crop[key] = value

        canonical = LandmarkAnnotation(
            "canonical", tuple(self._crop["left_eye"]), tuple(self._crop["right_eye"])
        )
        canonical.check(self._crop["width"], self._crop["height"])

    @property
    def crop_size(self) -> tuple[int, int]:
        """(width, height) of the aligned crop."""
        return int(self._crop["width"]), int(self._crop["height"])

    def transform_for(self, landmarks: LandmarkAnnotation) -> SimilarityTransform:
        """
        Similarity transform mapping source eye centers onto the canonical ones.
        """
        landmarks.check()
        src_l = np.asarray(landmarks.left_eye, dtype=np.float64)
        src_r = np.asarray(landmarks.right_eye, dtype=np.float64)
        dst_l = np.asarray(self._crop["left_eye"], dtype=np.float64)
        dst_r = np.asarray(self._crop["right_eye"], dtype=np.float64)

        # two point pairs fix rotation, scale and translation exactly
        src_v = src_r - src_l
        dst_v = dst_r - dst_l
        scale = np.linalg.norm(dst_v) / np.linalg.norm(src_v)
        angle = math.atan2(dst_v[1], dst_v[0]) - math.atan2(src_v[1], src_v[0])
        rot = scale * np.array(
            [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
        )
        shift = dst_l - rot @ src_l
        return SimilarityTransform(scale=scale, rotation=angle, translation=shift)

    def align_and_crop(self, image: T.Image, landmarks: LandmarkAnnotation) -> T.Image:
        """
        Warp `image` (HxW or HxWxC, values in [0,255]) so the eyes land on the canonical
        positions, returning a height x width crop as float64.
        """
        image = np.asarray(image)
        if image.ndim not in (2, 3):
            raise ValueError(f"Image must be HxW or HxWxC, but shape is {image.shape}")
        landmarks.check(image.shape[1], image.shape[0])

        width, height = self.crop_size
        tform = self.transform_for(landmarks)
        return warp(
            image.astype(np.float64),
            tform.inverse,
            output_shape=(height, width),
            order=3,
            mode="edge",
            preserve_range=True,
        )

    @staticmethod
    def to_model_resolution(image: T.Image) -> T.Tensor:
        """
        Anisotropic resize to 256x256 and map [0,255] to [-1,1]; returns a 3x256x256 tensor.
        Grayscale inputs are replicated to three channels.
        """
        image = np.asarray(image, dtype=np.float32)
        if image.ndim == 2:
            image = np.repeat(image[:, :, None], 3, axis=2)
        elif image.ndim == 3 and image.shape[2] == 1:
            image = np.repeat(image, 3, axis=2)
        elif image.ndim == 3 and image.shape[2] == 4:
            image = image[:, :, :3]
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"Malformed image: shape {image.shape}")

        x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]
        if x.shape[-2:] != (MODEL_SIZE, MODEL_SIZE):
            x = F.interpolate(
                x,
                size=(MODEL_SIZE, MODEL_SIZE),
                mode="bicubic",
                align_corners=False,
                antialias=True,
            )
        x = x[0] / 127.5 - 1.0
        return x.clamp(-1.0, 1.0)

    @staticmethod
    def to_luminance(image: T.Image | T.Tensor) -> T.Image:
        """
        Fixed BT.601 luminance, Y = 0.299 R + 0.587 G + 0.114 B.
        Accepts HxW, HxWx3 or 3xHxW; a 2-D input is returned unchanged (as float64).
        """
        if isinstance(image, torch.Tensor):
            image = image.detach().cpu().numpy()
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 2:
            return image
        if image.ndim == 3 and image.shape[0] == 3 and image.shape[2] != 3:
            image = image.transpose(1, 2, 0)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"Cannot take luminance of shape {image.shape}")
        return image @ np.array([0.299, 0.587, 0.114])

    @staticmethod
    def tensor_to_uint8_range(x: T.Tensor) -> T.Image:
        """
        Map a [-1,1] image tensor (3xHxW) to an HxWx3 float array in [0,255].
        """
        x = x.detach().cpu().clamp(-1.0, 1.0)
        return ((x + 1.0) * 127.5).permute(1, 2, 0).numpy().astype(np.float64)

    @staticmethod
    def tensor_to_uint8(x: T.Tensor) -> T.Image:
        """
        8-bit HxWx3 image of a [-1,1] tensor, rounding half up.
        """
        scaled = FaceAligner.tensor_to_uint8_range(x)
        return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
