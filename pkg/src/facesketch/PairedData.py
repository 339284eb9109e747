import os
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from torch.utils.data import DataLoader, Dataset

from .FaceAligner import FaceAligner, LandmarkAnnotation
from .utils import LEVELS, MODEL_SIZE, logger, numpy_rng, torch_rng
from .utils import Types as T

SPLIT_NAMES = ("train", "val", "test")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class ResolutionPyramid:
    """
    One image at the three supervision resolutions (64, 128, 256).
    Works for single images (3xHxW) and batches (Nx3xHxW).
    """

    level1: T.Tensor
    level2: T.Tensor
    level3: T.Tensor

    def levels(self) -> tuple[T.Tensor, T.Tensor, T.Tensor]:
        return (self.level1, self.level2, self.level3)

    def __getitem__(self, level: int) -> T.Tensor:
        if level not in LEVELS:
            raise KeyError(f"Invalid level: {level=} must be one of {LEVELS}")
        return self.levels()[LEVELS.index(level)]

    def __iter__(self):
        return iter(self.levels())

    def __len__(self):
        return 3


def make_pyramid(image: T.Tensor) -> ResolutionPyramid:
    """
    Antialiased bicubic downsampling of a 256 image to 128 and 64; level3 is the input itself.
    """
    if image.shape[-2:] != (MODEL_SIZE, MODEL_SIZE):
        raise ValueError(
            f"Pyramid input must be {MODEL_SIZE}x{MODEL_SIZE}, but shape is {tuple(image.shape)}"
        )
    batched = image.dim() == 4
    x = image if batched else image.unsqueeze(0)

    downs = []
    for size in LEVELS[:2]:
        y = F.interpolate(
            x, size=(size, size), mode="bicubic", align_corners=False, antialias=True
        ).clamp(-1.0, 1.0)
        downs.append(y if batched else y[0])
    return ResolutionPyramid(downs[0], downs[1], image)


@dataclass
class PairedSample:
    """
    Aligned photo and sketch of one identity, both 3x256x256 in [-1,1].
    `photo_input` / `sketch_input` are the generator inputs; they differ from the clean
    images only after noise augmentation.
    """

    identity: str
    photo: T.Tensor
    sketch: T.Tensor
    split: str
    photo_input: T.Tensor | None = None
    sketch_input: T.Tensor | None = None
    flipped: bool = False

    def __post_init__(self):
        if self.split not in SPLIT_NAMES:
            raise ValueError(f"Invalid split: {self.split=} must be in {SPLIT_NAMES}")
        for name in ("photo", "sketch"):
            x = getattr(self, name)
            if tuple(x.shape) != (3, MODEL_SIZE, MODEL_SIZE):
                raise ValueError(
                    f"{name} of {self.identity!r} must be 3x256x256, but shape is {tuple(x.shape)}"
                )
            if not torch.isfinite(x).all():
                raise ValueError(f"{name} of {self.identity!r} has non-finite values")
            if x.min() < -1.0 or x.max() > 1.0:
                raise ValueError(f"{name} of {self.identity!r} leaves [-1,1]")
        if self.photo_input is None:
            self.photo_input = self.photo
        if self.sketch_input is None:
            self.sketch_input = self.sketch

    def as_item(self) -> dict:
        return {
            "identity": self.identity,
            "photo": self.photo.clone(),
            "sketch": self.sketch.clone(),
            "photo_input": self.photo_input.clone(),
            "sketch_input": self.sketch_input.clone(),
        }


@dataclass(frozen=True)
class SplitSpec:
    train: int
    val: int
    test: int
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in SPLIT_NAMES:
            if getattr(self, name) < 0:
                raise ValueError(f"Split size must be non-negative: {name}={getattr(self, name)}")

    @classmethod
    def cuhk(cls) -> "SplitSpec":
        return cls(60, 28, 100)

    @classmethod
    def cufsf(cls) -> "SplitSpec":
        return cls(600, 297, 297)

    def sizes(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in SPLIT_NAMES}

    def total(self) -> int:
        return self.train + self.val + self.test


@dataclass(frozen=True)
class PairedRecord:
    identity: str
    photo_path: str
    sketch_path: str
    landmarks: LandmarkAnnotation


@dataclass
class DatasetSplit:
    """
    Ordered samples of one split. Samples come either from in-memory PairedSamples or
    lazily from on-disk records (preprocessed on first access and cached).
    """

    name: str
    records: list[PairedRecord] = field(default_factory=list)
    augmentation_enabled: bool = False
    aligner: FaceAligner | None = None
    preloaded: list[PairedSample] | None = field(default=None, repr=False)
    _cache: dict[int, PairedSample] = field(default_factory=dict, repr=False)

    @classmethod
    def from_samples(
        cls, name: str, samples: list[PairedSample], augmentation_enabled: bool = False
    ) -> "DatasetSplit":
        return cls(
            name=name, augmentation_enabled=augmentation_enabled, preloaded=list(samples)
        )

    def __len__(self):
        if self.preloaded is not None:
            return len(self.preloaded)
        return len(self.records)

    def __getitem__(self, index: int) -> PairedSample:
        if not 0 <= index < len(self):
            raise IndexError(f"Sample index out of range: {index=}, size={len(self)}")
        if self.preloaded is not None:
            return self.preloaded[index]
        if index not in self._cache:
            self._cache[index] = PairedDataIO.load_sample(
                self.records[index], self.name, self.aligner or FaceAligner()
            )
        return self._cache[index]

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def identities(self) -> list[str]:
        if self.preloaded is not None:
            return [s.identity for s in self.preloaded]
        return [r.identity for r in self.records]


class PairedDataIO:
    """
    Helper for reading paired photo/sketch datasets laid out as
    <root>/photos/<id>.<ext>, <root>/sketches/<id>.<ext>, <root>/landmarks.txt
    """

    @staticmethod
    def read_landmarks(filepath: str) -> dict[str, LandmarkAnnotation]:
        """
        Parse `<id> <lx> <ly> <rx> <ry>` lines; blank lines and '#' comments are skipped.
        """
        landmarks: dict[str, LandmarkAnnotation] = {}
        with open(filepath, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 5:
                    raise ValueError(
                        f"Malformed landmark line {lineno} in {filepath}: {line!r}"
                    )
                image_id = parts[0]
                try:
                    lx, ly, rx, ry = (float(v) for v in parts[1:])
                except ValueError as e:
                    raise ValueError(
                        f"Malformed landmark line {lineno} in {filepath}: {line!r}"
                    ) from e
                landmarks[image_id] = LandmarkAnnotation(image_id, (lx, ly), (rx, ry))
        return landmarks

    @staticmethod
    def save_landmarks(landmarks: list[LandmarkAnnotation], filepath: str) -> None:
        with open(filepath, "w", encoding="utf-8") as f:
            for lm in landmarks:
                (lx, ly), (rx, ry) = lm.left_eye, lm.right_eye
                f.write(f"{lm.image_id} {lx:.3f} {ly:.3f} {rx:.3f} {ry:.3f}\n")

    @staticmethod
    def find_images(directory: str) -> dict[str, str]:
        """
        Map file stem to path for every accepted raster file in `directory`.
        """
        if not os.path.isdir(directory):
            return {}
        found: dict[str, str] = {}
        for name in sorted(os.listdir(directory)):
            stem, ext = os.path.splitext(name)
            if ext.lower() in IMAGE_SUFFIXES:
                if stem in found:
                    raise ValueError(f"Duplicate image for identity {stem!r} in {directory}")
                found[stem] = os.path.join(directory, name)
        return found

    @staticmethod
    def read_image(filepath: str) -> T.Image:
        """
        Read a raster file as an HxWx3 uint8 array.
        """
        with Image.open(filepath) as img:
            return np.asarray(img.convert("RGB"))

    @staticmethod
    def load_sample(record: PairedRecord, split: str, aligner: FaceAligner) -> PairedSample:
        try:
            photo = PairedDataIO.read_image(record.photo_path)
            sketch = PairedDataIO.read_image(record.sketch_path)
        except (OSError, UnidentifiedImageError) as e:
            raise ValueError(f"Unreadable image for identity {record.identity!r}") from e

        try:
            photo = aligner.align_and_crop(photo, record.landmarks)
            sketch = aligner.align_and_crop(sketch, record.landmarks)
        except ValueError as e:
            raise ValueError(f"Cannot align identity {record.identity!r}") from e

        # sketches share the photo layout: grayscale replicated to 3 channels
        sketch = np.repeat(FaceAligner.to_luminance(sketch)[:, :, None], 3, axis=2)
        return PairedSample(
            identity=record.identity,
            photo=FaceAligner.to_model_resolution(photo),
            sketch=FaceAligner.to_model_resolution(sketch),
            split=split,
        )

    @staticmethod
    def load_dataset(
        root_dir: str,
        split_spec: SplitSpec,
        aligner: FaceAligner | None = None,
        augment_train: bool = True,
    ) -> dict[str, DatasetSplit]:
        """
        Pair photos, sketches and landmarks under `root_dir` and partition them
        into train/val/test splits of exactly the configured sizes.
        """
        if not os.path.isdir(root_dir):
            raise FileNotFoundError(f"Dataset root not found: {root_dir}")

        photos = PairedDataIO.find_images(os.path.join(root_dir, "photos"))
        sketches = PairedDataIO.find_images(os.path.join(root_dir, "sketches"))
        if not photos and not sketches:
            raise ValueError(f"no paired samples found in {root_dir}")

        landmark_path = os.path.join(root_dir, "landmarks.txt")
        if not os.path.isfile(landmark_path):
            raise FileNotFoundError(f"Landmark file not found: {landmark_path}")
        landmarks = PairedDataIO.read_landmarks(landmark_path)

        records: list[PairedRecord] = []
        for identity in sorted(set(photos) | set(sketches)):
            if identity not in photos:
                raise FileNotFoundError(f"Missing photo for identity {identity!r}")
            if identity not in sketches:
                raise FileNotFoundError(f"Missing sketch for identity {identity!r}")
            if identity not in landmarks:
                raise ValueError(f"Missing landmark record for identity {identity!r}")
            records.append(
                PairedRecord(identity, photos[identity], sketches[identity], landmarks[identity])
            )

        if split_spec.total() > len(records):
            raise ValueError(
                f"Split sizes {split_spec.sizes()} exceed the {len(records)} available pairs"
            )
        if split_spec.shuffle:
            order = numpy_rng(split_spec.seed).permutation(len(records))
            records = [records[i] for i in order]
        if split_spec.total() < len(records):
            logger.info(
                f"{len(records) - split_spec.total()} pairs in {root_dir} are not assigned to any split"
            )

        aligner = aligner or FaceAligner()
        splits: dict[str, DatasetSplit] = {}
        start = 0
        for name, size in split_spec.sizes().items():
            chunk = records[start : start + size]
            if split_spec.shuffle:
                chunk = sorted(chunk, key=lambda r: r.identity)
            splits[name] = DatasetSplit(
                name=name,
                records=chunk,
                augmentation_enabled=augment_train and name == "train",
                aligner=aligner,
            )
            start += size

        logger.info(
            f"Loaded {root_dir}: "
            + ", ".join(f"{name}={len(split)}" for name, split in splits.items())
        )
        return splits


class PairedAugmenter:
    """
    Joint horizontal flip plus uniform noise on the generator inputs.
    """

    def __init__(self, flip_prob: float = 0.5, noise_amplitude: float = 0.02):
        if not 0.0 <= flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be in [0,1], but got {flip_prob}")
        if noise_amplitude < 0:
            raise ValueError(f"noise_amplitude must be non-negative, but got {noise_amplitude}")
        self.flip_prob = flip_prob
        self.noise_amplitude = noise_amplitude

    @staticmethod
    def flip(x: T.Tensor) -> T.Tensor:
        return torch.flip(x, dims=[-1])

    def augment(self, sample: PairedSample, rng: np.random.Generator) -> PairedSample:
        if sample.split != "train":
            raise ValueError(
                f"Augmentation applies to train samples only, got split={sample.split!r}"
            )

        photo, sketch = sample.photo, sample.sketch
        photo_in, sketch_in = sample.photo_input, sample.sketch_input
        flipped = sample.flipped

        # both draws are always taken, keeping the stream independent of the config
        do_flip = rng.random() < self.flip_prob
        noise = rng.uniform(-1.0, 1.0, size=(2, *photo.shape)).astype(np.float32)

        if do_flip:
            photo, sketch = self.flip(photo), self.flip(sketch)
            photo_in, sketch_in = self.flip(photo_in), self.flip(sketch_in)
            flipped = not flipped

        if self.noise_amplitude > 0:
            noise_t = torch.from_numpy(noise) * self.noise_amplitude
            photo_in = (photo_in + noise_t[0]).clamp(-1.0, 1.0)
            sketch_in = (sketch_in + noise_t[1]).clamp(-1.0, 1.0)

        return replace(
            sample,
            photo=photo,
            sketch=sketch,
            photo_input=photo_in,
            sketch_input=sketch_in,
            flipped=flipped,
        )


class PairedDataset(Dataset):
    """
    torch Dataset over a DatasetSplit. Augmentation randomness is keyed by
    (seed, epoch, index) so batch contents do not depend on worker scheduling.
    """

    def __init__(
        self,
        split: DatasetSplit,
        augmenter: PairedAugmenter | None = None,
        seed: int = 0,
    ):
        self.split = split
        self.augmenter = augmenter if split.augmentation_enabled else None
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self):
        return len(self.split)

    def __getitem__(self, index: int) -> dict:
        sample = self.split[index]
        if self.augmenter is not None:
            sample = self.augmenter.augment(sample, numpy_rng(self.seed, self.epoch, index))
        return sample.as_item()

    def loader(
        self,
        epoch: int,
        batch_size: int = 1,
        shuffle: bool | None = None,
        num_workers: int = 0,
    ) -> DataLoader:
        """
        Batches for one epoch; the shuffle order is drawn from (seed, epoch).
        """
        self.set_epoch(epoch)
        if shuffle is None:
            shuffle = self.split.name == "train"
        return DataLoader(
            self,
            batch_size=batch_size,
            shuffle=shuffle,
            num_workers=num_workers,
            generator=torch_rng(self.seed, epoch, 0xDA7A),
        )


def check_disjoint(splits: dict[str, DatasetSplit]) -> None:
    """
    Raise ValueError if an identity appears in more than one split.
    """
    seen: dict[str, str] = {}
    for name, split in splits.items():
        for identity in split.identities:
            if identity in seen:
                raise ValueError(
                    f"Identity {identity!r} appears in both {seen[identity]!r} and {name!r}"
                )
            seen[identity] = name
