import csv
import os
from dataclasses import astuple, dataclass, fields

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .FaceAligner import FaceAligner, LandmarkAnnotation
from .PairedData import IMAGE_SUFFIXES, PairedDataIO
from .ResultRenderer import ResultRenderer
from .SketchTrainer import Checkpoint, CheckpointIO
from .utils import MODEL_SIZE, logger
from .utils import Types as T

SYNTH_DIRECTIONS = ("photo2sketch", "sketch2photo")
MODALITIES = {"photo2sketch": ("photo", "sketch"), "sketch2photo": ("sketch", "photo")}


@dataclass
class ManifestRow:
    input_path: str
    output_path: str
    direction: str
    checkpoint_hash: str
    status: str = "ok"


class SketchSynthesizer:
    """
    Inference with the level-256 outputs of a trained checkpoint. Normalization
    layers run with their stored statistics and parameters are never updated.
    """

    def __init__(self, ckpt: Checkpoint, device: str = "cpu"):
        self.ckpt = ckpt
        self.device = torch.device(device)
        self.models = ckpt.build_models().to(self.device).eval()
        for module in self.models.all_modules().values():
            module.requires_grad_(False)
        self.checkpoint_hash = ckpt.digest()

    @classmethod
    def from_file(cls, filepath: str, device: str = "cpu") -> "SketchSynthesizer":
        return cls(CheckpointIO.load(filepath), device=device)

    def _run(self, generator: torch.nn.Module, image: T.Tensor) -> T.Tensor:
        single = image.dim() == 3
        x = image[None] if single else image
        if tuple(x.shape[1:]) != (3, MODEL_SIZE, MODEL_SIZE):
            raise ValueError(
                f"Input must be 3x{MODEL_SIZE}x{MODEL_SIZE}, but shape is {tuple(image.shape)}"
            )
        with torch.no_grad():
            out = generator(x.to(self.device)).level3.cpu()
        return out[0] if single else out

    def photo_to_sketch(self, photo: T.Tensor) -> T.Tensor:
        return self._run(self.models.g_A, photo)

    def sketch_to_photo(self, sketch: T.Tensor) -> T.Tensor:
        return self._run(self.models.g_B, sketch)

    def synthesize(self, image: T.Tensor, direction: str) -> T.Tensor:
        if direction == "photo2sketch":
            return self.photo_to_sketch(image)
        if direction == "sketch2photo":
            return self.sketch_to_photo(image)
        raise ValueError(f"Invalid direction: {direction=} must be in {SYNTH_DIRECTIONS}")

    # directories

    @staticmethod
    def prepare_input(
        image: T.Image,
        modality: str,
        landmarks: LandmarkAnnotation | None = None,
        aligner: FaceAligner | None = None,
    ) -> T.Tensor:
        """
        Align when landmarks are given, otherwise treat the image as already cropped.
        Sketch inputs are reduced to luminance.
        """
        if landmarks is not None:
            image = (aligner or FaceAligner()).align_and_crop(image, landmarks)
        if modality == "sketch":
            image = np.repeat(FaceAligner.to_luminance(image)[:, :, None], 3, axis=2)
        return FaceAligner.to_model_resolution(image)

    @staticmethod
    def _output_names(paths: list[str]) -> list[str]:
        stems = [os.path.splitext(os.path.basename(p))[0] for p in paths]
        names, used = [], set()
        for path, stem in zip(paths, stems):
            if stems.count(stem) > 1:
                ext = os.path.splitext(path)[1].lstrip(".").lower()
                stem = f"{stem}_{ext}"
            name, n = stem, 1
            while f"{name}.png" in used:
                n += 1
                name = f"{stem}_{n}"
            used.add(f"{name}.png")
            names.append(f"{name}.png")
        return names

    def synthesize_directory(
        self,
        input_dir: str,
        direction: str,
        output_dir: str,
        target_dir: str | None = None,
        landmarks_path: str | None = None,
        aligner: FaceAligner | None = None,
        grid: bool = False,
        grid_rows: int = 8,
    ) -> list[ManifestRow]:
        """
        Write one PNG per input image (same stem) plus manifest.csv. Unreadable
        inputs are skipped with a warning and recorded in the manifest.
        """
        if direction not in SYNTH_DIRECTIONS:
            raise ValueError(f"Invalid direction: {direction=} must be in {SYNTH_DIRECTIONS}")
        if not os.path.isdir(input_dir):
            raise FileNotFoundError(f"Input directory not found: {input_dir}")
        os.makedirs(output_dir, exist_ok=True)

        if landmarks_path is None:
            # dataset layout keeps landmarks.txt next to photos/ and sketches/
            for candidate in (input_dir, os.path.dirname(os.path.abspath(input_dir))):
                if os.path.isfile(os.path.join(candidate, "landmarks.txt")):
                    landmarks_path = os.path.join(candidate, "landmarks.txt")
                    break
        landmarks = PairedDataIO.read_landmarks(landmarks_path) if landmarks_path else {}
        targets = PairedDataIO.find_images(target_dir) if target_dir else {}
        source, target_modality = MODALITIES[direction]

        paths = [
            os.path.join(input_dir, name)
            for name in sorted(os.listdir(input_dir))
            if os.path.splitext(name)[1].lower() in IMAGE_SUFFIXES
        ]
        rows: list[ManifestRow] = []
        grid_cells = []
        for path, name in zip(paths, self._output_names(paths)):
            stem = os.path.splitext(os.path.basename(path))[0]
            out_path = os.path.join(output_dir, name)
            try:
                raw = PairedDataIO.read_image(path)
                x = self.prepare_input(raw, source, landmarks.get(stem), aligner)
            except (OSError, UnidentifiedImageError, ValueError) as e:
                logger.warning(f"Skipping {path}: {e}")
                rows.append(
                    ManifestRow(path, "", direction, self.checkpoint_hash, f"skipped: {e}")
                )
                continue

            y = self.synthesize(x, direction)
            Image.fromarray(FaceAligner.tensor_to_uint8(y)).save(out_path)
            rows.append(ManifestRow(path, out_path, direction, self.checkpoint_hash))

            if grid and len(grid_cells) < grid_rows:
                target = None
                if stem in targets:
                    target = self.prepare_input(
                        PairedDataIO.read_image(targets[stem]),
                        target_modality,
                        landmarks.get(stem),
                        aligner,
                    )
                grid_cells.append((stem, x, y, target))

        self.write_manifest(rows, os.path.join(output_dir, "manifest.csv"))
        if grid and grid_cells:
            ResultRenderer().draw_comparison(
                [c[1] for c in grid_cells],
                [c[2] for c in grid_cells],
                [c[3] for c in grid_cells],
                row_labels=[c[0] for c in grid_cells],
                filename=os.path.join(output_dir, "grid.png"),
            )
        ok = sum(r.status == "ok" for r in rows)
        logger.info(f"Synthesized {ok}/{len(rows)} images ({direction}) into {output_dir}")
        return rows

    @staticmethod
    def write_manifest(rows: list[ManifestRow], filepath: str) -> None:
        with open(filepath, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([fd.name for fd in fields(ManifestRow)])
            for row in rows:
                writer.writerow(astuple(row))

    @staticmethod
    def read_manifest(filepath: str) -> list[ManifestRow]:
        with open(filepath, "r", encoding="utf-8", newline="") as f:
            return [ManifestRow(**record) for record in csv.DictReader(f)]
