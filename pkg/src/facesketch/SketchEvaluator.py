import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .FaceAligner import FaceAligner
from .PairedData import DatasetSplit
from .ResultRenderer import ResultRenderer
from .SketchConfig import SketchConfig
from .SketchMetrics import IQA_DIRECTIONS, CMCCurve, FaceMatcher, ImageQuality, IQAReport
from .SketchSynthesizer import SketchSynthesizer
from .SketchTrainer import Checkpoint
from .utils import logger

SUMMARY_METRICS = ("ssim_photo", "ssim_sketch", "fsim_photo", "fsim_sketch")

# level masks of the ablation study, in column order
ABLATION_CONFIGS: dict[str, tuple[int, ...]] = {
    "C-D256": (256,),
    "C-D256,128": (256, 128),
    "C-D256,128,64": (256, 128, 64),
}

# published CUHK results of the three ablation configurations
REFERENCE_ABLATION: dict[str, dict[str, float]] = {
    "C-D256": {"ssim_photo": 0.7626, "ssim_sketch": 0.5991, "fsim_photo": 0.7826, "fsim_sketch": 0.7271},
    "C-D256,128": {"ssim_photo": 0.7851, "ssim_sketch": 0.6034, "fsim_photo": 0.7920, "fsim_sketch": 0.7280},
    "C-D256,128,64": {"ssim_photo": 0.7915, "ssim_sketch": 0.6156, "fsim_photo": 0.8062, "fsim_sketch": 0.7361},
}

# published CUHK image quality of competing methods and of this model
REFERENCE_COMPARISON: dict[str, dict[str, float]] = {
    "MWF": {"ssim_photo": 0.6057, "ssim_sketch": 0.4996, "fsim_photo": 0.7996, "fsim_sketch": 0.7121},
    "MrFSPS": {"ssim_photo": 0.6326, "ssim_sketch": 0.5130, "fsim_photo": 0.8031, "fsim_sketch": 0.7339},
    "pix2pix": {"ssim_photo": 0.6606, "ssim_sketch": 0.4669, "fsim_photo": 0.6997, "fsim_sketch": 0.6174},
    "CycleGAN": {"ssim_photo": 0.7626, "ssim_sketch": 0.5991, "fsim_photo": 0.7826, "fsim_sketch": 0.7271},
    "DualGAN": {"ssim_photo": 0.7908, "ssim_sketch": 0.6003, "fsim_photo": 0.7939, "fsim_sketch": 0.7312},
    "facesketch": {"ssim_photo": 0.7915, "ssim_sketch": 0.6156, "fsim_photo": 0.8062, "fsim_sketch": 0.7361},
}

# published rank-1 matching rates in percent: dataset -> protocol -> method
REFERENCE_RANK1: dict[str, dict[str, dict[str, float]]] = {
    "cuhk": {
        "photo": {"pix2pix": 100, "CycleGAN": 99, "DualGAN": 100, "facesketch": 100},
        "sketch": {"pix2pix": 78, "CycleGAN": 95, "DualGAN": 98, "facesketch": 99},
    },
    "cufsf": {
        "photo": {"pix2pix": 37, "CycleGAN": 25, "DualGAN": 35, "facesketch": 47},
        "sketch": {"pix2pix": 40, "CycleGAN": 44, "DualGAN": 40, "facesketch": 51},
    },
}


@dataclass
class EvaluationResult:
    """
    IQA reports keyed by synthesized modality and CMC curves keyed by matching
    protocol ("photo": synthesized photos against real photos, "sketch" likewise).
    """

    dataset: str
    iqa: dict[str, IQAReport] = field(default_factory=dict)
    cmc: dict[str, CMCCurve] = field(default_factory=dict)

    def summary(self) -> dict[str, float]:
        values = {}
        for direction in IQA_DIRECTIONS:
            values[f"ssim_{direction}"] = self.iqa[direction].mean_ssim
            values[f"fsim_{direction}"] = self.iqa[direction].mean_fsim
        for protocol, curve in self.cmc.items():
            values[f"rank1_{protocol}"] = 100.0 * curve.rank(1)
        return values

    def reference(self) -> dict[str, float]:
        """
        Published values of this model for the evaluated dataset, where known.
        """
        values = {}
        if self.dataset == "cuhk":
            values.update(REFERENCE_COMPARISON["facesketch"])
        for protocol, methods in REFERENCE_RANK1.get(self.dataset, {}).items():
            values[f"rank1_{protocol}"] = float(methods["facesketch"])
        return values


class SketchEvaluator:
    """
    Image quality and cross-modal matching of a trained model on a test split.
    """

    def __init__(self, matcher: FaceMatcher | None = None, fsim_scales: int = 4, fsim_orientations: int = 4):
        self.matcher = matcher or FaceMatcher()
        self.fsim_scales = fsim_scales
        self.fsim_orientations = fsim_orientations

    @classmethod
    def from_config(cls, config: SketchConfig) -> "SketchEvaluator":
        m = config["metrics"]
        return cls(
            FaceMatcher(int(m["lbp_points"]), float(m["lbp_radius"]), int(m["lbp_grid"])),
            fsim_scales=int(m["fsim_scales"]),
            fsim_orientations=int(m["fsim_orientations"]),
        )

    @staticmethod
    def _luminance(x) -> np.ndarray:
        return FaceAligner.to_luminance(FaceAligner.tensor_to_uint8(x))

    def evaluate_run(
        self,
        model: Checkpoint | SketchSynthesizer,
        test_split: DatasetSplit,
        dataset: str = "cuhk",
    ) -> EvaluationResult:
        """
        SSIM/FSIM of synthesized photos and sketches against ground truth, plus
        both matching protocols with LBP features and cosine distance.
        """
        if len(test_split) == 0:
            raise ValueError("Cannot evaluate an empty test split")
        synth = model if isinstance(model, SketchSynthesizer) else SketchSynthesizer(model)

        result = EvaluationResult(dataset, {d: IQAReport(d) for d in IQA_DIRECTIONS})
        identities: list[str] = []
        probes: dict[str, list[np.ndarray]] = {d: [] for d in IQA_DIRECTIONS}
        gallery: dict[str, list[np.ndarray]] = {d: [] for d in IQA_DIRECTIONS}

        for sample in test_split:
            identities.append(sample.identity)
            fakes = {
                "sketch": synth.photo_to_sketch(sample.photo),
                "photo": synth.sketch_to_photo(sample.sketch),
            }
            reals = {"sketch": sample.sketch, "photo": sample.photo}
            for direction in IQA_DIRECTIONS:
                fake = self._luminance(fakes[direction])
                real = self._luminance(reals[direction])
                result.iqa[direction].add(
                    sample.identity,
                    ImageQuality.ssim(fake, real),
                    ImageQuality.fsim(fake, real, self.fsim_scales, self.fsim_orientations),
                )
                probes[direction].append(self.matcher.lbp_features(fake))
                gallery[direction].append(self.matcher.lbp_features(real))

        for protocol in IQA_DIRECTIONS:
            result.cmc[protocol] = FaceMatcher.cmc(
                np.stack(probes[protocol]),
                identities,
                np.stack(gallery[protocol]),
                identities,
                protocol=protocol,
            )

        summary = result.summary()
        logger.info(
            f"Evaluated {len(identities)} pairs: "
            + ", ".join(f"{k}={v:.4f}" for k, v in summary.items())
        )
        return result

    @staticmethod
    def write_reports(result: EvaluationResult, out_dir: str, plot: bool = True) -> list[str]:
        """
        iqa.csv, cmc.csv and summary.csv (plus CMC plots) under out_dir.
        """
        os.makedirs(out_dir, exist_ok=True)
        written = []

        path = os.path.join(out_dir, "iqa.csv")
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["image_id", "direction", "ssim", "fsim"])
            for direction in IQA_DIRECTIONS:
                for r in result.iqa[direction].records:
                    writer.writerow([r.image_id, r.direction, f"{r.ssim:.6f}", f"{r.fsim:.6f}"])
        written.append(path)

        path = os.path.join(out_dir, "cmc.csv")
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["protocol", "k", "rate"])
            for protocol, curve in result.cmc.items():
                for k, rate in enumerate(curve.rank_rates, start=1):
                    writer.writerow([protocol, k, f"{rate:.6f}"])
        written.append(path)

        path = os.path.join(out_dir, "summary.csv")
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "value"])
            for metric, value in result.summary().items():
                writer.writerow([metric, f"{value:.6f}"])
            for metric, value in result.reference().items():
                writer.writerow([f"reference_{metric}", f"{value:.6f}"])
        written.append(path)

        if plot:
            renderer = ResultRenderer()
            for protocol, curve in result.cmc.items():
                path = os.path.join(out_dir, f"cmc_{protocol}.png")
                renderer.draw_cmc({"facesketch": curve}, title=f"{protocol} matching", filename=path)
                written.append(path)

        logger.info(f"Saved reports to {out_dir}")
        return written

    @staticmethod
    def ablation_table(results: dict[str, EvaluationResult]) -> list[list[str]]:
        """
        Rows SSIM/FSIM x photo/sketch, one column per configuration. On CUHK each
        configuration is followed by its published value.
        """
        with_reference = bool(results) and all(
            r.dataset == "cuhk" and name in REFERENCE_ABLATION for name, r in results.items()
        )
        header = ["metric"]
        for name in results:
            header.append(name)
            if with_reference:
                header.append(f"{name} (reference)")
        rows = [header]
        for metric in SUMMARY_METRICS:
            row = [metric]
            for name, result in results.items():
                row.append(f"{result.summary()[metric]:.4f}")
                if with_reference:
                    row.append(f"{REFERENCE_ABLATION[name][metric]:.4f}")
            rows.append(row)
        return rows

    @staticmethod
    def write_ablation_table(rows: list[list[str]], filepath: str) -> None:
        with open(filepath, "w", encoding="utf-8", newline="") as f:
            csv.writer(f).writerows(rows)
        logger.info(f"Saved to {filepath}")
