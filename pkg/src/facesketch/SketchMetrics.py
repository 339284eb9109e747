import math
from dataclasses import dataclass, field

import numpy as np
from phasepack import phasecong
from scipy import ndimage, signal
from scipy.spatial.distance import cdist
from skimage.feature import local_binary_pattern
from skimage.transform import downscale_local_mean

from .FaceAligner import FaceAligner
from .utils import Types as T

IQA_DIRECTIONS = ("photo", "sketch")


def _as_gray(image: T.Image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 3:
        return FaceAligner.to_luminance(image)
    if image.ndim != 2:
        raise ValueError(f"Expected a grayscale image, but shape is {image.shape}")
    return image.astype(np.float64)


def _check_pair(x: T.Image, y: T.Image) -> tuple[np.ndarray, np.ndarray]:
    x, y = _as_gray(x), _as_gray(y)
    if x.shape != y.shape:
        raise ValueError(f"Shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def _similarity(a: np.ndarray, b: np.ndarray, constant: float) -> np.ndarray:
    return (2.0 * a * b + constant) / (a**2 + b**2 + constant)


class ImageQuality:
    """
    Full-reference quality indices on luminance images in [0,255].
    """

    SSIM_WINDOW = 11
    SSIM_SIGMA = 1.5
    SSIM_K1 = 0.01
    SSIM_K2 = 0.03

    FSIM_T1 = 0.85
    FSIM_T2 = 160.0

    @staticmethod
    def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
        ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
        g = np.exp(-(ax**2) / (2 * sigma**2))
        window = np.outer(g, g)
        return window / window.sum()

    @staticmethod
    def ssim(x: T.Image, y: T.Image, data_range: float = 255.0) -> float:
        """
        Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), 'valid' borders.
        """
        x, y = _check_pair(x, y)
        window = ImageQuality.gaussian_window(ImageQuality.SSIM_WINDOW, ImageQuality.SSIM_SIGMA)
        c1 = (ImageQuality.SSIM_K1 * data_range) ** 2
        c2 = (ImageQuality.SSIM_K2 * data_range) ** 2

        def filt(img):
            return signal.convolve2d(img, window, mode="valid")

        mu_x, mu_y = filt(x), filt(y)
        sigma_xx = filt(x * x) - mu_x**2
        sigma_yy = filt(y * y) - mu_y**2
        sigma_xy = filt(x * y) - mu_x * mu_y

        ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / (
            (mu_x**2 + mu_y**2 + c1) * (sigma_xx + sigma_yy + c2)
        )
        return float(ssim_map.mean())

    # FSIM

    @staticmethod
    def phase_congruency(
        image: np.ndarray, scales: int = 4, orientations: int = 4, k: float = 2.0
    ) -> np.ndarray:
        """
        Phase congruency map of a luminance image, summed over orientations.
        """
        pc = phasecong(
            image,
            nscale=scales,
            norient=orientations,
            minWaveLength=6,
            mult=2,
            sigmaOnf=0.55,
            k=k,
        )[4]
        return np.sum(np.asarray(pc), axis=0)

    @staticmethod
    def gradient_magnitude(image: np.ndarray) -> np.ndarray:
        scharr = np.array([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]]) / 16.0
        gx = ndimage.correlate(image, scharr, mode="constant")
        gy = ndimage.correlate(image, scharr.T, mode="constant")
        return np.sqrt(gx**2 + gy**2)

    @staticmethod
    def fsim(x: T.Image, y: T.Image, scales: int = 4, orientations: int = 4) -> float:
        """
        Luminance FSIM: phase-congruency and gradient similarity, pooled with the
        larger of the two phase-congruency maps as weight.
        """
        x, y = _check_pair(x, y)
        factor = max(1, round(min(x.shape) / 256))
        if factor > 1:
            x = downscale_local_mean(x, (factor, factor))
            y = downscale_local_mean(y, (factor, factor))

        pc_x = ImageQuality.phase_congruency(x, scales, orientations)
        pc_y = ImageQuality.phase_congruency(y, scales, orientations)
        s_pc = _similarity(pc_x, pc_y, ImageQuality.FSIM_T1)
        s_g = _similarity(
            ImageQuality.gradient_magnitude(x),
            ImageQuality.gradient_magnitude(y),
            ImageQuality.FSIM_T2,
        )
        pc_max = np.maximum(pc_x, pc_y)
        weight = pc_max.sum()
        if weight <= 0:
            return float(s_g.mean())
        return float((s_pc * s_g * pc_max).sum() / weight)


@dataclass
class IQARecord:
    image_id: str
    direction: str
    ssim: float
    fsim: float


@dataclass
class IQAReport:
    """
    Per-image SSIM/FSIM of one synthesis direction ("photo" or "sketch" is the
    synthesized modality).
    """

    direction: str
    records: list[IQARecord] = field(default_factory=list)

    def __post_init__(self):
        if self.direction not in IQA_DIRECTIONS:
            raise ValueError(f"Invalid direction: {self.direction=} must be in {IQA_DIRECTIONS}")

    def add(self, image_id: str, ssim: float, fsim: float) -> None:
        self.records.append(IQARecord(image_id, self.direction, ssim, fsim))

    def __len__(self):
        return len(self.records)

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.records])) if self.records else float("nan")

    @property
    def mean_fsim(self) -> float:
        return float(np.mean([r.fsim for r in self.records])) if self.records else float("nan")


@dataclass
class CMCCurve:
    """
    rank_rates[k-1] is the fraction of probes whose true match is within the k nearest.
    """

    rank_rates: np.ndarray
    protocol: str = ""

    def __post_init__(self):
        self.rank_rates = np.asarray(self.rank_rates, dtype=np.float64)
        if self.rank_rates.ndim != 1 or len(self.rank_rates) == 0:
            raise ValueError("CMC curve needs one rate per rank")
        if np.any(np.diff(self.rank_rates) < 0):
            raise ValueError("CMC curve must be non-decreasing")

    def rank(self, k: int) -> float:
        if not 1 <= k <= len(self.rank_rates):
            raise ValueError(f"Rank out of range: {k=} must be in [1, {len(self.rank_rates)}]")
        return float(self.rank_rates[k - 1])

    def __len__(self):
        return len(self.rank_rates)


class FaceMatcher:
    """
    LBP descriptors, cosine distance and rank-k identification.
    """

    def __init__(self, points: int = 8, radius: float = 1, grid: int = 8):
        if points < 1 or radius <= 0 or grid < 1:
            raise ValueError(f"Invalid LBP setup: {points=}, {radius=}, {grid=}")
        self.points = points
        self.radius = radius
        self.grid = grid

    @property
    def bins(self) -> int:
        """Uniform patterns: P(P-1) + 2 uniform codes plus one non-uniform bin."""
        return self.points * (self.points - 1) + 3

    @property
    def dimension(self) -> int:
        return self.bins * self.grid * self.grid

    def lbp_features(self, image: T.Image) -> np.ndarray:
        """
        Per-cell L1-normalized uniform-LBP histograms over a grid x grid partition,
        concatenated row-major. Borders are edge-replicated, so a constant image puts
        every pixel in one bin and a constant gray offset leaves the features unchanged.
        """
        gray = np.clip(np.rint(_as_gray(image)), 0, 255).astype(np.int64)
        gray = (gray - gray.min()).astype(np.uint8)

        pad = math.ceil(self.radius) + 1
        padded = np.pad(gray, pad, mode="edge")
        codes = local_binary_pattern(padded, self.points, self.radius, method="nri_uniform")
        codes = codes[pad:-pad, pad:-pad]

        cells = []
        for band in np.array_split(codes, self.grid, axis=0):
            for cell in np.array_split(band, self.grid, axis=1):
                hist, _ = np.histogram(cell, bins=self.bins, range=(0, self.bins))
                hist = hist.astype(np.float64)
                total = hist.sum()
                cells.append(hist / total if total > 0 else hist)
        return np.concatenate(cells)

    @staticmethod
    def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
        u = np.asarray(u, dtype=np.float64).ravel()
        v = np.asarray(v, dtype=np.float64).ravel()
        if u.shape != v.shape:
            raise ValueError(f"Dimension mismatch: {u.shape} vs {v.shape}")
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0 or nv == 0:
            raise ValueError("Cosine distance is undefined for zero vectors")
        return float(np.clip(1.0 - np.dot(u, v) / (nu * nv), 0.0, 2.0))

    @staticmethod
    def distance_matrix(probes: np.ndarray, gallery: np.ndarray) -> np.ndarray:
        probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
        gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
        if probes.shape[1] != gallery.shape[1]:
            raise ValueError(
                f"Dimension mismatch: probes {probes.shape[1]} vs gallery {gallery.shape[1]}"
            )
        for name, block in (("probe", probes), ("gallery", gallery)):
            if np.any(np.linalg.norm(block, axis=1) == 0):
                raise ValueError(f"Cosine distance is undefined for a zero {name} vector")
        return cdist(probes, gallery, metric="cosine")

    @staticmethod
    def cmc(
        probes: np.ndarray,
        probe_ids: list[str],
        gallery: np.ndarray,
        gallery_ids: list[str],
        protocol: str = "",
    ) -> CMCCurve:
        """
        Rank-k rates for k = 1..len(gallery). Ties go to the lower gallery index.
        """
        if len(probes) != len(probe_ids) or len(gallery) != len(gallery_ids):
            raise ValueError("Every feature needs exactly one identity")
        if len(set(gallery_ids)) != len(gallery_ids):
            raise ValueError("Gallery identities must be unique")
        index = {identity: i for i, identity in enumerate(gallery_ids)}
        missing = [p for p in probe_ids if p not in index]
        if missing:
            raise ValueError(f"Probe identities absent from gallery: {missing[:5]}")
        if len(probe_ids) == 0:
            raise ValueError("No probes to match")

        dist = FaceMatcher.distance_matrix(probes, gallery)
        order = np.argsort(dist, axis=1, kind="stable")
        truth = np.array([index[p] for p in probe_ids])
        ranks = np.argmax(order == truth[:, None], axis=1)  # 0-based

        hits = np.bincount(ranks, minlength=len(gallery_ids))
        rates = np.cumsum(hits) / len(probe_ids)
        return CMCCurve(rates, protocol)
