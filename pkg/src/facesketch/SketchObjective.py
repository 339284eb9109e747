import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .PairedData import ResolutionPyramid
from .utils import LEVELS
from .utils import Types as T

TERM_NAMES = ("gan_A", "gan_B", "syn_A", "syn_B", "cyc_A", "cyc_B")
GAN_MODES = ("nonsaturating", "saturating", "lsgan")


def _triple(value: float | Sequence[float], name: str) -> tuple[float, float, float]:
    if isinstance(value, (int, float)):
        value = (float(value),) * 3
    value = tuple(float(v) for v in value)
    if len(value) != 3:
        raise ValueError(f"{name} needs one weight per level, got {value}")
    if any(v < 0 for v in value):
        raise ValueError(f"{name} weights must be non-negative, got {value}")
    return value


@dataclass(frozen=True)
class LossWeights:
    """
    Per-level synthesis (lambda) and cycle (eta) weights for both directions.
    """

    lambda_A: tuple[float, float, float] = (1.0, 1.0, 1.0)
    lambda_B: tuple[float, float, float] = (1.0, 1.0, 1.0)
    eta_A: tuple[float, float, float] = (0.7, 0.7, 0.7)
    eta_B: tuple[float, float, float] = (0.7, 0.7, 0.7)

    def __post_init__(self):
        for name in ("lambda_A", "lambda_B", "eta_A", "eta_B"):
            object.__setattr__(self, name, _triple(getattr(self, name), name))

    @classmethod
    def uniform(cls, lam: float = 1.0, eta: float = 0.7) -> "LossWeights":
        return cls(lam, lam, eta, eta)

    def coefficient(self, term: str, index: int) -> float:
        """Weight multiplying `term` at level index 0..2."""
        return {
            "gan_A": (1.0, 1.0, 1.0),
            "gan_B": (1.0, 1.0, 1.0),
            "syn_A": self.lambda_A,
            "syn_B": self.lambda_B,
            "cyc_A": self.eta_A,
            "cyc_B": self.eta_B,
        }[term][index]


@dataclass
class LossBreakdown:
    """
    Every per-level term of the objective plus the weighted total.
    Index 0, 1, 2 of each term corresponds to level 64, 128, 256.
    """

    terms: dict[str, tuple[T.Tensor, T.Tensor, T.Tensor]]
    total: T.Tensor
    weights: LossWeights = field(default_factory=LossWeights)

    def __getattr__(self, name: str):
        terms = self.__dict__.get("terms", {})
        if name in terms:
            return terms[name]
        raise AttributeError(name)

    def components(self) -> dict[str, float]:
        """Flat {"gan_A_64": value, ...} view for logging."""
        flat = {}
        for name in TERM_NAMES:
            for level, value in zip(LEVELS, self.terms[name]):
                flat[f"{name}_{level}"] = float(value)
        return flat

    def first_non_finite(self) -> str | None:
        for key, value in self.components().items():
            if not math.isfinite(value):
                return key
        if not math.isfinite(float(self.total)):
            return "total"
        return None

    def as_record(self) -> dict[str, float]:
        record = self.components()
        record["total"] = float(self.total)
        return record


class SketchObjective:
    """
    Adversarial, synthesis and cycle terms of the multi-level objective.
    """

    EPS = 1e-7

    @staticmethod
    def _check_mode(gan_mode: str) -> None:
        if gan_mode not in GAN_MODES:
            raise ValueError(f"Invalid gan_mode: {gan_mode=} must be in {GAN_MODES}")

    @staticmethod
    def _scores(d: nn.Module, image: T.Tensor) -> T.Tensor:
        resolution = getattr(d, "resolution", None)
        if resolution is not None and tuple(image.shape[-2:]) != (resolution, resolution):
            raise ValueError(
                f"Resolution mismatch: discriminator expects {resolution}x{resolution}, "
                f"image is {tuple(image.shape[-2:])}"
            )
        return d(image)

    @staticmethod
    def _probabilities(logits: T.Tensor) -> T.Tensor:
        eps = SketchObjective.EPS
        return torch.sigmoid(logits).clamp(eps, 1.0 - eps)

    @staticmethod
    def discriminator_loss_from_logits(
        real_logits: T.Tensor, fake_logits: T.Tensor, gan_mode: str = "nonsaturating"
    ) -> T.Tensor:
        """
        BCE(real -> 1) + BCE(fake -> 0), each averaged over the patch map.
        lsgan: mean (real - 1)^2 + mean fake^2 on the raw outputs.
        """
        SketchObjective._check_mode(gan_mode)
        if gan_mode == "lsgan":
            return ((real_logits - 1.0) ** 2).mean() + (fake_logits**2).mean()
        p_real = SketchObjective._probabilities(real_logits)
        p_fake = SketchObjective._probabilities(fake_logits)
        return -torch.log(p_real).mean() - torch.log(1.0 - p_fake).mean()

    @staticmethod
    def generator_loss_from_logits(
        fake_logits: T.Tensor, gan_mode: str = "nonsaturating"
    ) -> T.Tensor:
        """
        nonsaturating: BCE(fake -> 1); saturating: mean log(1 - D(fake));
        lsgan: mean (fake - 1)^2.
        """
        SketchObjective._check_mode(gan_mode)
        if gan_mode == "lsgan":
            return ((fake_logits - 1.0) ** 2).mean()
        p_fake = SketchObjective._probabilities(fake_logits)
        if gan_mode == "saturating":
            return torch.log(1.0 - p_fake).mean()
        return -torch.log(p_fake).mean()

    @staticmethod
    def adversarial_loss_d(
        d: nn.Module, real: T.Tensor, fake: T.Tensor, gan_mode: str = "nonsaturating"
    ) -> T.Tensor:
        """
        Discriminator loss on one level; `fake` is detached here as well.
        """
        real_logits = SketchObjective._scores(d, real)
        fake_logits = SketchObjective._scores(d, fake.detach())
        return SketchObjective.discriminator_loss_from_logits(real_logits, fake_logits, gan_mode)

    @staticmethod
    def adversarial_loss_g(
        d: nn.Module, fake: T.Tensor, gan_mode: str = "nonsaturating"
    ) -> T.Tensor:
        return SketchObjective.generator_loss_from_logits(
            SketchObjective._scores(d, fake), gan_mode
        )

    @staticmethod
    def _per_level_l1(a: ResolutionPyramid, b: ResolutionPyramid, what: str) -> tuple:
        losses = []
        for level, x, y in zip(LEVELS, a.levels(), b.levels()):
            if x.shape != y.shape:
                raise ValueError(
                    f"{what} shape mismatch at level {level}: {tuple(x.shape)} vs {tuple(y.shape)}"
                )
            losses.append((x - y).abs().mean())
        return tuple(losses)

    @staticmethod
    def synthesis_loss(fake: ResolutionPyramid, target: ResolutionPyramid) -> tuple:
        """
        Per-level mean absolute error between synthesized and target images.
        """
        return SketchObjective._per_level_l1(fake, target, "Synthesis")

    @staticmethod
    def cycle_loss(rec: ResolutionPyramid, source: ResolutionPyramid) -> tuple:
        """
        Per-level mean absolute error between the reconstruction and the source.
        """
        return SketchObjective._per_level_l1(rec, source, "Cycle")

    @staticmethod
    def total_objective(
        parts: dict[str, Sequence[T.Tensor | float]], weights: LossWeights
    ) -> LossBreakdown:
        """
        sum over levels of gan_A + gan_B + lambda_A syn_A + lambda_B syn_B
        + eta_A cyc_A + eta_B cyc_B. All 18 terms must be present; disabled
        terms are passed as explicit zeros.
        """
        terms: dict[str, tuple] = {}
        for name in TERM_NAMES:
            if name not in parts:
                raise KeyError(f"Missing loss term: {name}")
            values = tuple(parts[name])
            if len(values) != 3 or any(v is None for v in values):
                raise KeyError(f"Missing loss term: {name} needs one value per level")
            terms[name] = tuple(
                v if isinstance(v, torch.Tensor) else torch.tensor(float(v)) for v in values
            )
        unknown = set(parts) - set(TERM_NAMES)
        if unknown:
            raise KeyError(f"Unknown loss terms: {sorted(unknown)}")

        total = torch.zeros(())
        for name in TERM_NAMES:
            for i, value in enumerate(terms[name]):
                total = total + weights.coefficient(name, i) * value
        return LossBreakdown(terms=terms, total=total, weights=weights)
