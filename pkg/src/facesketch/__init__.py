# facesketch
# Copyright (c) 2025, fenglielie@qq.com

from .utils import LEVELS, MODEL_SIZE
from .FaceAligner import FaceAligner, LandmarkAnnotation
from .PairedData import (
    DatasetSplit,
    PairedAugmenter,
    PairedDataIO,
    PairedDataset,
    PairedSample,
    ResolutionPyramid,
    SplitSpec,
    make_pyramid,
)
from .SyntheticFaces import SyntheticFaces
from .SketchNetworks import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    SketchModels,
    SketchNetworks,
)
from .SketchObjective import LossBreakdown, LossWeights, SketchObjective
from .ReplayBuffer import ReplayBuffer
from .SketchConfig import SketchConfig, SketchConfigIO, TrainConfig
from .SketchMetrics import CMCCurve, FaceMatcher, ImageQuality, IQAReport
from .SketchTrainer import Checkpoint, CheckpointIO, SketchTrainer
from .SketchSynthesizer import SketchSynthesizer
from .SketchEvaluator import EvaluationResult, SketchEvaluator
from .ResultRenderer import ResultRenderer


__version__ = "0.0.1"
