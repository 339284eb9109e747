import ast
import copy
import hashlib
import json
from dataclasses import dataclass, field

from .FaceAligner import FaceAligner
from .PairedData import PairedAugmenter, SplitSpec
from .SketchNetworks import DiscriminatorSpec, GeneratorSpec
from .SketchObjective import GAN_MODES, LossWeights
from .utils import LEVELS


@dataclass(frozen=True)
class TrainConfig:
    epochs_constant: int = 100
    epochs_decay: int = 100
    base_lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    ablation_level_mask: frozenset[int] = frozenset(LEVELS)
    replay_buffer_size: int = 50
    seed: int = 0
    gan_mode: str = "nonsaturating"
    checkpoint_interval: int = 5
    num_workers: int = 0
    validate: bool = True

    def __post_init__(self):
        if self.base_lr < 0:
            raise ValueError(f"base_lr must be non-negative, but got {self.base_lr}")
        if self.epochs_constant < 0 or self.epochs_decay < 0:
            raise ValueError(
                f"Epoch counts must be non-negative: {self.epochs_constant=}, {self.epochs_decay=}"
            )
        if self.total_epochs() < 1:
            raise ValueError("Training needs at least one epoch")
        mask = frozenset(int(level) for level in self.ablation_level_mask)
        if not mask:
            raise ValueError("ablation_level_mask must be non-empty")
        if not mask <= set(LEVELS):
            raise ValueError(f"Invalid ablation_level_mask: {sorted(mask)} must be within {LEVELS}")
        object.__setattr__(self, "ablation_level_mask", mask)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, but got {self.batch_size}")
        if self.gan_mode not in GAN_MODES:
            raise ValueError(f"Invalid gan_mode: {self.gan_mode=} must be in {GAN_MODES}")

    def total_epochs(self) -> int:
        return self.epochs_constant + self.epochs_decay


class SketchConfig:
    """
    Sectioned run configuration. Every key has a default; files and overrides
    may only touch known keys.
    """

    _DEFAULT_CONFIG = {
        "seed": 0,
        "dataset": {
            "root": "",
            "name": "cuhk",
            "train": 60,
            "val": 28,
            "test": 100,
            "shuffle": False,
            "crop_width": 200,
            "crop_height": 250,
            "left_eye": [75.0, 125.0],
            "right_eye": [125.0, 125.0],
            "flip_prob": 0.5,
            "noise_amplitude": 0.02,
        },
        "model": {
            "generator": "C7S1-64, C3-128, C3-256, RB256x9, TC64, TC32, C7S1-3",
            "discriminator": "C64-C128-C256-C512",
            "disc_strides": [2, 2, 2, 1],
            "norm": "batch",
            "disc_norm_first": False,
            "init_std": 0.02,
        },
        "objective": {
            "lambda": 1.0,
            "eta": 0.7,
            "lambda_A": None,
            "lambda_B": None,
            "eta_A": None,
            "eta_B": None,
            "gan_mode": "nonsaturating",
        },
        "trainer": {
            "epochs_constant": 100,
            "epochs_decay": 100,
            "base_lr": 2e-4,
            "adam_beta1": 0.5,
            "adam_beta2": 0.999,
            "batch_size": 1,
            "ablation_level_mask": [64, 128, 256],
            "replay_buffer_size": 50,
            "checkpoint_interval": 5,
            "num_workers": 0,
            "validate": True,
        },
        "metrics": {
            "lbp_points": 8,
            "lbp_radius": 1,
            "lbp_grid": 8,
            "fsim_scales": 4,
            "fsim_orientations": 4,
            "cmc_plot": True,
        },
    }

    SECTIONS = ("dataset", "model", "objective", "trainer", "metrics")

    def __init__(self, data: dict | None = None):
        self._data = copy.deepcopy(self._DEFAULT_CONFIG)
        if data is not None:
            self.update(data)

    def update(self, data: dict) -> "SketchConfig":
        for key, value in data.items():
            if key in self.SECTIONS:
                if not isinstance(value, dict):
                    raise ValueError(f"Section {key!r} must be a mapping")
                for sub_key, sub_value in value.items():
                    self._check_key(key, sub_key)
                    self._data[key][sub_key] = copy.deepcopy(sub_value)
            elif key == "seed":
                self._data["seed"] = int(value)
            else:
                raise KeyError(f"Unknown config key: {key}")
        return self

    def _check_key(self, section: str, key: str) -> None:
        if section not in self.SECTIONS:
            raise KeyError(f"Unknown config section: {section}")
        if key not in self._DEFAULT_CONFIG[section]:
            raise KeyError(f"Unknown config key: {section}.{key}")

    def resolve_key(self, key: str) -> tuple[str | None, str]:
        """
        'section.key' or a bare key that is unique across sections.
        """
        if key == "seed":
            return None, "seed"
        if "." in key:
            section, sub_key = key.split(".", 1)
            self._check_key(section, sub_key)
            return section, sub_key
        owners = [s for s in self.SECTIONS if key in self._DEFAULT_CONFIG[s]]
        if not owners:
            raise KeyError(f"Unknown config key: {key}")
        if len(owners) > 1:
            raise KeyError(f"Ambiguous config key: {key} (in {owners})")
        return owners[0], key

    @staticmethod
    def parse_value(text: str):
        try:
            return ast.literal_eval(text)
        except (ValueError, SyntaxError):
            return text

    def apply_overrides(self, overrides: list[str] | None) -> "SketchConfig":
        """
        Apply `key=value` strings in order.
        """
        for item in overrides or []:
            if "=" not in item:
                raise ValueError(f"Override must look like key=value, got {item!r}")
            key, text = item.split("=", 1)
            self.set(key.strip(), self.parse_value(text.strip()))
        return self

    def set(self, key: str, value) -> "SketchConfig":
        section, sub_key = self.resolve_key(key)
        if section is None:
            self._data["seed"] = int(value)
        else:
            self._data[section][sub_key] = value
        return self

    def get(self, key: str):
        section, sub_key = self.resolve_key(key)
        if section is None:
            return self._data["seed"]
        return self._data[section][sub_key]

    def __getitem__(self, section: str) -> dict:
        if section == "seed":
            return self._data["seed"]
        if section not in self.SECTIONS:
            raise KeyError(f"Unknown config section: {section}")
        return self._data[section]

    def to_dict(self) -> dict:
        return copy.deepcopy(self._data)

    def copy(self) -> "SketchConfig":
        return SketchConfig(self.to_dict())

    def config_hash(self) -> str:
        canonical = json.dumps(self._data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    # typed views

    def split_spec(self) -> SplitSpec:
        d = self._data["dataset"]
        return SplitSpec(
            int(d["train"]), int(d["val"]), int(d["test"]), bool(d["shuffle"]), self._data["seed"]
        )

    def aligner(self) -> FaceAligner:
        d = self._data["dataset"]
        return FaceAligner(
            {
                "width": int(d["crop_width"]),
                "height": int(d["crop_height"]),
                "left_eye": tuple(d["left_eye"]),
                "right_eye": tuple(d["right_eye"]),
            }
        )

    def augmenter(self) -> PairedAugmenter:
        d = self._data["dataset"]
        return PairedAugmenter(float(d["flip_prob"]), float(d["noise_amplitude"]))

    def generator_spec(self) -> GeneratorSpec:
        m = self._data["model"]
        return GeneratorSpec(layers=m["generator"], norm=m["norm"])

    def discriminator_spec(self) -> DiscriminatorSpec:
        m = self._data["model"]
        return DiscriminatorSpec(
            layers=m["discriminator"],
            strides=tuple(int(s) for s in m["disc_strides"]),
            norm=m["norm"],
            norm_first=bool(m["disc_norm_first"]),
        )

    def loss_weights(self) -> LossWeights:
        o = self._data["objective"]

        def pick(name: str, shared: str):
            return o[name] if o[name] is not None else o[shared]

        return LossWeights(
            lambda_A=pick("lambda_A", "lambda"),
            lambda_B=pick("lambda_B", "lambda"),
            eta_A=pick("eta_A", "eta"),
            eta_B=pick("eta_B", "eta"),
        )

    def train_config(self) -> TrainConfig:
        t = self._data["trainer"]
        return TrainConfig(
            epochs_constant=int(t["epochs_constant"]),
            epochs_decay=int(t["epochs_decay"]),
            base_lr=float(t["base_lr"]),
            adam_beta1=float(t["adam_beta1"]),
            adam_beta2=float(t["adam_beta2"]),
            batch_size=int(t["batch_size"]),
            weights=self.loss_weights(),
            ablation_level_mask=frozenset(int(x) for x in t["ablation_level_mask"]),
            replay_buffer_size=int(t["replay_buffer_size"]),
            seed=int(self._data["seed"]),
            gan_mode=self._data["objective"]["gan_mode"],
            checkpoint_interval=int(t["checkpoint_interval"]),
            num_workers=int(t["num_workers"]),
            validate=bool(t["validate"]),
        )

    def validate(self) -> "SketchConfig":
        """
        Build every typed view once so malformed values surface early.
        """
        self.split_spec()
        self.aligner()
        self.augmenter()
        self.generator_spec().tokens()
        self.discriminator_spec().filters()
        self.train_config()
        return self


class SketchConfigIO:
    """
    Helper for saving/loading SketchConfig as JSON.
    """

    @staticmethod
    def save_to_json_file(config: SketchConfig, filepath: str) -> None:
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(config.to_dict(), f, indent=2, ensure_ascii=False)

    @staticmethod
    def load_from_json_file(filepath: str) -> SketchConfig:
        with open(filepath, "r", encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError(f"Config file {filepath} must hold a JSON object")
        return SketchConfig(data)
