import copy
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field

import torch
from torch.optim import Adam

from .FaceAligner import FaceAligner
from .PairedData import DatasetSplit, PairedAugmenter, PairedDataset, make_pyramid
from .ReplayBuffer import ReplayBuffer
from .SketchConfig import SketchConfig, TrainConfig
from .SketchMetrics import ImageQuality
from .SketchNetworks import (
    DiscriminatorSpec,
    GeneratorSpec,
    HeadTap,
    SketchModels,
    SketchNetworks,
)
from .SketchObjective import TERM_NAMES, LossBreakdown, SketchObjective
from .utils import LEVELS, logger, numpy_rng, torch_rng

steps_logger = logging.getLogger("facesketch.steps")
steps_logger.propagate = False
steps_logger.setLevel(logging.INFO)

DIRECTIONS = ("A", "B")
CHECKPOINT_KEYS = (
    "epoch",
    "step",
    "config_hash",
    "models",
    "optimizers",
    "buffers",
    "rng_state",
    "g_spec",
    "d_spec",
    "best_val",
    "history",
    "config",
)


def _generator_spec_to_dict(spec: GeneratorSpec) -> dict:
    return dataclasses.asdict(spec)


def _generator_spec_from_dict(data: dict) -> GeneratorSpec:
    taps = data.get("taps")
    return GeneratorSpec(
        layers=data["layers"],
        taps=tuple(HeadTap(**t) for t in taps) if taps is not None else None,
        norm=data["norm"],
        in_channels=data["in_channels"],
    )


def _discriminator_spec_from_dict(data: dict) -> DiscriminatorSpec:
    return DiscriminatorSpec(**{**data, "strides": tuple(data["strides"])})


@dataclass
class Checkpoint:
    """
    Everything needed to resume training or to run inference.
    `models` maps g_A, g_B, d_A64 ... d_B256 to module state dicts.
    """

    epoch: int
    config_hash: str
    models: dict[str, dict]
    g_spec: dict
    d_spec: dict
    step: int = 0
    optimizers: dict[str, dict] = field(default_factory=dict)
    buffers: dict[str, dict] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    best_val: float | None = None
    history: list[dict] = field(default_factory=list)
    config: dict | None = None

    def to_payload(self) -> dict:
        return {key: getattr(self, key) for key in CHECKPOINT_KEYS}

    @classmethod
    def from_payload(cls, payload: dict) -> "Checkpoint":
        missing = [key for key in CHECKPOINT_KEYS if key not in payload]
        if missing:
            raise ValueError(f"Checkpoint payload lacks {missing}")
        return cls(**{key: payload[key] for key in CHECKPOINT_KEYS})

    def generator_spec(self) -> GeneratorSpec:
        return _generator_spec_from_dict(self.g_spec)

    def discriminator_spec(self) -> DiscriminatorSpec:
        return _discriminator_spec_from_dict(self.d_spec)

    def build_models(self) -> SketchModels:
        models = SketchNetworks.build_all(
            self.generator_spec(), self.discriminator_spec(), torch.Generator().manual_seed(0)
        )
        models.load_state_dict(self.models)
        return models

    def digest(self) -> str:
        """
        SHA-256 over the checkpoint content (tensor bytes, dtypes, shapes and metadata).
        """
        h = hashlib.sha256()
        _feed_digest(h, self.to_payload())
        return h.hexdigest()


def _feed_digest(h, obj) -> None:
    if isinstance(obj, torch.Tensor):
        t = obj.detach().cpu().contiguous()
        h.update(f"T{t.dtype}{tuple(t.shape)}".encode())
        h.update(t.numpy().tobytes())
    elif isinstance(obj, dict):
        h.update(f"D{len(obj)}".encode())
        for key in sorted(obj, key=repr):
            h.update(repr(key).encode())
            _feed_digest(h, obj[key])
    elif isinstance(obj, (list, tuple)):
        h.update(f"L{len(obj)}".encode())
        for item in obj:
            _feed_digest(h, item)
    else:
        h.update(repr(obj).encode())


class CheckpointIO:
    """
    Single-file checkpoint archives, written atomically.
    """

    @staticmethod
    def save(ckpt: Checkpoint, filepath: str) -> str:
        directory = os.path.dirname(os.path.abspath(filepath))
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                torch.save(ckpt.to_payload(), f)
            os.replace(tmp_path, filepath)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        logger.info(f"Saved checkpoint to {filepath}")
        return filepath

    @staticmethod
    def load(filepath: str) -> Checkpoint:
        if not os.path.isfile(filepath):
            raise FileNotFoundError(f"Checkpoint not found: {filepath}")
        try:
            payload = torch.load(filepath, map_location="cpu", weights_only=False)
        except Exception as e:
            raise ValueError(f"Corrupt checkpoint {filepath}: {e}") from e
        if not isinstance(payload, dict):
            raise ValueError(f"Corrupt checkpoint {filepath}: payload is not a mapping")
        try:
            return Checkpoint.from_payload(payload)
        except ValueError as e:
            raise ValueError(f"Corrupt checkpoint {filepath}: {e}") from e

    @staticmethod
    def epoch_path(out_dir: str, epoch: int) -> str:
        return os.path.join(out_dir, f"ckpt_e{epoch}.bin")

    @staticmethod
    def best_path(out_dir: str) -> str:
        return os.path.join(out_dir, "ckpt_best.bin")

    @staticmethod
    def last_path(out_dir: str) -> str:
        return os.path.join(out_dir, "ckpt_last.bin")

    @staticmethod
    def find_for_inference(out_dir: str) -> str:
        """
        Best-validation checkpoint if present, otherwise the last one.
        """
        for path in (CheckpointIO.best_path(out_dir), CheckpointIO.last_path(out_dir)):
            if os.path.isfile(path):
                return path
        raise FileNotFoundError(f"No checkpoint found in {out_dir}")


class SketchTrainer:
    """
    Alternating generator / discriminator optimization of both generators and the
    six discriminators, with replay buffers and the linear-decay schedule.
    """

    def __init__(
        self,
        cfg: TrainConfig,
        g_spec: GeneratorSpec | None = None,
        d_spec: DiscriminatorSpec | None = None,
        config_hash: str = "",
        config: dict | None = None,
        init_std: float = 0.02,
        device: str = "cpu",
    ):
        self.cfg = cfg
        self.g_spec = g_spec or GeneratorSpec()
        self.d_spec = d_spec or DiscriminatorSpec()
        self.config_hash = config_hash
        self.config = config
        self.device = torch.device(device)

        self.models = SketchNetworks.build_all(
            self.g_spec, self.d_spec, torch_rng(cfg.seed, 0x1417), init_std
        )
        self.models.to(self.device).train()

        betas = (cfg.adam_beta1, cfg.adam_beta2)
        self.opt_g = Adam(
            itertools.chain(self.models.g_A.parameters(), self.models.g_B.parameters()),
            lr=cfg.base_lr,
            betas=betas,
        )
        self.opt_d: dict[str, Adam] = {}
        self.buffers: dict[str, ReplayBuffer] = {}
        for i, (direction, level) in enumerate(itertools.product(DIRECTIONS, LEVELS)):
            key = f"{direction}{level}"
            d = self.models.discriminator(direction, level)
            self.opt_d[key] = Adam(d.parameters(), lr=cfg.base_lr, betas=betas)
            self.buffers[key] = ReplayBuffer(cfg.replay_buffer_size, numpy_rng(cfg.seed, 0xB0F, i))

        self.epoch = 0
        self.step = 0
        self.lr = cfg.base_lr
        self.best_val: float | None = None
        self.history: list[dict] = []

    @classmethod
    def from_config(cls, config: SketchConfig, device: str = "cpu") -> "SketchTrainer":
        return cls(
            config.train_config(),
            g_spec=config.generator_spec(),
            d_spec=config.discriminator_spec(),
            config_hash=config.config_hash(),
            config=config.to_dict(),
            init_std=float(config["model"]["init_std"]),
            device=device,
        )

    # schedule

    @staticmethod
    def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
        """
        base_lr for the first epochs_constant epochs, then linear decay to 0
        at epoch epochs_constant + epochs_decay.
        """
        total = cfg.total_epochs()
        if not 1 <= epoch <= total:
            raise ValueError(f"Epoch out of range: {epoch=} must be in [1, {total}]")
        if epoch <= cfg.epochs_constant:
            return cfg.base_lr
        return cfg.base_lr * (total - epoch) / cfg.epochs_decay

    def set_lr(self, lr: float) -> None:
        self.lr = lr
        for opt in (self.opt_g, *self.opt_d.values()):
            for group in opt.param_groups:
                group["lr"] = lr

    # one step

    def _set_requires_grad(self, requires_grad: bool, levels=LEVELS) -> None:
        for direction in DIRECTIONS:
            for level in levels:
                for p in self.models.discriminator(direction, level).parameters():
                    p.requires_grad_(requires_grad)

    @staticmethod
    def _check_finite(breakdown: LossBreakdown, phase: str, step: int) -> None:
        bad = breakdown.first_non_finite()
        if bad is not None:
            raise FloatingPointError(
                f"Non-finite {phase} loss at step {step}: first bad term is {bad}"
            )

    def train_step(self, batch: dict) -> tuple[LossBreakdown, LossBreakdown]:
        """
        One generator update on the full objective, then one update per active
        discriminator on replay-buffered fakes. Returns (G-phase, D-phase) breakdowns.
        """
        cfg = self.cfg
        mask = cfg.ablation_level_mask
        mode = cfg.gan_mode
        step = self.step + 1

        real_A = batch["photo"].to(self.device)
        real_B = batch["sketch"].to(self.device)
        input_A = batch.get("photo_input", batch["photo"]).to(self.device)
        input_B = batch.get("sketch_input", batch["sketch"]).to(self.device)
        pyr_A, pyr_B = make_pyramid(real_A), make_pyramid(real_B)

        # generator phase
        self._set_requires_grad(False)
        self.opt_g.zero_grad(set_to_none=True)
        fake_B = self.models.g_A(input_A)
        fake_A = self.models.g_B(input_B)
        rec_A = self.models.g_B(fake_B.level3)
        rec_B = self.models.g_A(fake_A.level3)

        zero = torch.zeros((), device=self.device)
        gan_A, gan_B = [], []
        for level in LEVELS:
            if level in mask:
                gan_A.append(
                    SketchObjective.adversarial_loss_g(
                        self.models.discriminator("A", level), fake_B[level], mode
                    )
                )
                gan_B.append(
                    SketchObjective.adversarial_loss_g(
                        self.models.discriminator("B", level), fake_A[level], mode
                    )
                )
            else:
                gan_A.append(zero)
                gan_B.append(zero)

        g_parts = {
            "gan_A": gan_A,
            "gan_B": gan_B,
            "syn_A": SketchObjective.synthesis_loss(fake_A, pyr_A),
            "syn_B": SketchObjective.synthesis_loss(fake_B, pyr_B),
            "cyc_A": SketchObjective.cycle_loss(rec_A, pyr_A),
            "cyc_B": SketchObjective.cycle_loss(rec_B, pyr_B),
        }
        g_breakdown = SketchObjective.total_objective(g_parts, cfg.weights)
        self._check_finite(g_breakdown, "generator", step)
        g_breakdown.total.backward()
        self.opt_g.step()

        # discriminator phase, active levels only
        active = [level for level in LEVELS if level in mask]
        self._set_requires_grad(True, active)
        d_terms = {"gan_A": [zero] * 3, "gan_B": [zero] * 3}
        for i, level in enumerate(LEVELS):
            if level not in mask:
                continue
            for direction, real, fake in (("A", pyr_B, fake_B), ("B", pyr_A, fake_A)):
                key = f"{direction}{level}"
                shown = self.buffers[key].push_sample(fake[level].detach())
                self.opt_d[key].zero_grad(set_to_none=True)
                loss = SketchObjective.adversarial_loss_d(
                    self.models.discriminator(direction, level), real[level], shown, mode
                )
                if not math.isfinite(float(loss)):
                    raise FloatingPointError(
                        f"Non-finite discriminator loss at step {step}: first bad term is gan_{direction}_{level}"
                    )
                loss.backward()
                self.opt_d[key].step()
                d_terms[f"gan_{direction}"][i] = loss.detach()

        d_parts = {name: d_terms.get(name, [0.0] * 3) for name in TERM_NAMES}
        d_breakdown = SketchObjective.total_objective(d_parts, cfg.weights)

        self.step = step
        record = {
            "step": step,
            "epoch": self.epoch,
            "lr": self.lr,
            **g_breakdown.components(),
            "total": float(g_breakdown.total),
            "d_total": float(d_breakdown.total),
        }
        steps_logger.info(json.dumps(record))
        logger.debug(f"step {step}: g={record['total']:.4f} d={record['d_total']:.4f}")
        return g_breakdown, d_breakdown

    # validation

    def validate(self, split: DatasetSplit) -> float:
        """
        Mean level-256 SSIM over the split, averaged over both directions.
        """
        self.models.eval()
        scores = []
        with torch.no_grad():
            for sample in split:
                fake_B = self.models.g_A(sample.photo[None].to(self.device)).level3[0]
                fake_A = self.models.g_B(sample.sketch[None].to(self.device)).level3[0]
                for fake, real in ((fake_B, sample.sketch), (fake_A, sample.photo)):
                    scores.append(
                        ImageQuality.ssim(
                            FaceAligner.to_luminance(FaceAligner.tensor_to_uint8_range(fake)),
                            FaceAligner.to_luminance(FaceAligner.tensor_to_uint8_range(real)),
                        )
                    )
        self.models.train()
        return float(sum(scores) / len(scores)) if scores else float("nan")

    # checkpoints

    def make_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            epoch=self.epoch,
            config_hash=self.config_hash,
            models={
                name: {k: v.detach().cpu().clone() for k, v in state.items()}
                for name, state in self.models.state_dict().items()
            },
            g_spec=_generator_spec_to_dict(self.g_spec),
            d_spec=dataclasses.asdict(self.d_spec),
            step=self.step,
            optimizers=copy.deepcopy(
                {"g": self.opt_g.state_dict()}
                | {f"d_{key}": opt.state_dict() for key, opt in self.opt_d.items()}
            ),
            buffers={key: buf.state_dict() for key, buf in self.buffers.items()},
            rng_state={"torch": torch.get_rng_state()},
            best_val=self.best_val,
            history=[dict(r) for r in self.history],
            config=self.config,
        )

    def load_checkpoint(self, ckpt: Checkpoint) -> None:
        if self.config_hash and ckpt.config_hash and ckpt.config_hash != self.config_hash:
            logger.warning(
                f"Resuming from a checkpoint with config hash {ckpt.config_hash[:12]}, "
                f"current run has {self.config_hash[:12]}"
            )
        self.models.load_state_dict(ckpt.models)
        self.models.to(self.device)
        self.opt_g.load_state_dict(ckpt.optimizers["g"])
        for key, opt in self.opt_d.items():
            opt.load_state_dict(ckpt.optimizers[f"d_{key}"])
        for key, buf in self.buffers.items():
            buf.load_state_dict(ckpt.buffers[key])
        if "torch" in ckpt.rng_state:
            torch.set_rng_state(ckpt.rng_state["torch"])
        self.epoch = ckpt.epoch
        self.step = ckpt.step
        self.best_val = ckpt.best_val
        self.history = [dict(r) for r in ckpt.history]

    # full run

    def _open_step_log(self, out_dir: str, append: bool) -> logging.Handler:
        handler = logging.FileHandler(
            os.path.join(out_dir, "train_log.jsonl"), mode="a" if append else "w", encoding="utf-8"
        )
        handler.setFormatter(logging.Formatter("%(message)s"))
        steps_logger.addHandler(handler)
        return handler

    def fit(
        self,
        datasets: dict[str, DatasetSplit],
        out_dir: str,
        augmenter: PairedAugmenter | None = None,
        resume_from: str | None = None,
    ) -> list[dict]:
        """
        Train for all scheduled epochs and return the per-epoch history.
        Writes ckpt_e{epoch}.bin every checkpoint_interval epochs, ckpt_last.bin every
        epoch and ckpt_best.bin whenever validation SSIM improves.
        """
        cfg = self.cfg
        if "train" not in datasets or len(datasets["train"]) == 0:
            raise ValueError("fit needs a non-empty train split")
        os.makedirs(out_dir, exist_ok=True)

        if resume_from is not None:
            self.load_checkpoint(CheckpointIO.load(resume_from))
            logger.info(f"Resumed from {resume_from} at epoch {self.epoch}")

        train_set = PairedDataset(datasets["train"], augmenter or PairedAugmenter(), seed=cfg.seed)
        val_split = datasets.get("val")
        total = cfg.total_epochs()

        handler = self._open_step_log(out_dir, append=resume_from is not None)
        try:
            for epoch in range(self.epoch + 1, total + 1):
                self.epoch = epoch
                self.set_lr(self.lr_at_epoch(cfg, epoch))
                self.models.train()

                g_totals, d_totals = [], []
                for batch in train_set.loader(
                    epoch, batch_size=cfg.batch_size, num_workers=cfg.num_workers
                ):
                    g, d = self.train_step(batch)
                    g_totals.append(float(g.total))
                    d_totals.append(float(d.total))

                val_ssim = None
                if cfg.validate and val_split is not None and len(val_split) > 0:
                    val_ssim = self.validate(val_split)

                improved = val_ssim is not None and (
                    self.best_val is None or val_ssim > self.best_val
                )
                if improved:
                    self.best_val = val_ssim

                record = {
                    "epoch": epoch,
                    "lr": self.lr,
                    "steps": len(g_totals),
                    "g_total": sum(g_totals) / len(g_totals),
                    "d_total": sum(d_totals) / len(d_totals),
                    "val_ssim": val_ssim,
                    "checkpoints": [],
                }
                self.history.append(record)

                paths = []
                if cfg.checkpoint_interval > 0 and epoch % cfg.checkpoint_interval == 0:
                    paths.append(CheckpointIO.epoch_path(out_dir, epoch))
                if improved:
                    paths.append(CheckpointIO.best_path(out_dir))
                paths.append(CheckpointIO.last_path(out_dir))
                record["checkpoints"] = [os.path.basename(p) for p in paths]

                ckpt = self.make_checkpoint()
                for path in paths:
                    CheckpointIO.save(ckpt, path)

                val_msg = f" val_ssim={val_ssim:.4f}" if val_ssim is not None else ""
                logger.info(
                    f"Epoch {epoch}/{total}: lr={self.lr:.2e} "
                    f"g={record['g_total']:.4f} d={record['d_total']:.4f}{val_msg}"
                )
        finally:
            steps_logger.removeHandler(handler)
            handler.close()

        return self.history
