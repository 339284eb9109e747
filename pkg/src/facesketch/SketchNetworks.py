import re
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .PairedData import ResolutionPyramid
from .utils import LEVELS, MODEL_SIZE, check_level
from .utils import Types as T


@dataclass(frozen=True)
class LayerToken:
    """
    One parsed layer token.
    kind: "conv" (CkSs-n / Ck-n), "res" (RBn x m) or "tconv" (TCn)
    """

    kind: str
    filters: int
    kernel: int = 3
    stride: int = 1
    repeat: int = 1
    text: str = ""


class SpecParser:
    _CONV_STRIDED = re.compile(r"^C(\d+)S(\d+)-(\d+)$")
    _CONV = re.compile(r"^C(\d+)-(\d+)$")
    _RES = re.compile(r"^RB(\d+)\s*[x×X*]\s*(\d+)$")
    _TCONV = re.compile(r"^TC(\d+)$")
    _DISC = re.compile(r"^C(\d+)$")

    @staticmethod
    def split_tokens(text: str) -> list[str]:
        return [t.strip() for t in re.split(r"[,\s]+", text.strip()) if t.strip()]

    @staticmethod
    def parse_generator_token(token: str) -> LayerToken:
        """
        C7S1-64 -> 7x7 conv stride 1; C3-128 -> 3x3 conv stride 2;
        RB256x9 -> nine residual blocks; TC64 -> 3x3 transposed conv stride 1/2.
        """
        if m := SpecParser._CONV_STRIDED.match(token):
            k, s, n = (int(g) for g in m.groups())
            return LayerToken("conv", n, kernel=k, stride=s, text=token)
        if m := SpecParser._CONV.match(token):
            k, n = (int(g) for g in m.groups())
            return LayerToken("conv", n, kernel=k, stride=2, text=token)
        if m := SpecParser._RES.match(token):
            n, r = (int(g) for g in m.groups())
            return LayerToken("res", n, kernel=3, stride=1, repeat=r, text=token)
        if m := SpecParser._TCONV.match(token):
            return LayerToken("tconv", int(m.group(1)), kernel=3, stride=2, text=token)
        raise ValueError(f"Malformed generator token: {token!r}")

    @staticmethod
    def parse_discriminator_layers(text: str) -> list[int]:
        """
        "C64-C128-C256-C512" -> [64, 128, 256, 512]
        """
        tokens = [t for t in re.split(r"[-,\s]+", text.strip()) if t]
        if not tokens:
            raise ValueError(f"Empty discriminator spec: {text!r}")
        filters = []
        for token in tokens:
            m = SpecParser._DISC.match(token)
            if not m:
                raise ValueError(f"Malformed discriminator token: {token!r}")
            filters.append(int(m.group(1)))
        return filters


@dataclass(frozen=True)
class HeadTap:
    """
    Output head attached after token `after`; kernel 3x3, 3 channels, tanh.
    The level-256 output is the last token itself and carries no tap.
    """

    level: int
    after: int
    kernel: int = 3
    channels: int = 3


@dataclass(frozen=True)
class GeneratorSpec:
    layers: str = "C7S1-64, C3-128, C3-256, RB256x9, TC64, TC32, C7S1-3"
    taps: tuple[HeadTap, ...] | None = None
    norm: str = "batch"
    in_channels: int = 3

    def tokens(self) -> list[LayerToken]:
        return [SpecParser.parse_generator_token(t) for t in SpecParser.split_tokens(self.layers)]

    def resolved_taps(self) -> tuple[HeadTap, ...]:
        """
        Explicit taps, or the default ones: 64 after the residual stack,
        128 after the first transposed conv.
        """
        if self.taps is not None:
            return self.taps
        tokens = self.tokens()
        res_idx = [i for i, t in enumerate(tokens) if t.kind == "res"]
        tconv_idx = [i for i, t in enumerate(tokens) if t.kind == "tconv"]
        if not res_idx or not tconv_idx:
            raise ValueError(
                f"Cannot place default heads: spec needs RB and TC tokens ({self.layers!r})"
            )
        return (HeadTap(64, res_idx[-1]), HeadTap(128, tconv_idx[0]))

    def with_widths(self, base: int, res_blocks: int = 9) -> "GeneratorSpec":
        """
        Same topology with `base` filters in place of 64 (32/128/256 scale along).
        """
        layers = (
            f"C7S1-{base}, C3-{2 * base}, C3-{4 * base}, RB{4 * base}x{res_blocks}, "
            f"TC{base}, TC{base // 2}, C7S1-3"
        )
        return GeneratorSpec(layers=layers, taps=self.taps, norm=self.norm)


@dataclass(frozen=True)
class DiscriminatorSpec:
    layers: str = "C64-C128-C256-C512"
    resolution: int = 256
    strides: tuple[int, ...] = (2, 2, 2, 1)
    kernel: int = 4
    norm: str = "batch"
    norm_first: bool = False
    slope: float = 0.2
    in_channels: int = 3

    def filters(self) -> list[int]:
        return SpecParser.parse_discriminator_layers(self.layers)

    def patch_size(self) -> int:
        """
        Spatial size of the score map for this spec's input resolution.
        """
        size = self.resolution
        pad = 1
        for stride in [*self.strides, 1]:
            size = (size + 2 * pad - self.kernel) // stride + 1
        return size


def _norm_layer(norm: str, channels: int) -> nn.Module:
    if norm == "batch":
        return nn.BatchNorm2d(channels)
    if norm == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    raise ValueError(f"Invalid norm: {norm=} must be 'batch' or 'instance'")


class ResidualBlock(nn.Module):
    """
    Two 3x3 convs with normalization, ReLU after the first, additive skip.
    """

    def __init__(self, channels: int, norm: str = "batch"):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            _norm_layer(norm, channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            _norm_layer(norm, channels),
        )

    def forward(self, x):
        return x + self.block(x)


@dataclass(frozen=True)
class GeneratorOutput(ResolutionPyramid):
    """Synthesized pyramid; level3 feeds the opposite generator."""


class Generator(nn.Module):
    """
    Encoder / residual trunk / decoder with output heads at 64, 128 and 256.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        tokens = spec.tokens()
        if not tokens:
            raise ValueError("Empty generator spec")

        taps = {tap.after: tap for tap in spec.resolved_taps()}
        if len(taps) != 2:
            raise ValueError(f"Generator needs two hidden heads, got {len(taps)}")

        self.trunk = nn.ModuleList()
        self.heads = nn.ModuleDict()
        self._tap_after: dict[int, int] = {}

        channels, size = spec.in_channels, MODEL_SIZE
        for idx, token in enumerate(tokens):
            last = idx == len(tokens) - 1
            layers: list[nn.Module] = []
            if token.kind == "conv":
                if token.kernel == 7:
                    layers += [
                        nn.ReflectionPad2d(3),
                        nn.Conv2d(channels, token.filters, 7, stride=token.stride),
                    ]
                else:
                    layers += [
                        nn.Conv2d(
                            channels,
                            token.filters,
                            token.kernel,
                            stride=token.stride,
                            padding=token.kernel // 2,
                        )
                    ]
                size = (size - 1) // token.stride + 1
                channels = token.filters
            elif token.kind == "res":
                if token.filters != channels:
                    raise ValueError(
                        f"Residual token {token.text!r} expects {token.filters} channels, "
                        f"but trunk has {channels}"
                    )
                layers += [ResidualBlock(channels, spec.norm) for _ in range(token.repeat)]
            elif token.kind == "tconv":
                layers += [
                    nn.ConvTranspose2d(
                        channels, token.filters, 3, stride=2, padding=1, output_padding=1
                    )
                ]
                size *= 2
                channels = token.filters

            if last:
                if token.kind != "conv" or token.filters != 3:
                    raise ValueError(f"Last generator token must be a 3-filter conv: {token.text!r}")
                layers.append(nn.Tanh())
            elif token.kind in ("conv", "tconv"):
                layers += [_norm_layer(spec.norm, channels), nn.ReLU(inplace=True)]
            self.trunk.append(nn.Sequential(*layers))

            if idx in taps:
                tap = taps[idx]
                check_level(tap.level)
                if size != tap.level:
                    raise ValueError(
                        f"Head {tap.level} taps token {token.text!r} whose output is {size}x{size}"
                    )
                self.heads[str(tap.level)] = nn.Sequential(
                    nn.Conv2d(channels, tap.channels, tap.kernel, padding=tap.kernel // 2),
                    nn.Tanh(),
                )
                self._tap_after[tap.level] = idx

        if size != MODEL_SIZE:
            raise ValueError(f"Generator trunk ends at {size}x{size}, expected {MODEL_SIZE}")
        if set(self._tap_after) != set(LEVELS[:2]):
            raise ValueError(f"Generator heads must cover {LEVELS[:2]}, got {sorted(self._tap_after)}")

    def trace_shapes(self, x: T.Tensor) -> list[tuple[int, ...]]:
        """
        Per-token output shapes (without batch dim) for input x.
        """
        shapes = []
        with torch.no_grad():
            for block in self.trunk:
                x = block(x)
                shapes.append(tuple(x.shape[1:]))
        return shapes

    def forward(self, x: T.Tensor) -> GeneratorOutput:
        if x.dim() != 4 or x.shape[-2:] != (MODEL_SIZE, MODEL_SIZE):
            raise ValueError(
                f"Generator input must be Nx3x{MODEL_SIZE}x{MODEL_SIZE}, but shape is {tuple(x.shape)}"
            )
        outputs: dict[int, T.Tensor] = {}
        after = {idx: level for level, idx in self._tap_after.items()}
        for idx, block in enumerate(self.trunk):
            x = block(x)
            if idx in after:
                level = after[idx]
                outputs[level] = self.heads[str(level)](x)
        return GeneratorOutput(outputs[64], outputs[128], x)


class Discriminator(nn.Module):
    """
    PatchGAN: 4x4 Conv-Norm-LeakyReLU stack plus a 1-channel stride-1 conv.
    Returns raw score logits of shape Nx1xPxP.
    """

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.resolution = check_level(spec.resolution)
        filters = spec.filters()
        if len(filters) != len(spec.strides):
            raise ValueError(
                f"Discriminator has {len(filters)} layers but {len(spec.strides)} strides"
            )

        layers: list[nn.Module] = []
        channels = spec.in_channels
        for i, (n, stride) in enumerate(zip(filters, spec.strides)):
            layers.append(nn.Conv2d(channels, n, spec.kernel, stride=stride, padding=1))
            if i > 0 or spec.norm_first:
                layers.append(_norm_layer(spec.norm, n))
            layers.append(nn.LeakyReLU(spec.slope, inplace=True))
            channels = n
        layers.append(nn.Conv2d(channels, 1, spec.kernel, stride=1, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, x: T.Tensor) -> T.Tensor:
        if x.shape[-2:] != (self.resolution, self.resolution):
            raise ValueError(
                f"Discriminator expects {self.resolution}x{self.resolution} input, "
                f"but shape is {tuple(x.shape)}"
            )
        return self.model(x)


@dataclass
class SketchModels:
    """
    Both generators and the six discriminators (d_A judges sketches, d_B judges photos).
    """

    g_A: Generator
    g_B: Generator
    d_A: nn.ModuleDict = field(default_factory=nn.ModuleDict)
    d_B: nn.ModuleDict = field(default_factory=nn.ModuleDict)

    def discriminator(self, direction: str, level: int) -> Discriminator:
        table = {"A": self.d_A, "B": self.d_B}
        if direction not in table:
            raise ValueError(f"Invalid direction: {direction=} must be 'A' or 'B'")
        return table[direction][str(check_level(level))]

    def all_modules(self) -> dict[str, nn.Module]:
        modules: dict[str, nn.Module] = {"g_A": self.g_A, "g_B": self.g_B}
        for level in LEVELS:
            modules[f"d_A{level}"] = self.d_A[str(level)]
            modules[f"d_B{level}"] = self.d_B[str(level)]
        return modules

    def train(self, mode: bool = True) -> "SketchModels":
        for module in self.all_modules().values():
            module.train(mode)
        return self

    def eval(self) -> "SketchModels":
        return self.train(False)

    def to(self, device: str | torch.device) -> "SketchModels":
        for module in self.all_modules().values():
            module.to(device)
        return self

    def state_dict(self) -> dict[str, dict]:
        return {name: module.state_dict() for name, module in self.all_modules().items()}

    def load_state_dict(self, state: dict[str, dict]) -> None:
        modules = self.all_modules()
        if set(state) != set(modules):
            raise KeyError(
                f"Model state covers {sorted(state)}, expected {sorted(modules)}"
            )
        for name, module in modules.items():
            module.load_state_dict(state[name])


class SketchNetworks:
    """
    Builders and initialization for generators and discriminators.
    """

    @staticmethod
    def init_weights(net: nn.Module, rng: torch.Generator, std: float = 0.02) -> nn.Module:
        """
        Conv kernels ~ N(0, std^2), normalization scales ~ N(1, std^2), all biases 0.
        """
        with torch.no_grad():
            for module in net.modules():
                if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                    module.weight.copy_(
                        torch.randn(module.weight.shape, generator=rng) * std
                    )
                    if module.bias is not None:
                        module.bias.zero_()
                elif isinstance(module, (nn.BatchNorm2d, nn.InstanceNorm2d)):
                    if module.weight is not None:
                        module.weight.copy_(
                            1.0 + torch.randn(module.weight.shape, generator=rng) * std
                        )
                    if module.bias is not None:
                        module.bias.zero_()
        return net

    @staticmethod
    def build_generator(
        spec: GeneratorSpec, rng: torch.Generator, std: float = 0.02
    ) -> Generator:
        return SketchNetworks.init_weights(Generator(spec), rng, std)

    @staticmethod
    def build_discriminator(
        spec: DiscriminatorSpec, rng: torch.Generator, std: float = 0.02
    ) -> Discriminator:
        return SketchNetworks.init_weights(Discriminator(spec), rng, std)

    @staticmethod
    def build_all(
        g_spec: GeneratorSpec,
        d_spec: DiscriminatorSpec,
        rng: torch.Generator,
        std: float = 0.02,
    ) -> SketchModels:
        """
        Two generators plus one discriminator per (direction, level); the same
        architecture at every level.
        """
        models = SketchModels(
            g_A=SketchNetworks.build_generator(g_spec, rng, std),
            g_B=SketchNetworks.build_generator(g_spec, rng, std),
        )
        for table in (models.d_A, models.d_B):
            for level in LEVELS:
                spec = DiscriminatorSpec(
                    layers=d_spec.layers,
                    resolution=level,
                    strides=d_spec.strides,
                    kernel=d_spec.kernel,
                    norm=d_spec.norm,
                    norm_first=d_spec.norm_first,
                    slope=d_spec.slope,
                    in_channels=d_spec.in_channels,
                )
                table[str(level)] = SketchNetworks.build_discriminator(spec, rng, std)
        return models
