"""Time-series ResNet encoders, the spectrogram encoder and the six projection heads."""

from dataclasses import dataclass

import torch
from torch import nn

from .autodiff import (
    BatchNorm,
    Linear,
    MaxPool,
    ReLU,
    conv1d,
    conv2d,
    global_avg_pool,
    init_uniform,
    relu,
)
from .epoching import EPOCH_SAMPLES
from .losses import ProjectionSet
from .views import StftConfig

PROJECTION_DIM = 128
SPEC_FEATURE_DIM = 64
HEAD_IDS: tuple[str, ...] = ("f1", "f2", "h1", "h2", "g1", "g2")


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    filters: int
    stride: int
    padding: int


@dataclass(frozen=True)
class StageSpec:
    """A residual stage: one block's conv rows, repeated; strides apply to the first repetition only."""

    name: str
    rows: tuple[ConvSpec, ...]
    repeats: int


@dataclass(frozen=True)
class ResNetVariant:
    kind: str
    stem: ConvSpec
    pool: ConvSpec
    stages: tuple[StageSpec, ...]

    @property
    def feature_dim(self) -> int:
        return self.stages[-1].rows[-1].filters


_STEM = ConvSpec(kernel=71, filters=16, stride=2, padding=35)
_POOL = ConvSpec(kernel=71, filters=16, stride=2, padding=35)


def _bottleneck(name: str, width: int, out: int, stride: int, repeats: int) -> StageSpec:
    return StageSpec(
        name,
        (
            ConvSpec(1, width, 1, 0),
            ConvSpec(25, width, stride, 12),
            ConvSpec(1, out, 1, 0),
        ),
        repeats,
    )


def _basic(name: str, width: int, stride: int, repeats: int) -> StageSpec:
    return StageSpec(
        name, (ConvSpec(25, width, 1, 12), ConvSpec(25, width, stride, 12)), repeats
    )


RESNET50_1D = ResNetVariant(
    kind="resnet50_1d",
    stem=_STEM,
    pool=_POOL,
    stages=(
        _bottleneck("conv1", 8, 32, 1, 3),
        _bottleneck("conv2", 16, 64, 2, 4),
        _bottleneck("conv3", 32, 128, 2, 6),
        _bottleneck("conv4", 64, 256, 2, 3),
    ),
)

RESNET18_1D = ResNetVariant(
    kind="resnet18_1d",
    stem=_STEM,
    pool=_POOL,
    stages=(
        _basic("conv1", 8, 1, 2),
        _basic("conv2", 16, 2, 2),
        _basic("conv3", 32, 2, 2),
        _basic("conv4", 64, 2, 2),
    ),
)

VARIANTS: dict[str, ResNetVariant] = {
    "resnet50_1d": RESNET50_1D,
    "resnet18_1d": RESNET18_1D,
    "resnet50": RESNET50_1D,
    "resnet18": RESNET18_1D,
}


def get_variant(name: str) -> ResNetVariant:
    try:
        return VARIANTS[name]
    except KeyError as e:
        raise ValueError(
            f"Unknown encoder '{name}'; choose one of {sorted(VARIANTS)}"
        ) from e


class ConvBn(BatchNorm):
    """
    Bias-free convolution followed by batchnorm (and relu).

    The convolution weight sits next to gamma, beta and the running
    statistics: `<layer>.{weight,gamma,beta,running_mean,running_var}`.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        relu: bool = True,
        dims: int = 1,
    ):
        super().__init__(out_channels)
        if dims not in (1, 2):
            raise ValueError(f"dims must be 1 or 2, got {dims}")
        fan_in = in_channels * kernel**dims
        shape = (out_channels, in_channels) + (kernel,) * dims
        self.weight = nn.Parameter(init_uniform(torch.empty(shape), fan_in))
        self.stride = stride
        self.padding = padding
        self.relu = relu
        self.dims = dims

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        conv = conv1d if self.dims == 1 else conv2d
        x = super().forward(conv(x, self.weight, None, self.stride, self.padding))
        return relu(x) if self.relu else x


class ResidualBlock1d(nn.Module):
    """conv -> bn -> relu rows `0..n-1`, identity or k=1 `shortcut`, relu after the sum."""

    def __init__(self, in_channels: int, stage: StageSpec, first: bool):
        super().__init__()
        channels = in_channels
        block_stride = 1
        for i, row in enumerate(stage.rows):
            stride = row.stride if first else 1
            block_stride *= stride
            self.add_module(
                str(i),
                ConvBn(
                    channels,
                    row.filters,
                    row.kernel,
                    stride,
                    row.padding,
                    relu=i < len(stage.rows) - 1,
                ),
            )
            channels = row.filters
        self.depth = len(stage.rows)

        if channels == in_channels and block_stride == 1:
            self.shortcut: ConvBn | None = None
        else:
            self.shortcut = ConvBn(in_channels, channels, 1, block_stride, relu=False)

    def row(self, index: int) -> ConvBn:
        return getattr(self, str(index))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x
        for i in range(self.depth):
            y = self.row(i)(y)
        return relu(y + (x if self.shortcut is None else self.shortcut(x)))


class ResNet1d(nn.Module):
    """E_t: the 1D-convolution ResNet over raw 3000-sample epochs."""

    def __init__(self, variant: ResNetVariant):
        super().__init__()
        self.variant = variant
        stem, pool = variant.stem, variant.pool
        self.conv0 = nn.Sequential(
            nn.Sequential(
                ConvBn(1, stem.filters, stem.kernel, stem.stride, stem.padding),
                MaxPool(pool.kernel, pool.stride, pool.padding),
            )
        )
        channels = stem.filters
        for stage in variant.stages:
            blocks = []
            for r in range(stage.repeats):
                blocks.append(ResidualBlock1d(channels, stage, first=r == 0))
                channels = stage.rows[-1].filters
            self.add_module(stage.name, nn.Sequential(*blocks))

    @property
    def feature_dim(self) -> int:
        return self.variant.feature_dim

    def stages(self) -> list[tuple[str, nn.Module]]:
        return [("conv0", self.conv0)] + [
            (stage.name, getattr(self, stage.name)) for stage in self.variant.stages
        ]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[1:] != (1, EPOCH_SAMPLES):
            raise ValueError(
                f"Expected input [B, 1, {EPOCH_SAMPLES}], got {tuple(x.shape)}"
            )
        for _name, stage in self.stages():
            x = stage(x)
        return x

    def trace_shapes(self, x: torch.Tensor) -> dict[str, tuple[int, ...]]:
        """Output shape after the stem convolution and after every stage."""
        shapes: dict[str, tuple[int, ...]] = {}
        stem_conv, pool = self.conv0[0]
        x = stem_conv(x)
        shapes["conv0.conv"] = tuple(x.shape)
        x = pool(x)
        shapes["conv0"] = tuple(x.shape)
        for stage in self.variant.stages:
            x = getattr(self, stage.name)(x)
            shapes[stage.name] = tuple(x.shape)
        return shapes


class SpectrogramEncoder(nn.Module):
    """E_s: four conv3x3 -> bn -> relu -> maxpool2x2 blocks, then global average pooling."""

    def __init__(
        self,
        stft_config: StftConfig | None = None,
        channels: tuple[int, ...] = (8, 16, 32, SPEC_FEATURE_DIM),
    ):
        super().__init__()
        self.input_shape = (stft_config or StftConfig()).shape()
        blocks = []
        previous = 1
        for width in channels:
            blocks.append(
                nn.Sequential(
                    ConvBn(previous, width, 3, padding=1, dims=2),
                    MaxPool(2, dims=2),
                )
            )
            previous = width
        self.blocks = nn.Sequential(*blocks)
        self.feature_dim = previous

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or tuple(x.shape[1:]) != (1, *self.input_shape):
            raise ValueError(
                f"Expected spectrogram batch [B, 1, {self.input_shape[0]}, "
                f"{self.input_shape[1]}], got {tuple(x.shape)}"
            )
        return global_avg_pool(self.blocks(x))


class ProjectionHead(nn.Sequential):
    """dense(in -> in) -> batchnorm -> relu -> dense(in -> 128)"""

    def __init__(self, in_dim: int, out_dim: int = PROJECTION_DIM):
        super().__init__(
            Linear(in_dim, in_dim),
            BatchNorm(in_dim),
            ReLU(),
            Linear(in_dim, out_dim),
        )
        self.in_dim = in_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"Head expects [B, {self.in_dim}] features, got {tuple(x.shape)}"
            )
        return super().forward(x)


class MultiViewModel(nn.Module):
    """E_t, E_s and the projection heads f1, f2 (time), h1, h2 (spectrogram), g1, g2 (concat)."""

    def __init__(
        self,
        variant: ResNetVariant | str = RESNET18_1D,
        stft_config: StftConfig | None = None,
        projection_dim: int = PROJECTION_DIM,
    ):
        super().__init__()
        if isinstance(variant, str):
            variant = get_variant(variant)
        self.stft_config = stft_config or StftConfig()
        self.Et = build_encoder(variant)
        self.Es = SpectrogramEncoder(self.stft_config)
        time_dim, spec_dim = self.Et.feature_dim, self.Es.feature_dim
        in_dims = {
            "f": time_dim,
            "h": spec_dim,
            "g": time_dim + spec_dim,
        }
        self.heads = nn.ModuleDict(
            {head: ProjectionHead(in_dims[head[0]], projection_dim) for head in HEAD_IDS}
        )

    @property
    def variant(self) -> ResNetVariant:
        return self.Et.variant

    def forward(
        self,
        t1: torch.Tensor,
        t2: torch.Tensor,
        s1: torch.Tensor,
        s2: torch.Tensor,
    ) -> ProjectionSet:
        ht1, ht2 = encode_time(self.Et, t1), encode_time(self.Et, t2)
        hs1, hs2 = encode_spectrogram(self.Es, s1), encode_spectrogram(self.Es, s2)
        return ProjectionSet(
            zt1=project(self, "f1", ht1),
            zt2=project(self, "f2", ht2),
            zs1=project(self, "h1", hs1),
            zs2=project(self, "h2", hs2),
            zf1=project(self, "g1", torch.cat((ht1, hs1), dim=1)),
            zf2=project(self, "g2", torch.cat((ht2, hs2), dim=1)),
        )


def build_encoder(variant: ResNetVariant | str) -> ResNet1d:
    if isinstance(variant, str):
        variant = get_variant(variant)
    return ResNet1d(variant)


def _as_channel_batch(x: torch.Tensor, spatial_dims: int) -> torch.Tensor:
    """Insert the channel axis when the batch arrives without one."""
    return x.unsqueeze(1) if x.ndim == spatial_dims + 1 else x


def encode_time(encoder: ResNet1d, batch: torch.Tensor) -> torch.Tensor:
    """[B, 1, 3000] (or [B, 3000]) -> [B, D] by global average pooling of the last stage."""
    return global_avg_pool(encoder(_as_channel_batch(batch, 1)))


def encode_spectrogram(encoder: SpectrogramEncoder, batch: torch.Tensor) -> torch.Tensor:
    """[B, 1, bins, frames] (or [B, bins, frames]) -> [B, 64]"""
    return encoder(_as_channel_batch(batch, 2))


def project(model: MultiViewModel, head_id: str, features: torch.Tensor) -> torch.Tensor:
    if head_id not in HEAD_IDS:
        raise ValueError(f"Unknown head '{head_id}'; expected one of {HEAD_IDS}")
    return model.heads[head_id](features)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
