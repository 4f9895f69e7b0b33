"""
Differentiable primitives on top of torch autograd.

Every primitive validates shapes up front and then defers to
``torch.nn.functional``, so gradients come from the recorded autograd graph.
Float64 mode (``precision("float64")``) is used for gradient checks.
The layer modules (`BatchNorm`, `Linear`, `ReLU`, `MaxPool`) hold the
parameters and buffers and call the same primitives.
"""

import contextlib
import math
import struct
from collections.abc import Iterator, Mapping
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .artifacts import read_artifact, write_artifact

CHECKPOINT_MAGIC = b"SSCK"

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_DTYPE_CODES: dict[torch.dtype, int] = {
    torch.float32: 0,
    torch.float64: 1,
    torch.int64: 2,
}
_CODE_DTYPES: dict[int, tuple[torch.dtype, str]] = {
    0: (torch.float32, "<f4"),
    1: (torch.float64, "<f8"),
    2: (torch.int64, "<i8"),
}


class NonFiniteError(RuntimeError):
    """Raised when a loss or gradient is NaN or infinite."""


@contextlib.contextmanager
def precision(dtype: str = "float64") -> Iterator[None]:
    """Temporarily switch torch's default floating dtype."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(getattr(torch, dtype))
    try:
        yield
    finally:
        torch.set_default_dtype(previous)


def output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    """floor((L + 2p - k) / s) + 1"""
    return (length + 2 * padding - kernel) // stride + 1


def _check_length(length: int, kernel: int, stride: int, padding: int, op: str) -> None:
    if kernel < 1 or stride < 1:
        raise ValueError(f"{op}: kernel and stride must be >= 1")
    out = output_length(length, kernel, stride, padding)
    if out < 1:
        raise ValueError(
            f"{op}: nonpositive output length {out} "
            f"(L={length}, k={kernel}, s={stride}, p={padding})"
        )


def conv1d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    """Zero-padded cross-correlation of [B, Cin, L] with [Cout, Cin, k]."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects 3-D input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"conv1d channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}"
        )
    _check_length(x.shape[2], weight.shape[2], stride, padding, "conv1d")
    return F.conv1d(x, weight, bias, stride=stride, padding=padding)


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}"
        )
    for axis in (2, 3):
        _check_length(x.shape[axis], weight.shape[axis], stride, padding, "conv2d")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def maxpool1d(
    x: torch.Tensor, kernel: int, stride: int | None = None, padding: int = 0
) -> torch.Tensor:
    """
    Window max with -inf borders. The gradient goes to the first maximal
    element of each window.
    """
    stride = kernel if stride is None else stride
    _check_length(x.shape[-1], kernel, stride, padding, "maxpool1d")
    return F.max_pool1d(x, kernel, stride=stride, padding=padding)


def maxpool2d(
    x: torch.Tensor, kernel: int, stride: int | None = None, padding: int = 0
) -> torch.Tensor:
    stride = kernel if stride is None else stride
    for axis in (-2, -1):
        _check_length(x.shape[axis], kernel, stride, padding, "maxpool2d")
    return F.max_pool2d(x, kernel, stride=stride, padding=padding)


def batchnorm(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    running_mean: torch.Tensor | None,
    running_var: torch.Tensor | None,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> torch.Tensor:
    """
    Per-channel normalization over every axis except 1.

    Training mode uses batch statistics and updates the running buffers in
    place; inference mode reads the running buffers.
    """
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ValueError(
            f"batchnorm: gamma/beta must have shape ({channels},), "
            f"got {tuple(gamma.shape)}, {tuple(beta.shape)}"
        )
    if training and x.numel() == channels:
        # One value per channel: the batch variance is 0 and only eps remains
        if running_mean is not None:
            with torch.no_grad():
                running_mean.mul_(1 - momentum).add_(momentum * x.reshape(channels))
        shape = (1, channels) + (1,) * (x.ndim - 2)
        return beta.reshape(shape) + gamma.reshape(shape) * (x - x) / (eps**0.5)
    return F.batch_norm(
        x, running_mean, running_var, gamma, beta, training, momentum, eps
    )


def relu(x: torch.Tensor) -> torch.Tensor:
    return F.relu(x)


def linear(
    x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None
) -> torch.Tensor:
    """Dense layer x @ weight.T + bias, weight shaped [out, in]."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"linear: input dim {x.shape[-1]} does not match weight in-dim {weight.shape[1]}"
        )
    return F.linear(x, weight, bias)


def global_avg_pool(x: torch.Tensor) -> torch.Tensor:
    """Average over every trailing spatial axis: [B, C, ...] -> [B, C]."""
    if x.ndim < 3:
        raise ValueError(f"global_avg_pool expects [B, C, ...], got {tuple(x.shape)}")
    return x.mean(dim=tuple(range(2, x.ndim)))


def softmax_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Batch mean of -log softmax(logits)[label]."""
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(
            f"Shape mismatch: logits {tuple(logits.shape)}, labels {tuple(labels.shape)}"
        )
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(
            f"Labels must lie in 0..{logits.shape[1] - 1}, "
            f"got range [{int(labels.min())}, {int(labels.max())}]"
        )
    return F.cross_entropy(logits, labels)


def init_uniform(tensor: torch.Tensor, fan_in: int) -> torch.Tensor:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)), torch's default for dense and conv layers."""
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        return tensor.uniform_(-bound, bound)


class BatchNorm(nn.Module):
    """Learnable gamma/beta with running statistics, applied through `batchnorm`."""

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return batchnorm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            self.training,
            self.momentum,
            self.eps,
        )


class Linear(nn.Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        weight = torch.empty(out_features, in_features)
        self.weight = nn.Parameter(init_uniform(weight, in_features))
        self.bias = (
            nn.Parameter(init_uniform(torch.empty(out_features), in_features)) if bias else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return linear(x, self.weight, self.bias)


class ReLU(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return relu(x)


class MaxPool(nn.Module):
    """`maxpool1d` or `maxpool2d` depending on `dims`."""

    def __init__(self, kernel: int, stride: int | None = None, padding: int = 0, dims: int = 1):
        super().__init__()
        if dims not in (1, 2):
            raise ValueError(f"dims must be 1 or 2, got {dims}")
        self.kernel = kernel
        self.stride = kernel if stride is None else stride
        self.padding = padding
        self.dims = dims

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pool = maxpool1d if self.dims == 1 else maxpool2d
        return pool(x, self.kernel, self.stride, self.padding)


def make_optimizer(
    parameters,
    lr: float = 3e-4,
    weight_decay: float = 3e-5,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> torch.optim.AdamW:
    """Adaptive-moment optimizer with decoupled weight decay."""
    return torch.optim.AdamW(
        parameters, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay
    )


def adam_step(optimizer: torch.optim.Optimizer) -> None:
    """Apply one update after checking every gradient is finite, then clear gradients."""
    for g, group in enumerate(optimizer.param_groups):
        for i, param in enumerate(group["params"]):
            if param.grad is not None and not torch.isfinite(param.grad).all():
                optimizer.zero_grad(set_to_none=True)
                raise NonFiniteError(
                    f"Nonfinite gradient in parameter {i} of group {g}; step aborted"
                )
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def optimizer_moments(
    optimizer: torch.optim.Optimizer, names: Mapping[torch.Tensor, str]
) -> dict[str, torch.Tensor]:
    """First and second moment buffers keyed 'optim.<param name>.exp_avg[_sq]'."""
    moments: dict[str, torch.Tensor] = {}
    for param, state in optimizer.state.items():
        name = names.get(param)
        if name is None:
            continue
        for key in ("exp_avg", "exp_avg_sq"):
            if key in state:
                moments[f"optim.{name}.{key}"] = state[key]
    return moments


def _tensor_body(tensors: Mapping[str, torch.Tensor]) -> bytes:
    body = bytearray(struct.pack("<I", len(tensors)))
    for name, tensor in tensors.items():
        tensor = tensor.detach().cpu().contiguous()
        if tensor.dtype not in _DTYPE_CODES:
            raise ValueError(f"Unsupported dtype {tensor.dtype} for '{name}'")
        code = _DTYPE_CODES[tensor.dtype]
        encoded = name.encode("utf-8")
        body += struct.pack("<H", len(encoded)) + encoded
        body += struct.pack("<BB", code, tensor.ndim)
        body += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        body += tensor.numpy().astype(_CODE_DTYPES[code][1], copy=False).tobytes()
    return bytes(body)


def _unpack_body(body: memoryview) -> dict[str, torch.Tensor]:
    (count,) = struct.unpack_from("<I", body, 0)
    offset = 4
    tensors: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (length,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = bytes(body[offset : offset + length]).decode("utf-8")
        offset += length
        code, rank = struct.unpack_from("<BB", body, offset)
        offset += 2
        dims = struct.unpack_from(f"<{rank}I", body, offset)
        offset += 4 * rank
        if code not in _CODE_DTYPES:
            raise ValueError(f"Unknown dtype code {code} for '{name}'")
        _dtype, np_dtype = _CODE_DTYPES[code]
        count_items = int(np.prod(dims)) if rank else 1
        array = np.frombuffer(body, dtype=np_dtype, count=count_items, offset=offset)
        offset += array.nbytes
        tensors[name] = torch.from_numpy(array.reshape(dims).copy())
    return tensors


def save_tensors(
    path: str | Path, tensors: Mapping[str, torch.Tensor], metadata: dict[str, Any]
) -> Path:
    return write_artifact(path, CHECKPOINT_MAGIC, metadata, _tensor_body(tensors))


def load_tensors(path: str | Path) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    metadata, body = read_artifact(path, CHECKPOINT_MAGIC)
    try:
        return _unpack_body(body), metadata
    except (struct.error, ValueError) as e:
        raise ValueError(f"Truncated or corrupt checkpoint {path}: {e}") from e
