"""NT-Xent, per-sample diverse loss, and their weighted total."""

import warnings
from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class LossConfig:
    """Temperatures and weights of the total loss."""

    tau: float = 1.0
    tau_d: float = 10.0
    lambda1: float = 1.0
    lambda2: float = 2.0

    def __post_init__(self) -> None:
        if self.tau <= 0 or self.tau_d <= 0:
            raise ValueError(f"Temperatures must be positive, got tau={self.tau}, tau_d={self.tau_d}")


@dataclass(frozen=True)
class ProjectionSet:
    """Head outputs for one batch: time (f), spectrogram (h) and concatenated (g) views."""

    zt1: torch.Tensor
    zt2: torch.Tensor
    zs1: torch.Tensor
    zs2: torch.Tensor
    zf1: torch.Tensor
    zf2: torch.Tensor

    def __post_init__(self) -> None:
        shapes = {tuple(z.shape) for z in self.as_tuple()}
        if len(shapes) != 1:
            raise ValueError(f"All projections must share [N, dim], got {sorted(shapes)}")

    def as_tuple(self) -> tuple[torch.Tensor, ...]:
        return (self.zt1, self.zt2, self.zs1, self.zs2, self.zf1, self.zf2)


@dataclass(frozen=True)
class LossComponents:
    l_tt: torch.Tensor
    l_ss: torch.Tensor
    l_ff: torch.Tensor
    l_d: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "L_TT": float(self.l_tt),
            "L_SS": float(self.l_ss),
            "L_FF": float(self.l_ff),
            "L_D": float(self.l_d),
        }


def _unit_rows(z: torch.Tensor) -> torch.Tensor:
    """Rows scaled to unit norm; zero rows stay zero (similarity 0)."""
    norms = z.norm(dim=-1, keepdim=True)
    zero = norms == 0
    if bool(zero.any()):
        warnings.warn(
            "Zero-norm projection encountered; its cosine similarities are set to 0",
            UserWarning,
            stacklevel=3,
        )
    return torch.where(zero, torch.zeros_like(z), z / torch.where(zero, torch.ones_like(norms), norms))


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of the last axis; 0 when either vector has zero norm."""
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"Dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return (_unit_rows(a) * _unit_rows(b)).sum(dim=-1)


def _check_pair(za: torch.Tensor, zb: torch.Tensor) -> None:
    if za.ndim != 2 or za.shape != zb.shape:
        raise ValueError(
            f"Expected two [N, dim] matrices of equal shape, got {tuple(za.shape)}, {tuple(zb.shape)}"
        )
    if za.shape[0] == 0:
        raise ValueError("Batch is empty (N = 0)")


def nt_xent(za: torch.Tensor, zb: torch.Tensor, tau: float) -> torch.Tensor:
    """
    Normalized-temperature cross entropy over the 2N interleaved embeddings.

    Rows are laid out as z[2k] = za[k], z[2k+1] = zb[k]; each row's positive is
    its partner and every other row in the batch is a negative.
    """
    _check_pair(za, zb)
    n = za.shape[0]
    z = _unit_rows(torch.stack((za, zb), dim=1).reshape(2 * n, -1))
    sim = z @ z.T / tau
    self_mask = torch.eye(2 * n, dtype=torch.bool, device=z.device)
    logits = sim.masked_fill(self_mask, float("-inf"))
    partner = torch.arange(2 * n, device=z.device) ^ 1
    positive = logits[torch.arange(2 * n, device=z.device), partner]
    return (torch.logsumexp(logits, dim=1) - positive).mean()


def diverse_loss(
    zt_i: torch.Tensor,
    zt_j: torch.Tensor,
    zs_i: torch.Tensor,
    zs_j: torch.Tensor,
    tau_d: float,
) -> torch.Tensor:
    """
    Contrast the two time and two spectrogram projections of each sample
    against each other only (per-sample denominators, never cross-batch).
    """
    _check_pair(zt_i, zt_j)
    _check_pair(zs_i, zs_j)
    _check_pair(zt_i, zs_i)
    z = _unit_rows(torch.stack((zt_i, zt_j, zs_i, zs_j), dim=1))  # [N, 4, dim]
    sim = z @ z.transpose(1, 2) / tau_d
    self_mask = torch.eye(4, dtype=torch.bool, device=z.device)
    logits = sim.masked_fill(self_mask, float("-inf"))
    anchors = torch.tensor([0, 1, 2, 3], device=z.device)
    partners = torch.tensor([1, 0, 3, 2], device=z.device)
    positive = logits[:, anchors, partners]
    return (torch.logsumexp(logits, dim=2) - positive).mean()


def total_loss(
    projections: ProjectionSet, config: LossConfig
) -> tuple[torch.Tensor, LossComponents]:
    """lambda1 * (L_TT + L_FF + L_SS) + lambda2 * L_D, with the components for logging."""
    p = projections
    components = LossComponents(
        l_tt=nt_xent(p.zt1, p.zt2, config.tau),
        l_ss=nt_xent(p.zs1, p.zs2, config.tau),
        l_ff=nt_xent(p.zf1, p.zf2, config.tau),
        l_d=diverse_loss(p.zt1, p.zt2, p.zs1, p.zs2, config.tau_d),
    )
    total = config.lambda1 * (
        components.l_tt + components.l_ff + components.l_ss
    ) + config.lambda2 * components.l_d
    return total, components
