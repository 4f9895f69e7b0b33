"""Self-supervised pretraining, linear evaluation, checkpoints and feature extraction."""

import hashlib
import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import torch
from torch import nn

from .autodiff import (
    Linear,
    NonFiniteError,
    adam_step,
    load_tensors,
    make_optimizer,
    optimizer_moments,
    save_tensors,
    softmax_cross_entropy,
)
from .encoders import (
    PROJECTION_DIM,
    MultiViewModel,
    encode_spectrogram,
    encode_time,
    get_variant,
)
from .epoching import NUM_CLASSES, FoldAssignment, SleepEpoch, SplitPlan, stack_epochs
from .features import FeatureMatrix
from .losses import LossConfig, total_loss
from .metrics import EvalReport, FoldReport, aggregate
from .views import AugmentConfig, StftConfig, ViewBundle, make_view_batch, stft

LOG_COLUMNS = ["epoch", "step", "L_TT", "L_SS", "L_FF", "L_D", "L_tot"]

ProgressCallback = Callable[[int, float, EvalReport | None], None]


@dataclass(frozen=True)
class PretrainConfig:
    batch_size: int = 256
    epochs: int = 200
    eval_start: int = 80
    eval_every: int = 4
    evaluate: bool = True
    variant: str = "resnet18_1d"
    fraction: float = 1.0
    lr: float = 3e-4
    weight_decay: float = 3e-5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.evaluate and self.eval_start > self.epochs:
            raise ValueError(
                f"eval_start ({self.eval_start}) must not exceed epochs ({self.epochs})"
            )
        if not 0 < self.fraction <= 1:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        get_variant(self.variant)


@dataclass(frozen=True)
class LinearEvalConfig:
    """Dense D -> 5 classifier trained on frozen features."""

    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")


@dataclass
class EncoderCheckpoint:
    """Model parameters and buffers, the metadata to rebuild the model, and the subject split."""

    state: dict[str, torch.Tensor]
    variant: str
    stft_config: StftConfig = field(default_factory=StftConfig)
    epoch: int = 0
    best_mf1: float | None = None
    train_seconds: float = 0.0
    config: dict[str, Any] = field(default_factory=dict)
    optimizer_state: dict[str, torch.Tensor] = field(default_factory=dict)
    split: SplitPlan | None = None


@dataclass
class PretrainResult:
    checkpoint: EncoderCheckpoint
    log: pd.DataFrame
    reports: dict[int, EvalReport] = field(default_factory=dict)


def evaluation_schedule(config: PretrainConfig) -> list[int]:
    """Training epochs (1-based) after which linear evaluation runs."""
    if not config.evaluate:
        return []
    return list(range(config.eval_start, config.epochs + 1, config.eval_every))


def _views_to_tensors(views: ViewBundle) -> tuple[torch.Tensor, ...]:
    return (
        torch.from_numpy(views.t1).unsqueeze(1),
        torch.from_numpy(views.t2).unsqueeze(1),
        torch.from_numpy(views.s1).unsqueeze(1),
        torch.from_numpy(views.s2).unsqueeze(1),
    )


def train_step(
    model: MultiViewModel,
    optimizer: torch.optim.Optimizer,
    views: ViewBundle,
    loss_config: LossConfig,
) -> dict[str, float]:
    """Forward the four views, backpropagate L_tot and update; returns the loss values."""
    model.train()
    projections = model(*_views_to_tensors(views))
    loss, components = total_loss(projections, loss_config)
    values = {**components.as_floats(), "L_tot": float(loss)}
    if not all(np.isfinite(v) for v in values.values()):
        optimizer.zero_grad(set_to_none=True)
        raise NonFiniteError(f"Nonfinite loss: {values}")
    loss.backward()
    adam_step(optimizer)
    return values


def _state_snapshot(model: nn.Module) -> dict[str, torch.Tensor]:
    return {name: t.detach().clone() for name, t in model.state_dict().items()}


def pretrain(
    epochs_data: Sequence[SleepEpoch],
    config: PretrainConfig,
    loss_config: LossConfig | None = None,
    augment: AugmentConfig | None = None,
    stft_config: StftConfig | None = None,
    eval_data: Sequence[SleepEpoch] | None = None,
    folds: FoldAssignment | None = None,
    linear_config: LinearEvalConfig | None = None,
    progress: ProgressCallback | None = None,
) -> PretrainResult:
    """
    Train E_t, E_s and the six heads on the pretext epochs (labels ignored).

    At every scheduled epoch the time encoder is scored by linear evaluation
    on `eval_data` and the parameters are kept when mean MF1 improves. With
    evaluation disabled (or no eval data) the final parameters are returned.

    Raises:
        ValueError: Empty dataset or a batch size above the dataset size.
        NonFiniteError: A loss or gradient became NaN or infinite.
    """
    loss_config = loss_config or LossConfig()
    augment = augment or AugmentConfig(seed=config.seed)
    stft_config = stft_config or StftConfig()
    linear_config = linear_config or LinearEvalConfig(seed=config.seed)
    if not epochs_data:
        raise ValueError("Pretext dataset is empty")
    values, _labels, subjects = stack_epochs(epochs_data)
    n = len(values)
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds the {n} pretext epochs")

    schedule = set(evaluation_schedule(config))
    if schedule and (eval_data is None or folds is None):
        schedule = set()

    torch.manual_seed(config.seed)
    model = MultiViewModel(config.variant, stft_config)
    optimizer = make_optimizer(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    order_rng = np.random.default_rng(config.seed)

    rows: list[dict[str, float]] = []
    reports: dict[int, EvalReport] = {}
    best: tuple[float, int, dict[str, torch.Tensor]] | None = None
    started = time.perf_counter()
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n - config.batch_size + 1, config.batch_size):
            idx = order[start : start + config.batch_size]
            views = make_view_batch(
                values[idx], subjects[idx], idx, augment, stft_config, train_epoch=epoch
            )
            try:
                losses = train_step(model, optimizer, views, loss_config)
            except NonFiniteError as e:
                raise NonFiniteError(f"Epoch {epoch}, step {step}: {e}") from e
            rows.append({"epoch": epoch, "step": step, **losses})
            epoch_losses.append(losses["L_tot"])
            step += 1

        report = None
        if epoch in schedule:
            report = linear_eval(model, eval_data, folds, linear_config)
            reports[epoch] = report
            if best is None or report.macro_f1 > best[0]:
                best = (report.macro_f1, epoch, _state_snapshot(model))
        if progress is not None:
            progress(epoch, float(np.mean(epoch_losses)), report)

    elapsed = time.perf_counter() - started
    if best is None:
        state, best_epoch, best_mf1 = _state_snapshot(model), config.epochs, None
    else:
        best_mf1, best_epoch, state = best

    checkpoint = EncoderCheckpoint(
        state=state,
        variant=model.variant.kind,
        stft_config=stft_config,
        epoch=best_epoch,
        best_mf1=best_mf1,
        train_seconds=elapsed,
        config={
            **{f"pretrain.{k}": v for k, v in asdict(config).items()},
            **{f"loss.{k}": v for k, v in asdict(loss_config).items()},
        },
        optimizer_state=optimizer_moments(
            optimizer, {p: name for name, p in model.named_parameters()}
        ),
    )
    return PretrainResult(
        checkpoint=checkpoint,
        log=pd.DataFrame(rows, columns=LOG_COLUMNS),
        reports=reports,
    )


def extract_features(
    model: MultiViewModel,
    epochs_data: Sequence[SleepEpoch],
    view: str,
    batch_size: int = 256,
) -> FeatureMatrix:
    """
    Encode un-augmented epochs in inference mode.

    Args:
        view: "time" (D columns), "spec" (64) or "concat" (D + 64).
    """
    if view not in ("time", "spec", "concat"):
        raise ValueError(f"Unknown view '{view}'; expected time, spec or concat")
    if not epochs_data:
        raise ValueError("No epochs to encode")
    values, labels, subjects = stack_epochs(epochs_data)
    was_training = model.training
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(values), batch_size):
            batch = values[start : start + batch_size]
            parts = []
            if view in ("time", "concat"):
                parts.append(encode_time(model.Et, torch.from_numpy(batch)))
            if view in ("spec", "concat"):
                spectra = np.stack([stft(row, model.stft_config) for row in batch])
                parts.append(
                    encode_spectrogram(
                        model.Es, torch.from_numpy(spectra.astype(np.float32))
                    )
                )
            chunks.append(torch.cat(parts, dim=1).numpy())
    model.train(was_training)
    return FeatureMatrix(np.concatenate(chunks), labels, subjects, view)


def linear_eval_features(
    features: FeatureMatrix,
    folds: FoldAssignment,
    config: LinearEvalConfig | None = None,
) -> EvalReport:
    """Cross-validated dense softmax classifier on fixed features; unlabeled rows are dropped."""
    config = config or LinearEvalConfig()
    labeled = features.labeled
    X = torch.from_numpy(np.asarray(labeled.values, dtype=np.float32))
    y = torch.from_numpy(labeled.labels.astype(np.int64))
    fold_reports = []
    for fold, (train_rows, test_rows) in enumerate(folds.splits(labeled.subjects)):
        if len(train_rows) == 0 or len(test_rows) == 0:
            raise ValueError(f"Fold {fold} has an empty train or test side")
        generator = torch.Generator().manual_seed(config.seed + fold)
        torch.manual_seed(config.seed + fold)
        classifier = Linear(X.shape[1], NUM_CLASSES)
        optimizer = torch.optim.Adam(classifier.parameters(), lr=config.lr)
        train_idx = torch.from_numpy(train_rows)
        for _ in range(config.epochs):
            order = train_idx[torch.randperm(len(train_idx), generator=generator)]
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                loss = softmax_cross_entropy(classifier(X[batch]), y[batch])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
        with torch.no_grad():
            predicted = classifier(X[torch.from_numpy(test_rows)]).argmax(dim=1)
        fold_reports.append(
            FoldReport.from_labels(fold, y[test_rows].numpy(), predicted.numpy())
        )
    return aggregate(
        fold_reports,
        {
            "classifier": "linear",
            "view": features.view,
            "optimizer": f"adam lr={config.lr:g}",
            "epochs": config.epochs,
        },
    )


def linear_eval(
    model: "MultiViewModel | EncoderCheckpoint",
    eval_epochs: Sequence[SleepEpoch],
    folds: FoldAssignment,
    config: LinearEvalConfig | None = None,
) -> EvalReport:
    """Score frozen time-encoder features with a subject-level cross-validated linear classifier."""
    if isinstance(model, EncoderCheckpoint):
        model = model_from_checkpoint(model)
    features = extract_features(model, eval_epochs, "time")
    return linear_eval_features(features, folds, config)


def model_from_checkpoint(checkpoint: EncoderCheckpoint) -> MultiViewModel:
    model = MultiViewModel(checkpoint.variant, checkpoint.stft_config)
    model.load_state_dict(checkpoint.state)
    model.eval()
    return model


def save_checkpoint(
    path: str | Path, checkpoint: EncoderCheckpoint, config_hash: str = ""
) -> Path:
    model = model_from_checkpoint(checkpoint)
    stft_config = checkpoint.stft_config
    metadata = {
        "config_hash": config_hash,
        "variant": checkpoint.variant,
        "stft_window_len": stft_config.window_len,
        "stft_hop": stft_config.hop,
        "stft_window": stft_config.window,
        "time_dim": model.Et.feature_dim,
        "spec_dim": model.Es.feature_dim,
        "projection_dim": PROJECTION_DIM,
        "epoch": checkpoint.epoch,
        "best_mf1": checkpoint.best_mf1,
        "train_seconds": checkpoint.train_seconds,
        "config": checkpoint.config,
        "split": None if checkpoint.split is None else asdict(checkpoint.split),
    }
    return save_tensors(path, {**checkpoint.state, **checkpoint.optimizer_state}, metadata)


def load_checkpoint(path: str | Path) -> tuple[EncoderCheckpoint, dict]:
    tensors, metadata = load_tensors(path)
    if "variant" not in metadata:
        raise ValueError(f"{path} is not an encoder checkpoint (no variant recorded)")
    state = {k: v for k, v in tensors.items() if not k.startswith("optim.")}
    checkpoint = EncoderCheckpoint(
        state=state,
        variant=metadata["variant"],
        stft_config=StftConfig(
            window_len=metadata["stft_window_len"],
            hop=metadata["stft_hop"],
            window=metadata["stft_window"],
        ),
        epoch=metadata.get("epoch", 0),
        best_mf1=metadata.get("best_mf1"),
        train_seconds=metadata.get("train_seconds", 0.0),
        config=metadata.get("config", {}),
        optimizer_state={k: v for k, v in tensors.items() if k.startswith("optim.")},
        split=_split_from_metadata(metadata.get("split")),
    )
    return checkpoint, metadata


def _split_from_metadata(recorded: dict | None) -> SplitPlan | None:
    if recorded is None:
        return None
    return SplitPlan(
        pretext_subjects=tuple(recorded["pretext_subjects"]),
        eval_subjects=tuple(recorded["eval_subjects"]),
        pretext_fraction=recorded["pretext_fraction"],
        seed=recorded["seed"],
    )


def state_digest(state: dict[str, torch.Tensor]) -> str:
    """Short content hash of a parameter state, used as the checkpoint id."""
    digest = hashlib.sha256()
    for name in sorted(state):
        digest.update(name.encode("utf-8"))
        digest.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()[:16]
