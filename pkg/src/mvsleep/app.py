from collections.abc import Sequence
from dataclasses import replace
from importlib.metadata import version
from pathlib import Path
from typing import Any, Optional

import typer
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn

from .config import DATA_DIR_ENV, ConfigError, RunConfig, derive_seed
from .edf import EdfFormatError, parse_edf, parse_hypnogram
from .epoching import (
    SleepEpoch,
    SplitPlan,
    kfold,
    make_split,
    read_epoch_store,
    segment_epochs,
    stack_epochs,
    subsample_pretext,
    trim_wake,
    write_epoch_store,
    zscore_fit_apply,
)
from .features import FeatureMatrix, read_features, write_features
from .metrics import EvalReport, FoldReport, aggregate, render_table, write_report
from .pretrainer import (
    extract_features,
    load_checkpoint,
    model_from_checkpoint,
    pretrain,
    save_checkpoint,
    state_digest,
)
from .svm import cross_validate, load_model, predict, save_model, train_multiclass
from .synth import synthesize

console = Console()
err_console = Console(stderr=True)

app = typer.Typer(
    help="Multi-view contrastive pretraining and Linear SVM sleep staging",
    rich_markup_mode="rich",
)

PSG_SUFFIX = "-PSG.edf"
HYPNOGRAM_SUFFIX = "-Hypnogram.edf"


def _version_callback(value: bool | None) -> None:
    if value:
        console.print(f"mvsleep [bold]{version('multiview-sleep-svm')}[/bold]")
        raise typer.Exit()


@app.callback()
def main(
    version: Optional[bool] = typer.Option(
        None,
        "-v",
        "--version",
        help="Show version and exit.",
        callback=_version_callback,
        is_eager=True,
    ),
):
    """
    Ingest Sleep-EDF recordings, pretrain the multi-view encoders, extract
    features and score them with a Linear SVM.
    """


def _fail(message: str) -> typer.Exit:
    err_console.print(f"[red]Error:[/red] {message}")
    return typer.Exit(code=1)


def _load_run_config(config_path: Optional[Path], cli_values: dict[str, Any]) -> RunConfig:
    """Resolve CLI > config file > defaults, exiting on any config problem."""
    try:
        return RunConfig.load(config_path, cli_values)
    except (ConfigError, FileNotFoundError) as e:
        raise _fail(str(e)) from e


def _print_provenance(cfg: RunConfig) -> None:
    console.print(f"seed=[bold]{cfg.seed}[/bold] config_hash=[bold]{cfg.config_hash()}[/bold]")


def _print_artifact_provenance(metadata: dict) -> None:
    """Seed and config hash recorded by the command that produced an artifact."""
    seed = metadata.get("seed")
    console.print(
        f"seed=[bold]{'-' if seed is None else seed}[/bold] "
        f"config_hash=[bold]{metadata.get('config_hash', '')}[/bold]"
    )


def _progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
        console=console,
    )


def _read_store(path: Path) -> tuple[list[SleepEpoch], dict]:
    try:
        return read_epoch_store(path)
    except (FileNotFoundError, ValueError) as e:
        raise _fail(f"Cannot read epoch store {path}: {e}") from e


def _pair_recordings(psg_dir: Path) -> tuple[list[tuple[str, Path, Path]], list[Path]]:
    """
    Match `<prefix>-PSG.edf` with `<prefix>-Hypnogram.edf`.

    Sleep-EDF names the two files of a night with prefixes that differ only
    in the final character (SC4001E0 / SC4001EC), so a prefix without its
    last character is accepted when no exact match exists.

    Returns:
        (subject prefix, PSG path, hypnogram path) triples and unpaired files.
    """
    psgs = {p.name[: -len(PSG_SUFFIX)]: p for p in sorted(psg_dir.glob(f"*{PSG_SUFFIX}"))}
    hypnograms = {
        p.name[: -len(HYPNOGRAM_SUFFIX)]: p
        for p in sorted(psg_dir.glob(f"*{HYPNOGRAM_SUFFIX}"))
    }
    pairs = []
    used: set[str] = set()
    for prefix, psg in psgs.items():
        match = prefix if prefix in hypnograms else None
        if match is None:
            candidates = [
                h for h in hypnograms if h not in used and h[:-1] == prefix[:-1]
            ]
            match = candidates[0] if candidates else None
        if match is not None:
            used.add(match)
            pairs.append((prefix, psg, hypnograms[match]))
    paired = {p for _, p, _ in pairs} | {h for _, _, h in pairs}
    unpaired = [p for p in (*psgs.values(), *hypnograms.values()) if p not in paired]
    return pairs, unpaired


@app.command()
def ingest(
    psg_dir: Path = typer.Option(
        ...,
        "--psg-dir",
        envvar=DATA_DIR_ENV,
        help=f"Directory of Sleep-EDF files (or ${DATA_DIR_ENV})",
    ),
    out: Path = typer.Option(Path("epochs.ssep"), "-o", "--out", help="Epoch store to write"),
    channel: Optional[str] = typer.Option(
        None, "--channel", help="EEG channel label (Default: EEG Fpz-Cz)"
    ),
    trim_wake_minutes: Optional[int] = typer.Option(
        None, "--trim-wake", help="Minutes of wake kept around sleep (Default: keep all)"
    ),
    config: Optional[Path] = typer.Option(
        None, "-c", "--config", help="Path to key=value configuration file"
    ),
):
    """Pair PSG and hypnogram EDF files and cut them into labeled 30 s epochs."""
    cfg = _load_run_config(
        config,
        {"data.channel": channel, "data.trim_wake_minutes": trim_wake_minutes},
    )
    _print_provenance(cfg)
    if not psg_dir.is_dir():
        raise _fail(f"PSG directory {psg_dir} does not exist.")

    pairs, unpaired = _pair_recordings(psg_dir)
    for path in unpaired:
        err_console.print(f"[yellow]Warning:[/yellow] No partner for {path.name}; skipped.")
    if not pairs:
        raise _fail(f"no recording pairs found in {psg_dir}")

    epochs: list[SleepEpoch] = []
    succeeded = 0
    with _progress() as progress:
        task = progress.add_task("Ingesting recordings...", total=len(pairs))
        for prefix, psg, hypnogram in pairs:
            try:
                recording = parse_edf(psg.read_bytes(), cfg.data.channel, subject_id=prefix)
                pair_epochs = segment_epochs(recording, parse_hypnogram(hypnogram.read_bytes()))
            except (EdfFormatError, ValueError) as e:
                err_console.print(f"[yellow]Warning:[/yellow] Skipping {prefix}: {e}")
                progress.update(task, advance=1)
                continue
            if cfg.data.trim_wake_minutes is not None:
                pair_epochs = trim_wake(pair_epochs, cfg.data.trim_wake_minutes)
            epochs.extend(replace(e, source=psg.name) for e in pair_epochs)
            succeeded += 1
            progress.update(task, advance=1, description=f"Read [cyan]{psg.name}[/cyan]")

    if succeeded == 0:
        raise _fail("no recording pair could be ingested")
    write_epoch_store(out, epochs, cfg.config_hash(), cfg.seed)
    console.print(
        f"[green]Done![/green] {len(epochs)} epochs from {succeeded} recording(s) "
        f"written to [cyan]{out}[/cyan]"
    )


@app.command()
def synth(
    out: Path = typer.Option(Path("synthetic.ssep"), "-o", "--out", help="Epoch store to write"),
    classes: int = typer.Option(5, "--classes", help="Number of classes"),
    per_class: int = typer.Option(40, "--per-class", help="Epochs per class"),
    subjects: int = typer.Option(10, "--subjects", help="Number of synthetic subjects"),
    seed: int = typer.Option(0, "--seed", help="Random seed"),
):
    """Generate a synthetic labeled epoch store with class-specific rhythms."""
    cfg = _load_run_config(None, {"seed": seed})
    _print_provenance(cfg)
    try:
        epochs = synthesize(
            classes=classes,
            per_class=per_class,
            subjects=subjects,
            seed=derive_seed(seed, "synth"),
        )
    except ValueError as e:
        raise _fail(str(e)) from e
    write_epoch_store(out, epochs, cfg.config_hash(), cfg.seed)
    console.print(
        f"[green]Done![/green] {len(epochs)} synthetic epochs written to [cyan]{out}[/cyan]"
    )


def _split_for_store(data: list[SleepEpoch], cfg: RunConfig) -> SplitPlan:
    """The split `pretrain` derives from the same store and data.* settings."""
    try:
        return make_split(
            sorted({e.subject_id for e in data}),
            cfg.data.seed,
            n_pretext=cfg.data.n_pretext,
            n_eval=cfg.data.n_eval,
            pretext_fraction=cfg.pretrain.fraction,
        )
    except ValueError as e:
        raise _fail(str(e)) from e


def _select_subjects(data: list[SleepEpoch], split: SplitPlan) -> list[SleepEpoch]:
    eval_subjects = set(split.eval_subjects)
    selected = [e for e in data if e.subject_id in eval_subjects]
    if not selected:
        raise _fail("The store holds no epochs of the evaluation subjects.")
    return selected


@app.command(name="pretrain")
def pretrain_cmd(
    store: Path = typer.Option(..., "--store", help="Epoch store"),
    out: Path = typer.Option(Path("encoder.ssck"), "-o", "--out", help="Checkpoint to write"),
    config: Optional[Path] = typer.Option(
        None, "-c", "--config", help="Path to key=value configuration file"
    ),
    encoder: Optional[str] = typer.Option(
        None, "--encoder", help="resnet18 or resnet50 (Default: resnet18)"
    ),
    fraction: Optional[float] = typer.Option(
        None, "--fraction", help="Fraction of pretext epochs used (Default: 1.0)"
    ),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Training epochs (Default: 200)"),
    batch_size: Optional[int] = typer.Option(
        None, "--batch-size", help="Batch size N (Default: 256)"
    ),
    seed: Optional[int] = typer.Option(None, "--seed", help="Global seed (Default: 0)"),
):
    """Self-supervised pretraining with periodic linear evaluation."""
    cfg = _load_run_config(
        config,
        {
            "seed": seed,
            "pretrain.variant": encoder,
            "pretrain.fraction": fraction,
            "pretrain.epochs": epochs,
            "pretrain.batch_size": batch_size,
        },
    )
    _print_provenance(cfg)
    data, _meta = _read_store(store)

    split = _split_for_store(data, cfg)
    try:
        pretext_subjects, eval_subjects = set(split.pretext_subjects), set(split.eval_subjects)
        pretext = [e for e in data if e.subject_id in pretext_subjects]
        pretext = subsample_pretext(
            pretext, cfg.pretrain.fraction, derive_seed(cfg.seed, "subsample")
        )
        evaluation = [
            e for e in data if e.subject_id in eval_subjects and e.label is not None
        ]
        folds = kfold(split.eval_subjects, cfg.data.folds, cfg.data.seed)
    except ValueError as e:
        raise _fail(str(e)) from e
    console.print(
        f"Pretext: {len(pretext)} epochs from {len(split.pretext_subjects)} subjects; "
        f"evaluation: {len(evaluation)} epochs from {len(split.eval_subjects)} subjects"
    )

    with _progress() as progress:
        task = progress.add_task("Pretraining...", total=cfg.pretrain.epochs)

        def on_epoch(epoch: int, mean_loss: float, report: EvalReport | None) -> None:
            description = f"epoch {epoch} L_tot={mean_loss:.4f}"
            if report is not None:
                description += f" MF1={report.macro_f1:.4f}"
            progress.update(task, advance=1, description=description)

        try:
            result = pretrain(
                pretext,
                cfg.pretrain,
                loss_config=cfg.loss,
                augment=cfg.augment,
                stft_config=cfg.stft,
                eval_data=evaluation,
                folds=folds,
                linear_config=cfg.linear_eval,
                progress=on_epoch,
            )
        except (ValueError, RuntimeError) as e:
            raise _fail(f"Pretraining failed: {e}") from e

    checkpoint = result.checkpoint
    checkpoint.config.update(cfg.resolved())
    checkpoint.split = split
    save_checkpoint(out, checkpoint, cfg.config_hash())
    log_path = out.with_name(out.stem + "_log.csv")
    result.log.to_csv(log_path, index=False)

    if checkpoint.best_mf1 is not None:
        console.print(render_table(result.reports[checkpoint.epoch], f"Linear evaluation, epoch {checkpoint.epoch}"))
        label = f"best MF1 {checkpoint.best_mf1:.4f} at epoch {checkpoint.epoch}"
    else:
        label = "final epoch (evaluation disabled)"
    console.print(
        f"[green]Done![/green] Checkpoint ({label}) written to [cyan]{out}[/cyan] "
        f"after {checkpoint.train_seconds:.1f} s; log at [cyan]{log_path}[/cyan]"
    )


@app.command()
def features(
    store: Path = typer.Option(..., "--store", help="Epoch store"),
    out: Path = typer.Option(Path("features.ssft"), "-o", "--out", help="Feature file to write"),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Encoder checkpoint"),
    view: str = typer.Option("concat", "--view", help="time, spec or concat"),
    raw: bool = typer.Option(False, "--raw", help="Export the raw epochs instead of encoder features"),
    all_subjects: bool = typer.Option(
        False, "--all-subjects", help="Export every subject, pretext group included"
    ),
    config: Optional[Path] = typer.Option(
        None, "-c", "--config", help="Split settings for --raw without a checkpoint"
    ),
):
    """
    Extract time, spectrogram or concatenated features (or raw epochs).

    Only the evaluation subjects are exported unless --all-subjects is given.
    The split comes from the checkpoint; --raw without a checkpoint rebuilds
    it from the data.* settings the way `pretrain` does.
    """
    data, store_meta = _read_store(store)
    if not raw and checkpoint is None:
        raise _fail("--checkpoint is required unless --raw is given.")
    if not raw and view not in ("time", "spec", "concat"):
        raise _fail(f"Unknown view '{view}'; expected time, spec or concat.")

    ckpt = ckpt_meta = None
    if checkpoint is not None:
        try:
            ckpt, ckpt_meta = load_checkpoint(checkpoint)
        except (FileNotFoundError, ValueError) as e:
            raise _fail(f"Cannot read checkpoint {checkpoint}: {e}") from e

    if not all_subjects:
        if ckpt is not None:
            if ckpt.split is None:
                raise _fail(
                    f"{checkpoint} records no subject split; "
                    "pass --all-subjects to export everything."
                )
            split = ckpt.split
        else:
            split = _split_for_store(data, _load_run_config(config, {}))
        data = _select_subjects(data, split)

    if raw:
        values, labels, subjects = stack_epochs(data)
        matrix = FeatureMatrix(values, labels, subjects, "raw")
        metadata = {
            "config_hash": store_meta.get("config_hash", ""),
            "seed": store_meta.get("seed"),
            "checkpoint_id": "",
        }
    else:
        model = model_from_checkpoint(ckpt)
        with console.status(f"Encoding {len(data)} epochs..."):
            matrix = extract_features(model, data, view)
        metadata = {
            "config_hash": ckpt_meta.get("config_hash", ""),
            "seed": ckpt.config.get("seed"),
            "checkpoint_id": state_digest(ckpt.state),
        }
    metadata["subjects"] = "all" if all_subjects else "eval"
    _print_artifact_provenance(metadata)
    write_features(out, matrix, metadata)
    console.print(
        f"[green]Done![/green] {len(matrix)} x {matrix.dim} {matrix.view} features "
        f"from {len(set(matrix.subjects.tolist()))} subject(s) written to [cyan]{out}[/cyan]"
    )


def _read_feature_file(path: Path) -> tuple[FeatureMatrix, dict]:
    try:
        matrix, metadata = read_features(path)
    except (FileNotFoundError, ValueError) as e:
        raise _fail(f"Cannot read features {path}: {e}") from e
    labeled = matrix.labeled
    if len(labeled) == 0:
        raise _fail(f"{path} holds no labeled rows.")
    return labeled, metadata


@app.command()
def svm(
    features_path: Path = typer.Option(..., "--features", help="Feature file"),
    out: Path = typer.Option(Path("svm.ssvm"), "-o", "--out", help="SVM model to write"),
    report: Optional[Path] = typer.Option(
        None, "--report", help="Report path without suffix (Default: <out>_report)"
    ),
    config: Optional[Path] = typer.Option(
        None, "-c", "--config", help="Path to key=value configuration file"
    ),
    folds: Optional[int] = typer.Option(None, "--folds", help="Subject-level folds (Default: 5)"),
    C: Optional[float] = typer.Option(None, "--C", help="Regularization constant (Default: 1.0)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Global seed (Default: 0)"),
):
    """Cross-validate a one-vs-rest Linear SVM, then fit it on every row."""
    cfg = _load_run_config(config, {"seed": seed, "data.folds": folds, "svm.C": C})
    _print_provenance(cfg)
    matrix, metadata = _read_feature_file(features_path)
    try:
        assignment = kfold(sorted(set(matrix.subjects.tolist())), cfg.data.folds, cfg.data.seed)
    except ValueError as e:
        raise _fail(str(e)) from e

    with _progress() as progress:
        task = progress.add_task("Cross-validating...", total=assignment.k)
        try:
            fold_reports, converged = cross_validate(
                matrix,
                assignment,
                cfg.svm,
                on_fold=lambda fold: progress.update(
                    task, advance=1, description=f"Fold {fold} done"
                ),
            )
        except ValueError as e:
            raise _fail(str(e)) from e

    (all_x,), transform = zscore_fit_apply(matrix.values)
    final = train_multiclass(all_x, matrix.labels, cfg.svm, transform)
    save_model(out, final, cfg.config_hash(), cfg.seed)

    provenance = _report_provenance(cfg.config_hash(), metadata, matrix, final.converged)
    provenance["cv_converged"] = _converged_summary(converged)
    result = aggregate(fold_reports, provenance)
    _emit_report(result, report or out.with_name(out.stem + "_report"), "Linear SVM")
    console.print(f"[green]Done![/green] Model written to [cyan]{out}[/cyan]")


def _converged_summary(flags: Sequence[bool]) -> str:
    """Converged binary problems out of all of them, e.g. "4/5"."""
    return f"{sum(flags)}/{len(flags)}"


def _report_provenance(
    config_hash: str,
    feature_meta: dict,
    matrix: FeatureMatrix,
    converged: Sequence[bool],
) -> dict:
    return {
        "config_hash": config_hash,
        "features_config_hash": feature_meta.get("config_hash", ""),
        "checkpoint_id": feature_meta.get("checkpoint_id", ""),
        "subjects": feature_meta.get("subjects", "all"),
        "view": matrix.view,
        "dim": matrix.dim,
        "svm_converged": _converged_summary(converged),
    }


def _emit_report(result: EvalReport, path: Path, title: str) -> None:
    csv_path, txt_path = write_report(result, path)
    console.print(render_table(result, title))
    console.print(f"Report written to [cyan]{csv_path}[/cyan] and [cyan]{txt_path}[/cyan]")


@app.command()
def evaluate(
    model_path: Path = typer.Option(..., "--model", help="SVM model"),
    features_path: Path = typer.Option(..., "--features", help="Feature file"),
    report: Optional[Path] = typer.Option(
        None, "--report", help="Report path without suffix (Default: <model>_eval)"
    ),
):
    """Score a saved SVM model on a feature file."""
    try:
        model, model_meta = load_model(model_path)
    except (FileNotFoundError, ValueError) as e:
        raise _fail(f"Cannot read model {model_path}: {e}") from e
    _print_artifact_provenance(model_meta)
    matrix, metadata = _read_feature_file(features_path)
    if matrix.dim != model.dim:
        raise _fail(
            f"Dimension mismatch: model expects {model.dim} features, "
            f"{features_path} has {matrix.dim}"
        )
    predicted = predict(model, matrix.values)
    result = aggregate(
        [FoldReport.from_labels(0, matrix.labels, predicted)],
        _report_provenance(model_meta.get("config_hash", ""), metadata, matrix, model.converged),
    )
    _emit_report(result, report or model_path.with_name(model_path.stem + "_eval"), "Evaluation")


if __name__ == "__main__":
    app()
