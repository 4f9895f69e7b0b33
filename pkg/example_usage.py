from mvsleep import (
    PretrainConfig,
    cross_validate,
    extract_features,
    kfold,
    make_split,
    pretrain,
    synthesize,
)
from mvsleep.metrics import aggregate
from mvsleep.pretrainer import model_from_checkpoint


def main():
    # 1. Generate a small synthetic corpus
    print("Generating synthetic epochs...")
    epochs = synthesize(per_class=20, subjects=10, seed=0)

    # 2. Split subjects into a pretext group and a held-out evaluation group
    split = make_split(sorted({e.subject_id for e in epochs}), seed=0, n_pretext=5, n_eval=5)
    pretext = [e for e in epochs if e.subject_id in split.pretext_subjects]
    evaluation = [e for e in epochs if e.subject_id in split.eval_subjects]

    # 3. Pretrain the encoders on the pretext group (labels are ignored here)
    print("Pretraining...")
    result = pretrain(pretext, PretrainConfig(batch_size=16, epochs=2, evaluate=False))
    model = model_from_checkpoint(result.checkpoint)

    # 4. Extract concatenated time + spectrogram features of the evaluation group
    features = extract_features(model, evaluation, "concat")

    # 5. Cross-validate the Linear SVM over evaluation subjects
    reports, converged = cross_validate(features, kfold(split.eval_subjects, k=5, seed=0))

    report = aggregate(reports)
    print(f"Acc={report.accuracy:.4f} kappa={report.kappa:.4f} MF1={report.macro_f1:.4f}")
    print(f"{sum(converged)}/{len(converged)} binary problems converged")


if __name__ == "__main__":
    main()
