"""Subject-grouped 5-fold CV of the full model on the synthetic corpus."""

import argparse
import logging
import tempfile
from pathlib import Path

from riskpipe.evaluation import run_cv
from riskpipe.nn.model import ModelConfig
from riskpipe.nn.train import TrainingConfig
from riskpipe.pipeline import build_dataset, load_csv
from riskpipe.sensor import generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--patience", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="reports/cv.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    with tempfile.TemporaryDirectory() as tmp:
        csv_path = Path(tmp) / "corpus.csv"
        generate_corpus(csv_path, seed=args.seed)
        windows = build_dataset(load_csv(csv_path))

    cfg = TrainingConfig(max_epochs=args.epochs, patience=args.patience, seed=args.seed)
    report = run_cv(windows, ModelConfig(), cfg, args.folds, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    for fold, acc in zip(report.folds, report.fold_accuracies):
        print(f"{','.join(fold):<14} {acc:.4f}")
    print(f"mean {report.mean:.4f} +/- {report.std:.4f}")


if __name__ == "__main__":
    main()
