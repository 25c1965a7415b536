"""Random-window vs subject split on the synthetic corpus, several seeds.

    python3 scripts/run_leakage.py --seeds 0 1 2 --epochs 5 --out reports/leakage.json
"""

import argparse
import json
import logging
import tempfile
from dataclasses import asdict
from pathlib import Path

from riskpipe.evaluation import leakage_experiment
from riskpipe.nn.model import ModelConfig
from riskpipe.nn.train import TrainingConfig
from riskpipe.pipeline import build_dataset, load_csv
from riskpipe.sensor import generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--patience", type=int, default=2)
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--out", default="reports/leakage.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    with tempfile.TemporaryDirectory() as tmp:
        csv_path = Path(tmp) / "corpus.csv"
        generate_corpus(csv_path, seed=args.corpus_seed)
        windows = build_dataset(load_csv(csv_path))

    runs = []
    for seed in args.seeds:
        cfg = TrainingConfig(max_epochs=args.epochs, patience=args.patience, seed=seed)
        report = leakage_experiment(windows, ModelConfig(), cfg, seed)
        runs.append(asdict(report))
        print(f"seed {seed}: random {report.accuracy_random_split:.4f}  subject {report.accuracy_subject_split:.4f}  gap {report.gap:+.4f}", flush=True)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"runs": runs, "epochs": args.epochs, "patience": args.patience}, indent=2) + "\n")


if __name__ == "__main__":
    main()
