"""Command-line entry point: ``riskpipe <subcommand>``.

Exit codes: 0 success, 1 validation/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError, ValidationError
from .nn.modelfile import ModelFileError

log = logging.getLogger("riskpipe")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _write_json(path, payload) -> Path:
    from .evaluation import nan_to_none

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(nan_to_none(payload), indent=2, sort_keys=True) + "\n")
    return path


def _windows(cfg: RunConfig, path=None):
    from .pipeline import load_dataset

    return load_dataset(path or cfg.dataset)


def cmd_corpus(args, cfg: RunConfig) -> int:
    from .sensor import generate_corpus

    series = generate_corpus(args.corpus_out, args.subjects, args.minutes, cfg.seed)
    rows = sum(len(s) for s in series)
    print(f"wrote {rows} rows for {len(series)} subjects to {args.corpus_out}")
    return EXIT_OK


def cmd_label(args, cfg: RunConfig) -> int:
    from .pipeline import build_dataset, load_csv, save_dataset, write_window_summary

    source = args.input_csv or cfg.dataset_csv
    if not source:
        raise ValidationError("no input CSV given")
    report = {}
    series = load_csv(source, cfg.columns, report)
    windows = build_dataset(series, cfg.scoring_config())
    out = args.out or cfg.dataset
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    data = save_dataset(windows, out, {"source": str(source), "scoring": cfg.scoring_config().to_dict()})
    hist = windows.histogram()
    digest = hashlib.sha256(data).hexdigest()
    _write_json(Path(out).with_suffix(".histogram.json"), {"histogram": hist, "windows": len(windows), "digest": digest, "skipped_rows": report.get("skipped_rows", 0), "config": cfg.effective()})
    if args.summary_csv:
        write_window_summary(windows, args.summary_csv)
    print(f"{len(windows)} windows from {len(windows.subjects)} subjects -> {out}")
    for name, count in hist.items():
        print(f"  {name:<22} {count:>7}")
    print(f"digest {digest}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    from .evaluation import config_fingerprint, dataset_digest, evaluate_bundle
    from .nn.modelfile import load_model, save_model
    from .nn.train import train
    from .pipeline import split_by_subject

    windows = _windows(cfg, args.dataset)
    split = split_by_subject(windows.subject_ids, 0.8, cfg.seed)
    model_cfg, train_cfg = cfg.model_cfg(), cfg.training_cfg()
    bundle, history = train(windows, split, model_cfg, train_cfg)
    out = Path(args.model_out or cfg.model)
    out.parent.mkdir(parents=True, exist_ok=True)
    fp = save_model(bundle, out)
    load_model(out)  # round-trip check
    history_path = Path(args.history_out or out.with_suffix(".history.csv"))
    history.to_csv(history_path)
    held_out = evaluate_bundle(bundle, windows.for_subjects(split.val_subjects))
    _write_json(
        Path(cfg.reports_dir) / "train.json",
        {
            "held_out_accuracy": held_out["accuracy"],
            "best_epoch": history.best_epoch,
            "train_subjects": sorted(split.train_subjects),
            "val_subjects": sorted(split.val_subjects),
            "model_fingerprint": fp,
            "fingerprint": config_fingerprint(model_cfg, train_cfg, dataset_digest(windows)),
            "config": cfg.effective(),
        },
    )
    print(f"held-out accuracy {held_out['accuracy']:.4f} (best epoch {history.best_epoch}/{len(history)})")
    print(f"model -> {out} ({fp[:16]})\nhistory -> {history_path}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    from .evaluation import config_fingerprint, dataset_digest, evaluate_bundle, write_roc_csvs
    from .nn.modelfile import load_model
    from .pipeline import split_by_subject

    windows = _windows(cfg, args.dataset)
    bundle = load_model(args.model or cfg.model)
    if not args.all_subjects:
        windows = windows.for_subjects(split_by_subject(windows.subject_ids, 0.8, cfg.seed).val_subjects)
    result = evaluate_bundle(bundle, windows)
    reports = Path(cfg.reports_dir)
    write_roc_csvs(reports / "roc", result.pop("_probs"), windows.labels)
    result.pop("_pred")
    result["model_fingerprint"] = bundle.fingerprint
    result["fingerprint"] = config_fingerprint(bundle.config, cfg.training_cfg(), dataset_digest(windows))
    result["config"] = cfg.effective()
    path = _write_json(reports / "evaluate.json", result)
    print(f"accuracy {result['accuracy']:.4f} on {result['windows']} windows; macro AUC {result['auc']['macro']}")
    print(f"report -> {path}")
    return EXIT_OK


def cmd_cv(args, cfg: RunConfig) -> int:
    from .evaluation import run_cv

    windows = _windows(cfg, args.dataset)
    report = run_cv(windows, cfg.model_cfg(), cfg.training_cfg(), args.folds, cfg.seed)
    report.config["run"] = cfg.effective()
    path = Path(cfg.reports_dir) / "cv.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json() + "\n")
    for i, (acc, fold) in enumerate(zip(report.fold_accuracies, report.folds), 1):
        print(f"fold {i}: {acc:.4f}  {','.join(fold)}")
    print(f"mean {report.mean:.4f} +/- {report.std:.4f}\nreport -> {path}")
    return EXIT_OK


def cmd_leakage(args, cfg: RunConfig) -> int:
    from dataclasses import asdict

    from .evaluation import leakage_experiment

    windows = _windows(cfg, args.dataset)
    base = cfg.training_cfg()
    runs = []
    for seed in args.seeds:
        train_cfg = type(base)(**{**base.to_dict(), "seed": seed})
        report = leakage_experiment(windows, cfg.model_cfg(), train_cfg, seed)
        runs.append(asdict(report))
        print(f"seed {seed}: random split {report.accuracy_random_split:.4f}, subject split {report.accuracy_subject_split:.4f}, gap {report.gap:+.4f}")
    path = _write_json(Path(cfg.reports_dir) / "leakage.json", {"runs": runs, "config": cfg.effective()})
    print(f"report -> {path}")
    return EXIT_OK


def _serve(server, what: str) -> int:
    print(f"{what} listening on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()
    return EXIT_OK


def cmd_serve_inference(args, cfg: RunConfig) -> int:
    from .inference import InferenceService

    service = InferenceService.from_file(args.model or cfg.model)
    log.info("model %s loaded (%s)", args.model or cfg.model, service.fingerprint[:16])
    return _serve(service.server(cfg.inference_host, cfg.inference_port), "inference engine")


def cmd_serve_gateway(args, cfg: RunConfig) -> int:
    from .gateway import Gateway

    gateway = Gateway(cfg.inference_url, cfg.threshold, cfg.single_session)
    return _serve(gateway.server(cfg.gateway_host, cfg.gateway_port), "gateway")


def cmd_simulate(args, cfg: RunConfig) -> int:
    if args.corpus_out:
        return cmd_corpus(args, cfg)
    from .sensor import Scenario, stream

    scenario = Scenario.load(args.scenario)
    if args.seed is not None:
        from dataclasses import replace

        scenario = replace(scenario, seed=args.seed)
    report = stream(cfg.gateway_url, scenario, args.rate_hz, args.duration_s)
    print(json.dumps(report.to_dict()))
    return EXIT_RUNTIME if report.aborted or report.failed else EXIT_OK


def cmd_assess(args, cfg: RunConfig) -> int:
    from .inference import assess_session
    from .nn.modelfile import load_model
    from .pipeline import load_csv

    series = load_csv(args.input_csv, cfg.columns)
    if args.subject:
        series = [s for s in series if s.subject_id == args.subject]
    if len(series) != 1:
        raise ValidationError(f"expected exactly one session in {args.input_csv}, found {len(series)} (use --subject)")
    verdict = assess_session(load_model(args.model or cfg.model), series[0].values, args.aggregation)
    print(json.dumps(verdict.to_dict(), sort_keys=True))
    return EXIT_OK


def render_status(status: dict) -> str:
    line = f"[{status.get('session_id', '?')}] {status.get('state', '?'):<10} {status.get('buffered', 0):>4}/{status.get('threshold', '?')}"
    verdict = status.get("verdict")
    if verdict:
        line += f"  verdict: {verdict['label']} ({verdict['confidence']:.2f}, {verdict['window_count']} windows)"
    if status.get("error"):
        line += f"  error: {status['error']}"
    return line


def cmd_status(args, cfg: RunConfig) -> int:
    from .httpjson import request_json

    url = cfg.gateway_url.rstrip("/") + "/status"
    polls = 0
    last = None
    while True:
        try:
            _, status = request_json("GET", url, timeout=5)
        except OSError as exc:
            print(f"gateway unreachable at {url}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        if not args.watch:
            print(json.dumps(status, indent=2, sort_keys=True))
            return EXIT_OK
        line = render_status(status)
        if line != last:
            print(line, flush=True)
            last = line
        polls += 1
        if args.max_polls and polls >= args.max_polls:
            return EXIT_OK
        if args.until_complete and status.get("state") == "Complete":
            return EXIT_OK
        time.sleep(args.interval)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskpipe", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="write a synthetic multi-subject CSV")
    p.add_argument("--corpus-out", required=True)
    p.add_argument("--subjects", type=int, default=14)
    p.add_argument("--minutes", type=float, default=43)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("label", help="clean, standardize, window and label a CSV")
    p.add_argument("input_csv", nargs="?")
    p.add_argument("--out")
    p.add_argument("--summary-csv")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train on a subject split and save the model")
    p.add_argument("--dataset")
    p.add_argument("--model-out")
    p.add_argument("--history-out")
    p.add_argument("--reports-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics, confusion matrix and ROC for a model")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--all-subjects", action="store_true", help="evaluate every subject, not only the validation split")
    p.add_argument("--reports-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cv", help="subject-grouped k-fold cross-validation")
    p.add_argument("--dataset")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--reports-dir")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("leakage", help="random-window vs subject split comparison")
    p.add_argument("--dataset")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--reports-dir")
    p.set_defaults(func=cmd_leakage)

    p = sub.add_parser("serve-inference", help="run the inference engine")
    p.add_argument("--model")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.set_defaults(func=cmd_serve_inference)

    p = sub.add_parser("serve-gateway", help="run the session gateway")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--inference-url")
    p.add_argument("--threshold", type=int)
    p.add_argument("--single-session", action="store_true", default=None)
    p.set_defaults(func=cmd_serve_gateway)

    p = sub.add_parser("simulate", help="stream synthetic telemetry to the gateway")
    p.add_argument("--gateway-url")
    p.add_argument("--rate-hz", type=float, default=1.0)
    p.add_argument("--scenario", default="two-phase", help="builtin name or JSON file")
    p.add_argument("--duration-s", type=int)
    p.add_argument("--corpus-out", help="write a corpus CSV instead of streaming")
    p.add_argument("--subjects", type=int, default=14)
    p.add_argument("--minutes", type=float, default=43)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("assess", help="offline one-shot verdict for a session CSV")
    p.add_argument("input_csv")
    p.add_argument("--model")
    p.add_argument("--subject")
    p.add_argument("--aggregation", choices=["majority", "max_risk"], default="majority")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("status", help="show gateway status")
    p.add_argument("--gateway-url")
    p.add_argument("--watch", action="store_true")
    p.add_argument("--interval", type=float, default=1.0)
    p.add_argument("--max-polls", type=int)
    p.add_argument("--until-complete", action="store_true")
    p.set_defaults(func=cmd_status)
    return parser


# flag name -> RunConfig field
_OVERRIDES = {
    "seed": "seed",
    "reports_dir": "reports_dir",
    "inference_url": "inference_url",
    "gateway_url": "gateway_url",
    "threshold": "threshold",
    "single_session": "single_session",
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    overrides = {field: getattr(args, flag, None) for flag, field in _OVERRIDES.items()}
    if args.command == "serve-inference":
        overrides.update(inference_port=args.port, inference_host=args.host)
    elif args.command == "serve-gateway":
        overrides.update(gateway_port=args.port, gateway_host=args.host)
    try:
        cfg = RunConfig.load(args.config, **overrides)
        return args.func(args, cfg)
    except (ValidationError, ConfigError, ModelFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        log.debug("unhandled", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
