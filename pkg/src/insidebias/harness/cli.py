"""``insidebias`` command line.

Exit codes: 0 success (audit: not biased), 1 runtime failure, 2 usage error,
3 audit flagged the model as biased.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..data import ColorBiasConfig, colorize, read_manifest
from ..detect import BiasReport, audit, report_tables
from ..errors import ConfigurationError, InsideBiasError
from ..zoo import file_digest, load_weights
from .config import ProtocolConfig, config_from_dict, data_dir, load_config
from .evaluate import evaluate
from .mnist import fetch_mnist, load_mnist
from .study import digit_runs, dumps_json, grouped_runs, run_colored_mnist_study, run_grouped_study, select_runs

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_BIASED = 0, 1, 2, 3

log = logging.getLogger("insidebias")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML protocol config (defaults built in when omitted)")
    p.add_argument("--seed", type=int, help="override study.seed")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="insidebias", description="Activation-ratio bias detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch-mnist", help="download the MNIST IDX files")
    _common(p)
    p.add_argument("--out", type=Path, help="target directory (default: digit.mnist_dir or the data dir)")

    p = sub.add_parser("train", help="train, evaluate and audit one run of the configured study")
    _common(p)
    p.add_argument("--run", help="run id, e.g. digit0-red-0.9, unbiased, vgg_small-biased-A (default: first)")
    p.add_argument("--output-dir", type=Path, help="override study.output_dir")

    for name, text in (("evaluate", "per-group accuracy of a weight file"),
                       ("audit", "activation-ratio audit of a weight file")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--model", type=Path, required=True, help="weights.bin")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--manifest", type=Path, help="grouped image manifest (id,path,task,group)")
        src.add_argument("--colored-mnist", action="store_true", help="uniformly coloured MNIST test set")
        p.add_argument("--criterion", default=None, help="grouping column (default: group, or color for MNIST)")
        p.add_argument("--out", type=Path, help="write the JSON result here as well as to stdout")
        if name == "audit":
            p.add_argument("--tau", type=float, help="threshold (default: eval.tau)")
            p.add_argument("--layer", help="last | final-k | <probe name> (default: eval.layer)")

    p = sub.add_parser("study", help="run a full study")
    study_sub = p.add_subparsers(dest="study", required=True)
    for name in ("colored-mnist", "grouped"):
        q = study_sub.add_parser(name)
        _common(q)
        q.add_argument("--runs", nargs="+", help="only these run ids")
        q.add_argument("--scale", choices=("full", "small"), help="override study.scale")
        q.add_argument("--output-dir", type=Path, help="override study.output_dir")
        q.add_argument("--no-reuse", action="store_true", help="retrain even when artifacts match")

    p = sub.add_parser("report", help="render a bias report as CSV tables or canonical JSON")
    _common(p)
    p.add_argument("--in", dest="input", type=Path, required=True, help="bias_report.json")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--table", choices=("summary", "curves"), default="summary", help="CSV table to emit")
    p.add_argument("--out", type=Path, help="output file (default: stdout)")
    return parser


def _config(args, task: str | None = None) -> ProtocolConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file {args.config} does not exist")
        try:
            cfg = load_config(args.config)
        except ConfigurationError as exc:
            raise UsageError(str(exc)) from None
    else:
        cfg = config_from_dict({"study": {"task": task or "digit"}})
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "scale", None):
        changes["scale"] = args.scale
    if getattr(args, "output_dir", None):
        changes["output_dir"] = str(args.output_dir)
    return cfg.replace(**changes) if changes else cfg


def _emit(text: str, out: Path | None) -> None:
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _test_set(args, cfg: ProtocolConfig):
    if args.colored_mnist:
        _, test = load_mnist(cfg.mnist_dir)
        return colorize(test, ColorBiasConfig.uniform(seed=cfg.digit.test_color_seed)), args.criterion or "color"
    if not args.manifest.is_file():
        raise UsageError(f"manifest {args.manifest} does not exist")
    criterion = args.criterion or "group"
    return read_manifest(args.manifest, criterion, "test"), criterion


def cmd_fetch(args) -> int:
    cfg = _config(args)
    target = args.out or (Path(cfg.digit.mnist_dir) if cfg.digit.mnist_dir else data_dir() / "mnist")
    for path in fetch_mnist(target):
        print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    specs = digit_runs(cfg) if cfg.task == "digit" else grouped_runs(cfg)
    try:
        chosen = select_runs(specs, [args.run] if args.run else [specs[0].run_id])
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    ids = [s.run_id for s in chosen]
    result = (run_colored_mnist_study if cfg.task == "digit" else run_grouped_study)(cfg, only=ids)
    return _summarize(result)


def cmd_study(args) -> int:
    task = "digit" if args.study == "colored-mnist" else "grouped_binary"
    cfg = _config(args, task)
    if cfg.task != task:
        raise UsageError(f"`study {args.study}` needs study.task = {task!r}, config has {cfg.task!r}")
    runner = run_colored_mnist_study if task == "digit" else run_grouped_study
    try:
        result = runner(cfg, only=args.runs, reuse=not args.no_reuse)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    return _summarize(result)


def _summarize(result) -> int:
    failed = 0
    for r in result.runs:
        if r.ok:
            ev = r.evaluation
            print(f"{r.spec.run_id}\taccuracy={ev.overall:.4f}\tavg={ev.avg:.4f}\tstd={ev.std:.4f}"
                  f"\tratio={r.ratio:.4f}\tbiased={r.report.verdict.biased}")
        else:
            failed += 1
            print(f"{r.spec.run_id}\t{r.status}: {r.error}")
    print(f"artifacts: {result.directory}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    model = load_weights(args.model)
    test, criterion = _test_set(args, cfg)
    result = evaluate(model, test, criterion, cfg.eval.batch_size)
    _emit(dumps_json(result.to_dict()), args.out)
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = _config(args)
    tau = cfg.eval.tau if args.tau is None else args.tau
    if not 0 <= tau <= 1:
        raise UsageError(f"--tau must lie in [0, 1], got {tau}")
    model = load_weights(args.model)
    test, criterion = _test_set(args, cfg)
    ev = cfg.eval
    report = audit(model, test, criterion, tau=tau, layer=args.layer or ev.layer, model_id=args.model.stem,
                   weights_digest=file_digest(args.model), batch_size=ev.batch_size, n_bootstrap=ev.n_bootstrap,
                   seed=cfg.seed, statistic=ev.statistic, normalize_scope=ev.normalize_scope)
    _emit(report.to_json(), args.out)
    v = report.verdict
    print(f"activation ratio {v.ratio:.4f} at {v.layer} (tau {v.tau}): {'BIASED' if v.biased else 'not biased'}",
          file=sys.stderr)
    return EXIT_BIASED if v.biased else EXIT_OK


def cmd_report(args) -> int:
    if args.config is not None and not args.config.is_file():
        raise UsageError(f"config file {args.config} does not exist")
    if not args.input.is_file():
        raise UsageError(f"report {args.input} does not exist")
    try:
        report = BiasReport.from_dict(json.loads(args.input.read_text(encoding="utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{args.input} is not a bias report: {exc}") from None
    text = report.to_json() if args.format == "json" else report_tables(report)[args.table]
    _emit(text, args.out)
    return EXIT_OK


COMMANDS = {"fetch-mnist": cmd_fetch, "train": cmd_train, "evaluate": cmd_evaluate, "audit": cmd_audit,
            "study": cmd_study, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"insidebias {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsideBiasError as exc:
        print(f"insidebias {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
