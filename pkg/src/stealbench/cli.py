"""Command-line entry point.

Exit codes: 0 success, 2 invalid spec or arguments, 1 runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .defense import DefenseConfig
from .engine.network import Network
from .errors import ValidationError
from .harness import (
    StageError,
    emit_reports,
    format_report,
    load_spec,
    prepare_data,
    preflight,
    read_results,
    run_experiment,
    run_sweep,
    train_base,
)
from .harness.reports import atomic_write, write_failure
from .metrics import accuracy

log = logging.getLogger("stealbench")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def _spec_args(p):
    p.add_argument("spec", help="experiment spec (JSON)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", help="output directory (default: the spec's out_dir)")
    p.add_argument("--budget", type=int, help="override every attack's query budget")


def build_parser():
    parser = _Parser(prog="stealbench", description="Model-stealing attack and defense experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-base", help="train and save the base model")
    _spec_args(p)

    p = sub.add_parser("attack", help="run the spec's attacks against its defense")
    _spec_args(p)
    p.add_argument("--base", help="reuse a saved base model (base.npz) instead of training")

    p = sub.add_parser("sweep", help="grid-search the defense, then run the attacks")
    _spec_args(p)
    p.add_argument("--base", help="reuse a saved base model (base.npz) instead of training")

    p = sub.add_parser("report", help="print a result directory as a table")
    p.add_argument("result_dir")

    p = sub.add_parser("serve", help="serve a protected model over HTTP")
    p.add_argument("--base", required=True, help="saved base model (base.npz)")
    p.add_argument("--defense", help="defense config JSON (file path or inline object)")
    p.add_argument("--budget", type=int, default=19200, help="default per-session query budget")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _load(args):
    spec = load_spec(args.spec)
    if args.budget is not None and args.budget < 1:
        raise ValidationError("--budget must be positive")
    spec = spec.with_overrides(seed=args.seed, out_dir=args.out, budget=args.budget)
    out = Path(args.out) if args.out else Path(args.spec).parent / spec.out_dir
    return spec, out


def _load_base(path):
    try:
        return Network.load(path)
    except FileNotFoundError:
        raise ValidationError(f"base model not found: {path}") from None


def cmd_train_base(args):
    spec, out = _load(args)
    preflight(out)
    prepared = prepare_data(spec)
    base = train_base(spec, prepared)
    test = prepared.split.test
    base.save(out / "base.npz")
    info = {"fingerprint": spec.fingerprint(), "seed": spec.seed,
            "test_accuracy": accuracy(base.forward(test.inputs), test.labels)}
    atomic_write(out / "base.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(f"base model saved to {out / 'base.npz'} (test accuracy {info['test_accuracy']:.4f})")


def _run(args, sweep):
    spec, out = _load(args)
    base = _load_base(args.base) if args.base else None
    preflight(out)
    try:
        result = (run_sweep if sweep else run_experiment)(spec, base=base)
    except StageError as exc:
        write_failure(out, exc.stage, str(exc.cause))
        raise
    emit_reports(result, out)
    summary, curves = read_results(out)
    print(format_report(summary, curves))
    print(f"\nreports written to {out}")


def cmd_report(args):
    try:
        summary, curves = read_results(args.result_dir)
    except FileNotFoundError as exc:
        raise ValidationError(str(exc)) from None
    print(format_report(summary, curves))


def _defense_arg(text):
    if text is None:
        return DefenseConfig()
    path = Path(text)
    data = json.loads(path.read_text()) if path.is_file() else json.loads(text)
    return DefenseConfig.model_validate(data)


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    try:
        defense = _defense_arg(args.defense)
    except ValueError as exc:
        raise ValidationError(f"invalid defense: {exc}") from None
    app = create_app(_load_base(args.base), defense, args.budget)
    uvicorn.run(app, host=args.host, port=args.port)


COMMANDS = {
    "train-base": cmd_train_base,
    "attack": lambda a: _run(a, sweep=False),
    "sweep": lambda a: _run(a, sweep=True),
    "report": cmd_report,
    "serve": cmd_serve,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
