"""Command-line entry point: ``fuelbmi <subcommand> [options]``.

Exit codes: 0 success, 1 input error (bad config, missing or malformed
files, failed preconditions), 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .core import BMIError

log = logging.getLogger("fuelbmi")


def _override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                        metavar="KEY=VALUE", help="override one configuration key (repeatable)")
    common.add_argument("--data-dir", type=Path, help="shorthand for --set paths.data_dir=...")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fuelbmi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="write a synthetic household")
    s.add_argument("--pid", help="household id (default sim.pid)")
    s.add_argument("--training", action="store_true",
                   help="simulate the device-training household instead")
    sub.add_parser("train-devices", parents=[common], help="train the appliance classifier")
    lb = sub.add_parser("learn-baseline", parents=[common], help="learn routine baselines")
    lb.add_argument("--pid", action="append", help="restrict to these households")
    pr = sub.add_parser("predict", parents=[common], help="score new days and update statuses")
    pr.add_argument("--pid", action="append", help="restrict to these households")
    ind = sub.add_parser("indicators", parents=[common], help="10%% rule and LIHC verdicts")
    ind.add_argument("population", type=Path, nargs="?",
                     help="CSV pid,income_bhc,income_ahc,fuel_cost,occupants (default paths.population)")
    ind.add_argument("--out", type=Path, help="write the CSV here instead of stdout")
    sub.add_parser("serve", parents=[common], help="run the status endpoint")
    rp = sub.add_parser("report", parents=[common], help="write CSV tables and PNG figures")
    rp.add_argument("--out", type=Path, help="report directory (default paths.report_dir)")
    return p


def run(args) -> int:
    overrides = dict(args.overrides)
    if args.data_dir is not None:
        overrides["paths.data_dir"] = str(args.data_dir)
    cfg = load_config(args.config, overrides)

    # imported here so that `--help` stays fast
    from . import pipeline

    cmd = args.command
    if cmd == "simulate":
        res = pipeline.mode_simulate(cfg, training=args.training, pid=args.pid)
        print(f"{res.stream.pid}: {len(res.stream)} readings, {len(res.annotations)} annotation rows "
              f"-> {cfg.data_dir}")
    elif cmd == "train-devices":
        rep = pipeline.mode_device_training(cfg)
        print(f"test accuracy {rep['accuracy']:.4f} on {rep['n']} segments; "
              f"checkpoint {pipeline.DataDir(cfg.data_dir).checkpoint}")
    elif cmd == "learn-baseline":
        for pid, b in pipeline.mode_behavioural_training(cfg, args.pid).items():
            print(f"{pid}: baseline {b.first_date} .. {b.last_date}")
    elif cmd == "predict":
        for pid, r in pipeline.mode_prediction(cfg, args.pid).items():
            last = r.statuses[-1].status.value if r.statuses else "unchanged"
            print(f"{pid}: {len(r.statuses)} new days, status {last}, {len(r.alerts)} alerts")
    elif cmd == "indicators":
        from .indicators import write_verdicts
        from .report import indicator_table

        path = args.population or (Path(cfg["paths.population"]) if cfg["paths.population"] else None)
        if path is None:
            raise ConfigError("no population file given (argument or paths.population)")
        verdicts, _ = indicator_table(cfg, path)
        text = write_verdicts(verdicts)
        if args.out:
            pipeline.atomic_write_text(args.out, text)
        else:
            sys.stdout.write(text)
    elif cmd == "serve":
        from .service import serve

        serve(cfg)
    elif cmd == "report":
        from .report import write_report

        for p in write_report(cfg, args.out):
            print(p)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (BMIError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
