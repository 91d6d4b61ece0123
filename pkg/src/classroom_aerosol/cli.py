"""Command line entry point: ``run``, ``converge`` and ``report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import FLOW_PROVIDERS, ConfigError, load_config
from .units import parse_quantity


def _grid(text: str):
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid must look like 50x50x30, got {text!r}")
    return tuple(int(p) for p in parts)


def _seconds(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return parse_quantity(text, "time")


def _load(args):
    overrides = {}
    if getattr(args, "duration", None) is not None:
        overrides["duration"] = f"{args.duration!r} s"
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "flow", None) is not None:
        overrides["flow_provider"] = args.flow
    if getattr(args, "intervention", None) is not None:
        overrides["intervention"] = args.intervention
    return load_config(args.scenario, overrides)


def _print_summary(report: dict, out=None) -> None:
    out = sys.stdout if out is None else out
    a = report["audit"]
    print(f"scenario: intervention={report['intervention']} infected={report['infected']} "
          f"seed={report['seed']} flow={report['flow_provider']}", file=out)
    print(f"simulated {report['simulated_time']:.3f} s in {report['steps']} steps", file=out)
    print(f"droplets: injected={a['injected']} suspended={a['suspended']} captured={a['captured']} "
          f"escaped={a['escaped']} settled={a['settled']} balanced={a['balanced']}", file=out)
    e = report.get("exposure") or {}
    if e:
        print(f"max receptor risk: {e['max_risk']:.6e}", file=out)
        print(f"R0 estimate: {e['r0']:.6e}", file=out)
        for s, v in e["total_risk"].items():
            print(f"  total risk from {s}: {v:.6e}", file=out)
    ct = report.get("class_time") or {}
    if "slope" in ct:
        t_star = "unbounded" if ct["unbounded"] else f"{ct['t_star']:.6g} s"
        print(f"max-risk fit: slope={ct['slope']:.6e}/s intercept={ct['intercept']:.6e} "
              f"safe class time={t_star}", file=out)
    if "wall_clock" in report:
        print(f"wall clock: {report['wall_clock']['seconds']:.1f} s", file=out)


def cmd_run(args) -> int:
    from .simulation import run
    cfg = _load(args)
    result = run(cfg, args.out, checkpoint_at=args.checkpoint_at,
                 checkpoint_path=(Path(args.out) / "checkpoint.ckpt") if args.checkpoint_at is not None else None,
                 restore_from=args.restore)
    _print_summary(result.report)
    print(f"outputs written to {args.out}")
    return 0


def cmd_converge(args) -> int:
    from .simulation import convergence_harness, convergence_table
    cfg = _load(args)
    rows = convergence_harness(cfg, args.grids, args.dts, duration=args.duration,
                               log_fn=lambda r: logging.info("case %s", r))
    text = convergence_table(rows)
    print(text, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "convergence.csv").write_text(text)
        (Path(args.out) / "convergence.json").write_text(json.dumps(rows, indent=2))
    return 0


def cmd_report(args) -> int:
    path = Path(args.input) / "report.json"
    if not path.exists():
        print(f"no report.json in {args.input}", file=sys.stderr)
        return 2
    report = json.loads(path.read_text())
    _print_summary(report)
    if args.deposition:
        for row in report.get("deposition", []):
            print(f"  receptor {row['receptor']}: D_olf={row['D_olf']:.6e} D_BA={row['D_BA']:.6e}")
    if args.fomite:
        for row in report.get("fomite", []):
            if row["C_s"] > 0:
                print(f"  {row['surface']}: C_s={row['C_s']:.6e} E_m={row['E_m']:.6e} risk={row['risk']:.6e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="classroom-aerosol", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", help="YAML scenario file (defaults apply to missing keys)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--flow", choices=FLOW_PROVIDERS)
        sp.add_argument("--intervention", choices=("none", "cloth_mask", "shields", "screens"))

    r = sub.add_parser("run", help="run one scenario")
    common(r)
    r.add_argument("--duration", type=_seconds, help="simulated seconds (or a quantity like '2 min')")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--checkpoint-at", type=_seconds, dest="checkpoint_at")
    r.add_argument("--restore", help="checkpoint file to continue from")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("converge", help="grid and time-step refinement study")
    common(c)
    c.add_argument("--duration", type=_seconds)
    c.add_argument("--grids", type=_grid, nargs="+", required=True)
    c.add_argument("--dts", type=float, nargs="+", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_converge)

    s = sub.add_parser("report", help="re-render a finished run's summary")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--deposition", action="store_true")
    s.add_argument("--fomite", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
