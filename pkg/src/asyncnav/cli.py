"""Command-line entry point: ``asyncnav <subcommand> [options]``.

Errors go to stderr as a single JSON line ``{"error": <kind>, "message": ...}``.
Exit codes: 0 ok, 1 verification failed, 2 usage, 3 configuration, 4 input, 5 training halted.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_CONFIG, EXIT_INPUT, EXIT_HALTED = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _global_flags(p: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps a flag given before the subcommand from being overwritten by the subparser default
    p.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value config file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    p.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for outputs (default: current)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="print nothing on success")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=argparse.SUPPRESS,
                   help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="asyncnav", description="Asynchronous perception/control navigation toolkit")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p)
        return p

    p = add("train", "train a policy with the configured curriculum")
    p.add_argument("--variant", choices=("proposed", "no_tem", "sync_baseline"))
    p.add_argument("--curriculum", choices=("two_stage", "async_only"))
    p.add_argument("--stage1-iters", type=int)
    p.add_argument("--stage2-iters", type=int)
    p.add_argument("--n-envs", type=int)
    p.add_argument("--horizon", type=int)

    p = add("eval", "evaluate a checkpoint in one mode")
    p.add_argument("--mode", choices=("proposed", "ideal", "no_tem", "sync_baseline"))
    p.add_argument("--checkpoint")
    p.add_argument("--trials", type=int)
    p.add_argument("--v-des", type=float)
    p.add_argument("--density", type=float)
    p.add_argument("--record-steps", action="store_true")

    p = add("ablate", "mode x speed / mode x density grid")
    p.add_argument("--checkpoint")
    p.add_argument("--trials", type=int)
    p.add_argument("--speeds", type=_floats)
    p.add_argument("--densities", type=_floats)
    p.add_argument("--modes")

    p = add("project", "project a point cloud file into a pseudo-image file")
    p.add_argument("cloud")
    p.add_argument("image")

    p = add("bench", "time projection and policy forward passes")
    p.add_argument("--sizes", type=_ints)
    p.add_argument("--repetitions", type=int)

    p = add("aoi-trace", "export the age-of-information trace of a schedule")
    p.add_argument("--horizon", type=float, default=1.0, help="seconds of control ticks")
    p.add_argument("--f-ctrl", type=float)
    p.add_argument("--f-perc", type=float)
    p.add_argument("--latency", help="seconds, or lo,hi for a uniform draw")
    p.add_argument("output", nargs="?", help="trace file (default: <out-dir>/aoi_trace.txt)")

    p = add("verify", "run the variance-decomposition and entropy checks")
    p.add_argument("--samples", type=int, default=1_000_000)
    return parser


def _settings(args):
    from .config import load_config
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return load_config(getattr(args, "config", None), overrides)


def _say(args, text: str) -> None:
    if not getattr(args, "quiet", False):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_train(args, s) -> int:
    from .config import dump_config
    from .harness import train_config
    from .learn import train
    ts = s.train
    for flag, key in (("variant", "variant"), ("curriculum", "curriculum"), ("stage1_iters", "stage1_iters"),
                      ("stage2_iters", "stage2_iters"), ("n_envs", "n_envs"), ("horizon", "horizon")):
        v = getattr(args, flag)
        if v is not None:
            ts = replace(ts, **{key: v})
    cfg = train_config(s.env, s.schedule, s.policy_config(), s.ppo, ts, s.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_config.cfg").write_text(dump_config(replace(s, train=ts)))
    def progress(r):
        ret = "-" if r["mean_return"] is None else f"{r['mean_return']:.3f}"
        print(f"iter {r['iteration']:4d} {r['stage']:<12} return {ret:>9} "
              f"success {r['success_rate']:.3f} aoi {r['mean_aoi']:.3f}", flush=True)
    result = train(cfg, out, progress=None if args.quiet else progress)
    if result.halted:
        return _fail("halted", result.halted, EXIT_HALTED)
    _say(args, f"wrote {out / 'policy.ckpt'} and {out / 'metrics.jsonl'}")
    return EXIT_OK


def _experiment(args, s, mode: Optional[str] = None):
    from .harness import ExperimentConfig
    e = s.eval
    return ExperimentConfig(
        mode=mode or getattr(args, "mode", None) or e.mode, env=s.env, schedule=s.schedule,
        checkpoint=getattr(args, "checkpoint", None) or e.checkpoint,
        trials=getattr(args, "trials", None) or e.trials, seed=s.seed,
        v_des=getattr(args, "v_des", None) if getattr(args, "v_des", None) is not None else e.v_des,
        density=getattr(args, "density", None) if getattr(args, "density", None) is not None else e.density,
        deterministic=e.deterministic,
        record_steps=getattr(args, "record_steps", False) or e.record_steps,
    )


def cmd_eval(args, s) -> int:
    from .harness import run_suite
    report = run_suite(_experiment(args, s))
    report.write(args.out_dir)
    _say(args, report.table())
    return EXIT_OK


def cmd_ablate(args, s) -> int:
    from .harness import ablation_matrix, ablation_table
    a = s.ablate
    modes = tuple(m.strip() for m in args.modes.split(",")) if args.modes else a.modes
    from .env import MODES
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise UsageError(f"unknown mode(s) {bad}")
    cells = ablation_matrix(_experiment(args, s, mode=modes[0]), args.speeds or a.speeds,
                            args.densities or a.densities, modes,
                            fixed_density=a.fixed_density, fixed_speed=a.fixed_speed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = ablation_table(cells)
    (out / "ablation.tsv").write_text(table)
    _say(args, table)
    return EXIT_OK


def cmd_project(args, s) -> int:
    from .pointcloud import project_cartesian, read_cloud, write_image
    img = project_cartesian(s.grid, read_cloud(args.cloud))
    write_image(args.image, img)
    _say(args, f"wrote {args.image} ({img.values.shape[0]}x{img.values.shape[1]})")
    return EXIT_OK


def cmd_bench(args, s) -> int:
    from .harness import bench_latency, bench_table, write_bench
    reps = args.repetitions or s.bench.repetitions
    if reps < 30:
        raise UsageError("--repetitions must be at least 30")
    rows = bench_latency(s.grid, args.sizes or s.bench.sizes, reps, s.policy_config(), s.seed)
    write_bench(rows, args.out_dir)
    _say(args, bench_table(rows))
    return EXIT_OK


def cmd_aoi_trace(args, s) -> int:
    from .config import settings_from_mapping
    from .schedule import run_timeline, write_aoi_trace
    over = {}
    if args.f_ctrl is not None:
        over["schedule.f_ctrl"] = str(args.f_ctrl)
    if args.f_perc is not None:
        over["schedule.f_perc"] = str(args.f_perc)
    if args.latency is not None:
        over["schedule.latency"] = args.latency
    sched = settings_from_mapping(over, s).schedule if over else s.schedule
    tl = run_timeline(sched, args.horizon)
    path = Path(args.output) if args.output else Path(args.out_dir) / "aoi_trace.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_aoi_trace(path, tl.aoi)
    _say(args, f"wrote {len(tl.aoi)} ticks to {path}")
    return EXIT_OK


def cmd_verify(args, s) -> int:
    from .infotheory import delay_free, entropy_inequality_check, three_state_chain, variance_decomposition_check
    ok = True
    cases = (("3-state chain, k in {0,1}", three_state_chain((0.5, 0.5, 0.0))),
             ("3-state chain, k in {0,1,2}", three_state_chain((0.3, 0.3, 0.4))),
             ("delay-free chain", delay_free(three_state_chain())))
    for name, mdp in cases:
        rep = variance_decomposition_check(mdp, args.samples, seed=s.seed)
        ok &= rep.passed
        _say(args, f"[{name}] {'PASS' if rep.passed else 'FAIL'}")
        for line in rep.lines():
            _say(args, "  " + line)
    held, margins = entropy_inequality_check(100, seed=s.seed)
    ok &= held
    _say(args, f"[entropy inequality, 100 random joints] {'PASS' if held else 'FAIL'} "
               f"(min margin {min(margins):.3e})")
    return EXIT_OK if ok else _fail("verify", "one or more checks failed", EXIT_VERIFY)


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "project": cmd_project,
            "bench": cmd_bench, "aoi-trace": cmd_aoi_trace, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .pointcloud import InvalidInputError
    from .policy import ConfigurationError
    from .schedule import CausalityError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for name, default in (("config", None), ("seed", None), ("out_dir", "."), ("quiet", False), ("set", None)):
            if not hasattr(args, name):
                setattr(args, name, default)
        settings = _settings(args)
        return COMMANDS[args.command](args, settings)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except ConfigurationError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (InvalidInputError, CausalityError, FileNotFoundError, IsADirectoryError) as exc:
        return _fail("input", exc, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
