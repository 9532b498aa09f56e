"""Desk-scale curriculum study: mode comparison after two-stage training, and two-stage vs async-from-scratch.

    python3 experiments/toy_curriculum.py all            # everything, sequentially
    python3 experiments/toy_curriculum.py train proposed 0
    python3 experiments/toy_curriculum.py stability two_stage 3
    python3 experiments/toy_curriculum.py eval
    python3 experiments/toy_curriculum.py summary

Each run writes into results/toy_curriculum/<run>/ and is skipped when its checkpoint already exists,
so the individual commands can be spread over several machines and collected afterwards.
"""
import json
import sys
import time
from pathlib import Path

from asyncnav.env import EnvConfig
from asyncnav.harness import ExperimentConfig, mcnemar_exact, run_modes
from asyncnav.learn import TrainConfig, async_only, iterations_to_threshold, read_metrics, train, two_stage
from asyncnav.schedule import ScheduleConfig
from asyncnav.world import WorldConfig

ROOT = Path(__file__).resolve().parent.parent / "results" / "toy_curriculum"

# the committed master seed set
TRAIN_SEEDS = (0, 1, 2, 3, 4)
EVAL_SEED = 20_261
EVAL_TRIALS = 500

WORLD = WorldConfig(path_length=10.0, width=6.0, density=0.2)
ENV = EnvConfig(world=WORLD)
SCHEDULE = ScheduleConfig()  # 100 Hz control, 10 Hz perception
STAGE1_ITERS, STAGE2_ITERS = 60, 60
THRESHOLD, WINDOW = 0.7, 200

# hardest toy setting: the trained obstacle density at the top of the trained speed range
HARDEST = dict(density=WORLD.density, v_des=ENV.v_des_range[1])


def _train(name, cfg):
    out = ROOT / name
    if (out / "policy.ckpt").exists():
        print(f"{name}: cached")
        return
    t0 = time.time()

    def progress(r):
        print(f"{name} it {r['iteration']:3d} {r['stage'][:5]} success {r['success_rate']:.3f}", flush=True)

    res = train(cfg, out, progress=progress)
    print(f"{name}: done in {time.time() - t0:.0f} s ({res.halted or 'ok'})", flush=True)


def train_variant(variant, seed=0):
    """Full two-stage budget; these checkpoints feed the mode comparison."""
    stages = two_stage(SCHEDULE, STAGE1_ITERS, STAGE2_ITERS, THRESHOLD, WINDOW)
    _train(f"{variant}_s{seed}", TrainConfig(env=ENV, stages=stages, variant=variant, seed=seed))


def train_stability(kind, seed):
    """Proposed variant, stopping at the first full window at or above the threshold."""
    if kind == "two_stage" and seed == 0:
        train_variant("proposed", 0)  # its metrics prefix is exactly the early-stopped run
        return
    if kind == "two_stage":
        stages = two_stage(SCHEDULE, STAGE1_ITERS, STAGE2_ITERS, THRESHOLD, WINDOW, stage2_threshold=THRESHOLD)
    else:
        stages = async_only(SCHEDULE, STAGE1_ITERS + STAGE2_ITERS, WINDOW, threshold=THRESHOLD)
    _train(f"{kind}_s{seed}", TrainConfig(env=ENV, stages=stages, seed=seed))


def stability_dir(kind, seed):
    return ROOT / ("proposed_s0" if (kind, seed) == ("two_stage", 0) else f"{kind}_s{seed}")


def evaluate():
    out = ROOT / "eval"
    if (out / "report.json").exists():
        print("eval: cached")
        return
    policies = {"proposed": ROOT / "proposed_s0" / "policy.ckpt", "ideal": ROOT / "proposed_s0" / "policy.ckpt",
                "no_tem": ROOT / "no_tem_s0" / "policy.ckpt",
                "sync_baseline": ROOT / "sync_baseline_s0" / "policy.ckpt"}
    cfg = ExperimentConfig(env=ENV, schedule=SCHEDULE, trials=EVAL_TRIALS, seed=EVAL_SEED, **HARDEST)
    rep = run_modes(cfg, tuple(policies), policies={m: str(p) for m, p in policies.items()})
    rep.write(out)
    print(rep.table())


def summary():
    rep = json.loads((ROOT / "eval" / "report.json").read_text())
    outcomes = {}
    with open(ROOT / "eval" / "episodes.jsonl") as fh:
        for line in fh:
            e = json.loads(line)
            outcomes.setdefault(e["mode"], []).append(e["outcome"] == "success")
    comparisons = {}
    for a, b in (("proposed", "sync_baseline"), ("proposed", "no_tem"), ("ideal", "proposed")):
        n10, n01, p = mcnemar_exact(outcomes[a], outcomes[b])
        comparisons[f"{a}>{b}"] = {"a_only": n10, "b_only": n01, "p": p}
    stability = {}
    for kind in ("two_stage", "async_only"):
        stability[kind] = [iterations_to_threshold(read_metrics(stability_dir(kind, s) / "metrics.jsonl"),
                                                   THRESHOLD, WINDOW) for s in TRAIN_SEEDS]
    doc = {"setting": HARDEST, "trials": EVAL_TRIALS, "eval_seed": EVAL_SEED, "train_seeds": list(TRAIN_SEEDS),
           "budget": STAGE1_ITERS + STAGE2_ITERS,
           "success": {m: s["rates"]["success"] for m, s in rep["modes"].items()},
           "wilson": {m: s["intervals"]["success"] for m, s in rep["modes"].items()},
           "mcnemar": comparisons, "iterations_to_threshold": stability}
    (ROOT / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc, indent=2, sort_keys=True))


def main(argv):
    if not argv:
        print(__doc__)
        return 2
    cmd, rest = argv[0], argv[1:]
    if cmd == "train":
        train_variant(rest[0], int(rest[1]) if len(rest) > 1 else 0)
    elif cmd == "stability":
        train_stability(rest[0], int(rest[1]))
    elif cmd == "eval":
        evaluate()
    elif cmd == "summary":
        summary()
    elif cmd == "all":
        for v in ("proposed", "no_tem", "sync_baseline"):
            train_variant(v)
        evaluate()
        for s in TRAIN_SEEDS:
            for kind in ("two_stage", "async_only"):
                train_stability(kind, s)
        summary()
    else:
        print(__doc__)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
